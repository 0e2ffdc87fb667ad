//! The generalized objective: variant sampling, the mask-and-move
//! transformation, loss slots, packing and the attention predicate.

mod attention;
mod pack;
pub mod record;
mod trace;
mod transform;
mod variant;

pub use attention::{attention_allowed, AttentionMask, AttentionSpec, DocSpan};
pub use pack::{pack, PackedBatch, PackedSequence, Packer};
pub use trace::trace_transform;
pub use transform::{transform, Slot, Target, TargetKind, TransformPlan, TransformedExample};
pub use variant::{
    sample_plan, sample_plan_draw, BidirRule, PlanDraw, PredictRule, Variant, VariantSpec, FALLBACK_PROB,
    MASK_RATE,
};
