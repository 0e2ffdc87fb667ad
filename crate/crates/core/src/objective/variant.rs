use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transform::TransformPlan;
use crate::error::{Error, Result};

/// The six named parameterizations of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    NxtUni,
    NxtPre,
    MskUni,
    MskBi,
    HybUni,
    HybPre,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NxtUni,
        Variant::NxtPre,
        Variant::MskUni,
        Variant::MskBi,
        Variant::HybUni,
        Variant::HybPre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NxtUni => "NxtUni",
            Variant::NxtPre => "NxtPre",
            Variant::MskUni => "MskUni",
            Variant::MskBi => "MskBi",
            Variant::HybUni => "HybUni",
            Variant::HybPre => "HybPre",
        }
    }

    pub fn spec(self) -> VariantSpec {
        VariantSpec::from(self)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}`, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BidirRule {
    Zero,
    Full,
    /// Discrete uniform over `1..=n`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictRule {
    All,
    NMask,
    NMinusBidir,
    /// `max(n - n_bidir, n_mask)`
    MaxOfSuffixAndMask,
}

impl PredictRule {
    pub fn apply(self, n: usize, n_mask: usize, n_bidir: usize) -> usize {
        match self {
            PredictRule::All => n,
            PredictRule::NMask => n_mask,
            PredictRule::NMinusBidir => n - n_bidir,
            PredictRule::MaxOfSuffixAndMask => (n - n_bidir).max(n_mask),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Per-position Bernoulli masking probability (non-EOS positions only).
    pub mask_rate: f64,
    pub bidir_rule: BidirRule,
    pub predict_rule: PredictRule,
    /// Probability of replacing a draw with plain next-token prediction.
    pub fallback_prob: f64,
    /// Redraw mask sets until at least one position is masked.
    pub require_mask: bool,
}

pub const MASK_RATE: f64 = 0.15;
pub const FALLBACK_PROB: f64 = 0.1;

impl From<Variant> for VariantSpec {
    fn from(variant: Variant) -> Self {
        use BidirRule::*;
        use PredictRule::*;
        let (mask_rate, bidir_rule, predict_rule, fallback_prob) = match variant {
            Variant::NxtUni => (0.0, Zero, All, 0.0),
            Variant::NxtPre => (0.0, Uniform, NMinusBidir, FALLBACK_PROB),
            Variant::MskUni => (MASK_RATE, Zero, NMask, 0.0),
            Variant::MskBi => (MASK_RATE, Full, NMask, 0.0),
            Variant::HybUni => (MASK_RATE, Zero, All, FALLBACK_PROB),
            Variant::HybPre => (MASK_RATE, Uniform, MaxOfSuffixAndMask, FALLBACK_PROB),
        };
        VariantSpec {
            variant,
            mask_rate,
            bidir_rule,
            predict_rule,
            fallback_prob,
            require_mask: predict_rule == NMask,
        }
    }
}

/// Outcome of one draw, exposing whether the fallback fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanDraw {
    pub plan: TransformPlan,
    pub fell_back: bool,
}

/// Draw a plan for a document of `n` tokens (the last one being EOS).
pub fn sample_plan<R: Rng + ?Sized>(spec: &VariantSpec, n: usize, rng: &mut R) -> Result<TransformPlan> {
    sample_plan_draw(spec, n, rng).map(|d| d.plan)
}

pub fn sample_plan_draw<R: Rng + ?Sized>(spec: &VariantSpec, n: usize, rng: &mut R) -> Result<PlanDraw> {
    if n < 2 {
        return Err(Error::DocumentTooShort(n));
    }
    let fell_back = spec.fallback_prob > 0.0 && rng.random::<f64>() < spec.fallback_prob;
    let (mask_positions, n_bidir) = if fell_back {
        (Vec::new(), 0)
    } else {
        let mut masks = Vec::new();
        if spec.mask_rate > 0.0 {
            loop {
                masks.clear();
                masks.extend((1..n).filter(|_| rng.random::<f64>() < spec.mask_rate));
                if !(spec.require_mask && masks.is_empty()) {
                    break;
                }
            }
        }
        let n_bidir = match spec.bidir_rule {
            BidirRule::Zero => 0,
            BidirRule::Full => n,
            BidirRule::Uniform => rng.random_range(1..=n),
        };
        (masks, n_bidir)
    };
    let n_predict = spec.predict_rule.apply(n, mask_positions.len(), n_bidir);
    let plan = TransformPlan::new(n, mask_positions, n_bidir, n_predict)?;
    Ok(PlanDraw { plan, fell_back })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nxtuni_is_plain_language_modeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = sample_plan(&Variant::NxtUni.spec(), 6, &mut rng).unwrap();
        assert_eq!((plan.n_mask(), plan.n_bidir, plan.n_predict), (0, 0, 6));
    }

    #[test]
    fn predict_rules_match_the_variant_table() {
        assert_eq!(PredictRule::NMinusBidir.apply(6, 0, 3), 3);
        assert_eq!(PredictRule::MaxOfSuffixAndMask.apply(6, 2, 5), 2);
        assert_eq!(PredictRule::MaxOfSuffixAndMask.apply(6, 1, 2), 4);
        assert_eq!(PredictRule::All.apply(6, 2, 0), 6);
        assert_eq!(PredictRule::NMask.apply(6, 2, 6), 2);
    }

    #[test]
    fn fallback_yields_next_token_prediction() {
        let mut spec = Variant::HybUni.spec();
        spec.fallback_prob = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = sample_plan_draw(&spec, 6, &mut rng).unwrap();
        assert!(draw.fell_back);
        assert_eq!((draw.plan.n_mask(), draw.plan.n_bidir, draw.plan.n_predict), (0, 0, 6));

        let mut spec = Variant::HybPre.spec();
        spec.fallback_prob = 1.0;
        let plan = sample_plan(&spec, 9, &mut rng).unwrap();
        assert_eq!((plan.n_mask(), plan.n_bidir, plan.n_predict), (0, 0, 9));
    }

    #[test]
    fn masked_only_variants_always_mask_something() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            for v in [Variant::MskUni, Variant::MskBi] {
                let plan = sample_plan(&v.spec(), 2, &mut rng).unwrap();
                assert_eq!(plan.mask_positions, vec![1]);
                assert_eq!(plan.n_predict, 1);
            }
        }
    }

    #[test]
    fn eos_is_never_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = Variant::HybUni.spec();
        spec.mask_rate = 0.99;
        spec.fallback_prob = 0.0;
        for _ in 0..100 {
            let plan = sample_plan(&spec, 5, &mut rng).unwrap();
            assert!(plan.mask_positions.iter().all(|&p| p < 5));
        }
    }

    #[test]
    fn short_documents_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sample_plan(&Variant::NxtUni.spec(), 1, &mut rng).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        let err = "BERT".parse::<Variant>().unwrap_err();
        assert!(err.contains("NxtUni") && err.contains("HybPre"));
    }
}
