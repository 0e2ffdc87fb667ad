//! Human-readable step-by-step trace of one transformation.

use std::fmt::Write as _;

use super::transform::{transform, TargetKind, TransformPlan};
use crate::data::Document;
use crate::error::Result;

fn row<T: ToString>(label: &str, items: impl IntoIterator<Item = T>) -> String {
    let cells: Vec<String> = items.into_iter().map(|x| format!("{:>5}", x.to_string())).collect();
    format!("  {label:<10}{}\n", cells.join(""))
}

/// Render the four steps: next-token targets, masking, moving, and the final
/// loss window with its attention prefix. `name` maps token ids to labels.
pub fn trace_transform(
    doc: &Document,
    plan: &TransformPlan,
    mask_id: u32,
    name: impl Fn(u32) -> String,
) -> Result<String> {
    let ex = transform(doc, plan, mask_id)?;
    let n = doc.len();
    let tokens = doc.tokens();
    let masked = |p: usize| plan.mask_positions.contains(&p);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "document {} (n={n}, n_mask={}, n_bidir={}, n_predict={})",
        doc.source_id,
        plan.n_mask(),
        plan.n_bidir,
        plan.n_predict
    );

    let _ = writeln!(out, "step 1: original sequence, predict the next token");
    out += &row("position", 1..=n);
    out += &row("input", tokens.iter().map(|&t| name(t)));
    out += &row("target", (1..=n).map(|p| if p < n { name(tokens[p]) } else { "-".into() }));

    let _ = writeln!(out, "step 2: mask {:?}, masked slots predict themselves", plan.mask_positions);
    out += &row(
        "input",
        (1..=n).map(|p| if masked(p) { name(mask_id) } else { name(tokens[p - 1]) }),
    );
    out += &row(
        "target",
        (1..=n).map(|p| {
            if masked(p) {
                format!("{}*", name(tokens[p - 1]))
            } else if p < n {
                name(tokens[p])
            } else {
                "-".into()
            }
        }),
    );

    let _ = writeln!(out, "step 3: move masked slots and their positions to the end");
    out += &row("position", ex.slots.iter().map(|s| s.position));
    out += &row("input", ex.slots.iter().map(|s| name(s.input)));

    let _ = writeln!(
        out,
        "step 4: loss on the last {} slots, bidirectional attention over the first {}",
        plan.n_predict, plan.n_bidir
    );
    out += &row(
        "target",
        ex.targets.iter().map(|t| match t {
            None => "-".to_string(),
            Some(t) if t.kind == TargetKind::Mask => format!("{}*", name(t.token)),
            Some(t) => name(t.token),
        }),
    );
    let spec = ex.attention_spec();
    let _ = writeln!(out, "  attention (row attends column):");
    for i in 1..=n {
        let cells: String = (1..=n)
            .map(|j| if spec.allowed(i, j).unwrap_or(false) { " x" } else { " ." })
            .collect();
        let _ = writeln!(out, "  {i:>8}{cells}");
    }
    let (next, mask) = ex.count_loss_slots();
    let _ = writeln!(out, "loss slots: {next} next-token, {mask} masked");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_mentions_every_step() {
        let doc = Document::new(vec![5, 9, 2, 7, 4, 1], 1, "d").unwrap();
        let plan = TransformPlan::new(6, vec![2, 4], 0, 6).unwrap();
        let text = trace_transform(&doc, &plan, 0, |t| match t {
            0 => "M".into(),
            1 => "</s>".into(),
            t => t.to_string(),
        })
        .unwrap();
        for step in ["step 1", "step 2", "step 3", "step 4"] {
            assert!(text.contains(step));
        }
        assert!(text.contains("3 next-token, 2 masked"));
    }
}
