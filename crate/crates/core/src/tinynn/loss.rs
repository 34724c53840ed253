use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// Numerically stable softmax over each `classes`-wide row.
pub fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f32> {
    let mut probs = vec![0.0f32; logits.len()];
    for (row, out) in logits
        .chunks_exact(classes)
        .zip(probs.chunks_exact_mut(classes))
    {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &l) in out.iter_mut().zip(row) {
            *o = libm::expf(l - max);
            sum += *o;
        }
        let inv = 1.0 / sum;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
    probs
}

/// Weighted sum of per-row cross entropies and its gradient w.r.t. the logits.
///
/// `loss = sum_m w[m] * -ln softmax(logits[m])[t[m]]` and
/// `grad[m] = w[m] * (softmax(logits[m]) - onehot(t[m]))`. Rows with zero
/// weight are skipped entirely. Rows are accumulated in order, in `f32`.
pub fn weighted_softmax_ce(
    logits: &[f32],
    classes: usize,
    targets: &[usize],
    weights: &[f32],
) -> Result<(f32, Vec<f32>)> {
    let batch = targets.len();
    contract!(
        logits.len() == batch * classes && weights.len() == batch,
        "logits ({}), targets ({batch}) and weights ({}) disagree for {classes} classes",
        logits.len(),
        weights.len()
    );
    let mut grads = vec![0.0f32; logits.len()];
    let mut loss = 0.0f32;
    for m in 0..batch {
        let w = weights[m];
        let t = targets[m];
        contract!(w >= 0.0, "negative loss weight {w} at row {m}");
        contract!(t < classes, "target {t} out of range at row {m}");
        if w == 0.0 {
            continue;
        }
        let row = &logits[m * classes..(m + 1) * classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        let g = &mut grads[m * classes..(m + 1) * classes];
        for (gi, &l) in g.iter_mut().zip(row) {
            *gi = libm::expf(l - max);
            sum += *gi;
        }
        let ce = max + libm::logf(sum) - row[t];
        loss += w * ce;
        let inv = 1.0 / sum;
        for gi in g.iter_mut() {
            *gi *= inv;
        }
        g[t] -= 1.0;
        for gi in g.iter_mut() {
            *gi *= w;
        }
    }
    Ok((loss, grads))
}
