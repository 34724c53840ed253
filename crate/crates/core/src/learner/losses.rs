use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::evalkit::LossBreakdown;
use crate::tinynn::{argmax, weighted_softmax_ce};
use crate::Origin;

/// Pseudo labels of a batch of weak-view predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    /// Argmax class per row (ties to the lowest index).
    pub classes: Vec<usize>,
    /// Probability of that class.
    pub confidence: Vec<f32>,
    /// `M_u`: confidence strictly above the threshold.
    pub mask: Vec<bool>,
}

pub fn pseudo_label(probs: &[f32], classes: usize, tau: f32) -> PseudoLabels {
    let rows = probs.len() / classes;
    let mut out = PseudoLabels {
        classes: Vec::with_capacity(rows),
        confidence: Vec::with_capacity(rows),
        mask: Vec::with_capacity(rows),
    };
    for row in probs.chunks_exact(classes) {
        let q = argmax(row);
        out.classes.push(q);
        out.confidence.push(row[q]);
        out.mask.push(row[q] > tau);
    }
    out
}

/// `logits[m, c] + tau_la * ln(prior[c])`.
pub fn logit_adjust(logits: &[f32], prior: &[f64], tau_la: f32) -> Result<Vec<f32>> {
    let classes = prior.len();
    contract!(
        classes > 0 && logits.len() % classes == 0,
        "logits do not match a {classes}-class prior"
    );
    if let Some(c) = prior.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Contract(alloc::format!(
            "prior entry {c} is not positive"
        )));
    }
    let shift: Vec<f32> = prior
        .iter()
        .map(|&p| tau_la * libm::log(p) as f32)
        .collect();
    Ok(logits
        .chunks_exact(classes)
        .flat_map(|row| row.iter().zip(&shift).map(|(l, s)| l + s))
        .collect())
}

/// The target carried by the pasted region of a mixed sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PastedTarget {
    pub class: usize,
    pub origin: Origin,
    /// Confidence of `class` when the source was stored (1 for labels).
    pub confidence: f32,
}

/// Everything the five-term loss needs for one step.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub classes: usize,
    /// Supervised logits (already logit-adjusted when enabled).
    pub labeled_logits: &'a [f32],
    pub labels: &'a [usize],
    /// Logits of the mixed strong views `u'`.
    pub mixed_logits: &'a [f32],
    pub pseudo: &'a PseudoLabels,
    /// `M_h` / `M_l` per unlabeled sample.
    pub high: &'a [bool],
    pub low: &'a [bool],
    /// `None` where the sample passed through unmixed.
    pub pasted: &'a [Option<PastedTarget>],
    /// Per-class weight of the pseudo-label terms (`ŝ^u`, possibly scaled).
    pub class_weights: &'a [f32],
    pub lambda: f32,
    pub tau: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// Gradient of `total` w.r.t. the supervised logits.
    pub labeled_grads: Vec<f32>,
    /// Gradient of `total` w.r.t. the mixed logits.
    pub mixed_grads: Vec<f32>,
}

/// The five loss terms as raw batch sums, their composite
/// `(L_s + λ(L_u^h + L_u^l) + (1 − λ)(L_us^h + L_us^l)) / B` and its
/// gradients, where `B` is the labeled batch size.
pub fn bem_losses(inp: &LossInputs<'_>) -> Result<LossOutput> {
    let c = inp.classes;
    let b = inp.labels.len();
    let bu = inp.pseudo.classes.len();
    contract!(b > 0, "empty labeled batch");
    contract!(
        inp.high.len() == bu && inp.low.len() == bu && inp.pasted.len() == bu,
        "per-sample masks and pasted targets must cover all {bu} unlabeled samples"
    );
    contract!(
        inp.class_weights.len() == c,
        "need one loss weight per class"
    );
    contract!(
        (0.0..=1.0).contains(&inp.lambda),
        "lambda {} outside [0, 1]",
        inp.lambda
    );

    let ones = alloc::vec![1.0f32; b];
    let (l_s, g_s) = weighted_softmax_ce(inp.labeled_logits, c, inp.labels, &ones)?;

    let q = &inp.pseudo.classes;
    let w_of = |m: usize, gate: bool| if gate { inp.class_weights[q[m]] } else { 0.0 };
    let w_uh: Vec<f32> = (0..bu)
        .map(|m| w_of(m, inp.pseudo.mask[m] && inp.high[m]))
        .collect();
    let w_ul: Vec<f32> = (0..bu)
        .map(|m| w_of(m, inp.pseudo.mask[m] && inp.low[m]))
        .collect();
    let (l_u_h, g_uh) = weighted_softmax_ce(inp.mixed_logits, c, q, &w_uh)?;
    let (l_u_l, g_ul) = weighted_softmax_ce(inp.mixed_logits, c, q, &w_ul)?;

    // pasted-region targets: the source's label or stored pseudo label
    let pasted_class: Vec<usize> = inp
        .pasted
        .iter()
        .map(|p| p.map_or(0, |p| p.class))
        .collect();
    let w_ush: Vec<f32> = (0..bu)
        .map(|m| match inp.pasted[m] {
            Some(_) if inp.high[m] => 1.0,
            _ => 0.0,
        })
        .collect();
    let w_usl: Vec<f32> = (0..bu)
        .map(|m| match inp.pasted[m] {
            Some(p) if inp.low[m] && p.confidence > inp.tau => inp.class_weights[p.class],
            _ => 0.0,
        })
        .collect();
    let (l_us_h, g_ush) = weighted_softmax_ce(inp.mixed_logits, c, &pasted_class, &w_ush)?;
    let (l_us_l, g_usl) = weighted_softmax_ce(inp.mixed_logits, c, &pasted_class, &w_usl)?;

    let lam = inp.lambda;
    let rest = 1.0 - lam;
    let bf = b as f32;
    let labeled_grads = g_s.iter().map(|g| g / bf).collect();
    let mixed_grads = (0..g_uh.len())
        .map(|i| (lam * (g_uh[i] + g_ul[i]) + rest * (g_ush[i] + g_usl[i])) / bf)
        .collect();
    Ok(LossOutput {
        breakdown: LossBreakdown::new(
            l_s as f64,
            l_u_h as f64,
            l_u_l as f64,
            l_us_h as f64,
            l_us_l as f64,
            lam as f64,
            b,
        ),
        labeled_grads,
        mixed_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pseudo_label_examples() {
        let p = pseudo_label(&[0.98, 0.02, 0.5, 0.5, 0.1, 0.9], 2, 0.95);
        assert_eq!(p.classes, [0, 0, 1]);
        assert_eq!(p.mask, [true, false, false]);
        assert_eq!(p.confidence, [0.98, 0.5, 0.9]);
        let uniform = pseudo_label(&[0.1; 10], 10, 0.95);
        assert_eq!(uniform.mask, [false]);
    }

    #[test]
    fn logit_adjust_examples() {
        let adj = logit_adjust(&[0.0, 0.0], &[0.9, 0.1], 1.0).unwrap();
        assert!((adj[0] - -0.10536).abs() < 1e-5 && (adj[1] - -2.30259).abs() < 1e-5);
        let logits = [0.3, -1.0, 2.0, 0.5, 0.1, 0.2];
        assert_eq!(logit_adjust(&logits, &[0.5, 0.5], 0.0).unwrap(), logits);
        let shifted = logit_adjust(&logits, &[1.0 / 3.0; 3], 1.0).unwrap();
        for (a, b) in logits.chunks(3).zip(shifted.chunks(3)) {
            assert_eq!(argmax(a), argmax(b));
        }
        assert!(logit_adjust(&logits, &[1.0, 0.0, 0.0], 1.0).is_err());
    }

    /// Two-class logits `[d, 0]` whose cross entropy against class 0,
    /// `ln(1 + e^-d)`, equals 1 up to f32 rounding.
    fn logits_with_ce_one() -> [f32; 2] {
        let d = -libm::logf(libm::expf(1.0) - 1.0);
        [d, 0.0]
    }

    #[test]
    fn composite_single_sample_example() {
        let logits = logits_with_ce_one();
        let pseudo = PseudoLabels {
            classes: vec![0],
            confidence: vec![0.99],
            mask: vec![true],
        };
        // L_s = 0 via a perfectly confident labeled logit
        let labeled = [100.0f32, -100.0];
        let out = bem_losses(&LossInputs {
            classes: 2,
            labeled_logits: &labeled,
            labels: &[0],
            mixed_logits: &logits,
            pseudo: &pseudo,
            high: &[true],
            low: &[false],
            pasted: &[Some(PastedTarget {
                class: 0,
                origin: Origin::Labeled,
                confidence: 1.0,
            })],
            class_weights: &[0.1, 0.9],
            lambda: 0.6,
            tau: 0.95,
        })
        .unwrap();
        let l = out.breakdown;
        assert_eq!(l.l_s, 0.0);
        assert!((l.total - 0.46).abs() < 1e-6, "{l:?}");
        assert_eq!(l.total, l.recomputed_total());
    }

    #[test]
    fn gated_off_batch_reduces_to_supervised_loss() {
        let pseudo = PseudoLabels {
            classes: vec![1, 0],
            confidence: vec![0.5, 0.6],
            mask: vec![false, false],
        };
        let labeled = [0.2f32, 0.1, -0.3, 0.4];
        let out = bem_losses(&LossInputs {
            classes: 2,
            labeled_logits: &labeled,
            labels: &[0, 1],
            mixed_logits: &[1.0, 2.0, 3.0, 4.0],
            pseudo: &pseudo,
            high: &[true, false],
            low: &[false, true],
            pasted: &[None, None],
            class_weights: &[1.0, 1.0],
            lambda: 1.0,
            tau: 0.95,
        })
        .unwrap();
        assert_eq!(out.breakdown.total, out.breakdown.l_s / 2.0);
        assert!(out.mixed_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn masks_route_each_sample_to_one_path() {
        let pseudo = PseudoLabels {
            classes: vec![0, 1, 2],
            confidence: vec![0.99; 3],
            mask: vec![true; 3],
        };
        let mixed = [0.5f32, 0.1, 0.2, 0.3, 0.9, 0.0, 0.0, 0.0, 1.0];
        let pasted = [
            Some(PastedTarget {
                class: 1,
                origin: Origin::Labeled,
                confidence: 1.0,
            }),
            Some(PastedTarget {
                class: 2,
                origin: Origin::Unlabeled,
                confidence: 0.97,
            }),
            Some(PastedTarget {
                class: 0,
                origin: Origin::Unlabeled,
                confidence: 0.5,
            }),
        ];
        let out = bem_losses(&LossInputs {
            classes: 3,
            labeled_logits: &[0.0; 3],
            labels: &[0],
            mixed_logits: &mixed,
            pseudo: &pseudo,
            high: &[true, false, false],
            low: &[false, true, true],
            pasted: &pasted,
            class_weights: &[1.0, 2.0, 3.0],
            lambda: 0.5,
            tau: 0.95,
        })
        .unwrap();
        let ce = |row: &[f32], t: usize| {
            let (l, _) = weighted_softmax_ce(row, 3, &[t], &[1.0]).unwrap();
            l as f64
        };
        let l = out.breakdown;
        assert!((l.l_u_h - ce(&mixed[0..3], 0)).abs() < 1e-6);
        assert!((l.l_u_l - (2.0 * ce(&mixed[3..6], 1) + 3.0 * ce(&mixed[6..9], 2))).abs() < 1e-5);
        assert!((l.l_us_h - ce(&mixed[0..3], 1)).abs() < 1e-6);
        // the third source is below the confidence threshold and gated off
        assert!((l.l_us_l - 3.0 * ce(&mixed[3..6], 2)).abs() < 1e-5);
    }
}
