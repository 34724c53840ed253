//! Plain FixMatch written out directly, independent of the mixing, bank and
//! balance machinery: supervised cross entropy on weak labeled views plus
//! confidence-masked cross entropy of strong unlabeled views against the
//! weak-view argmax. It shares only the primitives (network, augmentation,
//! batch order, optimizer) and the seeding scheme with [`super::Trainer`].

use alloc::vec;
use alloc::vec::Vec;

use super::data::{
    labeled_views, stack, unlabeled_views, EpochSampler, SPLIT_LABELED, SPLIT_UNLABELED,
};
use super::{apply_weight_decay, order_seed, TrainConfig};
use crate::error::{contract, Result};
use crate::rng::{rng_from, Streams};
use crate::synthdata::SynthData;
use crate::tinynn::{self, weighted_softmax_ce, BackboneConfig, BackboneParams, OptimizerState};

/// Per-step FixMatch losses `(L_s + sum_m M_u H(f(A_s(u_m)), q_m)) / B` of
/// the first `steps` steps.
pub fn fixmatch_reference_totals(
    cfg: &TrainConfig,
    data: &SynthData,
    steps: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    contract!(
        steps <= cfg.total_iterations,
        "{steps} steps exceed the schedule"
    );
    let c = cfg.num_classes();
    let b = cfg.batch_size;
    let streams = Streams::new(cfg.seed);
    let config = BackboneConfig::reference(c).with_image_size(data.labeled.images[0].height);
    let mut params = BackboneParams::init(config, &mut rng_from(streams.init));
    let mut opt = OptimizerState::new(
        &params,
        cfg.learning_rate,
        cfg.momentum,
        cfg.total_iterations,
    )?;
    let mut labeled_order =
        EpochSampler::new(data.labeled.len(), order_seed(&streams, SPLIT_LABELED));
    let mut unlabeled_order =
        EpochSampler::new(data.unlabeled.len(), order_seed(&streams, SPLIT_UNLABELED));

    let mut totals = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (xw, labels) =
            labeled_views(&data.labeled, &labeled_order.next_batch(b), streams.augment);
        let (uw, us) = unlabeled_views(
            &data.unlabeled,
            &unlabeled_order.next_batch(b),
            streams.augment,
        );

        let out_l = tinynn::forward(&params, &stack(&xw)?)?;
        let weak = tinynn::forward_inference(&params, &stack(&uw)?)?;
        let mut targets = vec![0usize; b];
        let mut mask = vec![0.0f32; b];
        for m in 0..b {
            let row = weak.probs_row(m);
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            targets[m] = best;
            if row[best] > cfg.tau {
                mask[m] = 1.0;
            }
        }
        let out_u = tinynn::forward(&params, &stack(&us)?)?;

        let (l_s, g_s) = weighted_softmax_ce(&out_l.logits, c, &labels, &vec![1.0; b])?;
        let (l_u, g_u) = weighted_softmax_ce(&out_u.logits, c, &targets, &mask)?;
        totals.push((l_s as f64 + l_u as f64) / b as f64);

        let bf = b as f32;
        let g_s: Vec<f32> = g_s.iter().map(|g| g / bf).collect();
        let g_u: Vec<f32> = g_u.iter().map(|g| g / bf).collect();
        let mut grads = tinynn::backward(&params, &out_l, &g_s)?;
        grads.add_assign(&tinynn::backward(&params, &out_u, &g_u)?);
        apply_weight_decay(&mut grads, &params, cfg.weight_decay);
        tinynn::sgd_step(&mut params, &grads, &mut opt)?;
    }
    Ok(totals)
}
