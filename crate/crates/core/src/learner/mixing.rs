//! In-batch MixUp and CutMix: each sample is paired with a random
//! permutation partner of the same batch.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::cammix::BBox;
use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct InBatchMix {
    pub images: Tensor4,
    /// Sample `m` was mixed with sample `partner[m]`.
    pub partner: Vec<usize>,
    /// Weight of each sample's own target.
    pub lambda: f32,
}

fn permutation(batch: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..batch).collect();
    perm.shuffle(rng);
    perm
}

/// `lambda * x[m] + (1 - lambda) * x[partner[m]]` with the given pairing.
pub fn mixup_with(batch: &Tensor4, partner: Vec<usize>, lambda: f32) -> Result<InBatchMix> {
    contract!(
        partner.len() == batch.batch(),
        "partner list does not cover the batch"
    );
    contract!(
        (0.0..=1.0).contains(&lambda),
        "lambda {lambda} outside [0, 1]"
    );
    let mut images = batch.clone();
    for (m, &p) in partner.iter().enumerate() {
        for (o, s) in images.sample_mut(m).iter_mut().zip(batch.sample(p)) {
            *o = lambda * *o + (1.0 - lambda) * s;
        }
    }
    Ok(InBatchMix {
        images,
        partner,
        lambda,
    })
}

/// MixUp with `lambda ~ Beta(1, 1)` and a random pairing.
pub fn mixup_batch(batch: &Tensor4, rng: &mut Rng) -> Result<InBatchMix> {
    contract!(
        batch.batch() >= 2,
        "in-batch mixing needs at least 2 samples"
    );
    let lambda = rng.gen_range(0.0f32..=1.0);
    let partner = permutation(batch.batch(), rng);
    mixup_with(batch, partner, lambda)
}

/// Pastes `bbox` (possibly empty) of every partner into its sample; the
/// reported `lambda` is exactly one minus the box's area ratio.
pub fn cutmix_with(batch: &Tensor4, partner: Vec<usize>, bbox: BBox) -> Result<InBatchMix> {
    let [_, channels, height, width] = batch.shape();
    contract!(
        partner.len() == batch.batch(),
        "partner list does not cover the batch"
    );
    contract!(
        bbox.x0 <= bbox.x1 && bbox.x1 <= width && bbox.y0 <= bbox.y1 && bbox.y1 <= height,
        "box {bbox:?} outside {height}x{width}"
    );
    let mut images = batch.clone();
    for (m, &p) in partner.iter().enumerate() {
        let src = batch.sample(p);
        let dst = images.sample_mut(m);
        for c in 0..channels {
            for y in bbox.y0..bbox.y1 {
                let row = (c * height + y) * width;
                dst[row + bbox.x0..row + bbox.x1]
                    .copy_from_slice(&src[row + bbox.x0..row + bbox.x1]);
            }
        }
    }
    let ratio = bbox.area() as f32 / (height * width) as f32;
    Ok(InBatchMix {
        images,
        partner,
        lambda: 1.0 - ratio,
    })
}

/// CutMix with a box of target area `1 - lambda`, `lambda ~ Beta(1, 1)`,
/// centred uniformly and clipped to the image.
pub fn cutmix_batch(batch: &Tensor4, rng: &mut Rng) -> Result<InBatchMix> {
    contract!(
        batch.batch() >= 2,
        "in-batch mixing needs at least 2 samples"
    );
    let [_, _, height, width] = batch.shape();
    let lambda = rng.gen_range(0.0f32..=1.0);
    let cut = libm::sqrtf(1.0 - lambda);
    let ch = libm::roundf(height as f32 * cut) as i64;
    let cw = libm::roundf(width as f32 * cut) as i64;
    let cy = rng.gen_range(0..height as i64);
    let cx = rng.gen_range(0..width as i64);
    let bbox = BBox {
        y0: (cy - ch / 2).clamp(0, height as i64) as usize,
        y1: (cy + ch - ch / 2).clamp(0, height as i64) as usize,
        x0: (cx - cw / 2).clamp(0, width as i64) as usize,
        x1: (cx + cw - cw / 2).clamp(0, width as i64) as usize,
    };
    let partner = permutation(batch.batch(), rng);
    cutmix_with(batch, partner, bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use alloc::vec;

    fn batch() -> Tensor4 {
        let data = (0..2 * 3 * 4 * 4).map(|i| (i % 17) as f32 / 17.0).collect();
        Tensor4::from_vec([2, 3, 4, 4], data).unwrap()
    }

    #[test]
    fn mixup_lambda_one_is_identity_and_half_is_average() {
        let b = batch();
        assert_eq!(mixup_with(&b, vec![1, 0], 1.0).unwrap().images, b);
        let half = mixup_with(&b, vec![1, 0], 0.5).unwrap();
        for (i, v) in half.images.sample(0).iter().enumerate() {
            assert_eq!(*v, 0.5 * b.sample(0)[i] + 0.5 * b.sample(1)[i]);
        }
    }

    #[test]
    fn cutmix_reports_one_minus_area_ratio() {
        let b = batch();
        let bbox = BBox {
            y0: 1,
            y1: 3,
            x0: 0,
            x1: 2,
        };
        let out = cutmix_with(&b, vec![1, 0], bbox).unwrap();
        assert_eq!(out.lambda, 1.0 - 4.0 / 16.0);
        let empty = BBox {
            y0: 0,
            y1: 0,
            x0: 0,
            x1: 0,
        };
        assert_eq!(cutmix_with(&b, vec![1, 0], empty).unwrap().images, b);
        // pixels come from exactly one of the pair
        for (i, v) in out.images.sample(0).iter().enumerate() {
            assert!(*v == b.sample(0)[i] || *v == b.sample(1)[i]);
        }
    }

    #[test]
    fn random_batches_are_consistent() {
        let b = batch();
        let mut rng = rng_from(3);
        for _ in 0..50 {
            let m = cutmix_batch(&b, &mut rng).unwrap();
            let changed = (0..b.sample(0).len())
                .filter(|&i| m.images.sample(0)[i] != b.sample(0)[i])
                .count();
            assert!(changed as f32 <= (1.0 - m.lambda) * 48.0 + 1e-3);
            let mut sorted = m.partner.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, [0, 1]);
            let u = mixup_batch(&b, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&u.lambda));
        }
        let single = Tensor4::zeros([1, 3, 4, 4]);
        assert!(mixup_batch(&single, &mut rng).is_err());
    }
}
