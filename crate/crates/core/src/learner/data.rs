//! Batch composition: epoch-wise shuffled index streams and the augmented
//! views of each drawn sample.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::rng::{derive, rng_from};
use crate::synthdata::{
    sample_strong, sample_weak, strong_aug_with, weak_aug_with, LabeledSet, UnlabeledSet,
};
use crate::tensor::{Image, Tensor4};

/// Split tags of the augmentation and order substreams.
pub const SPLIT_LABELED: u64 = 0;
pub const SPLIT_UNLABELED: u64 = 1;

/// One drawn sample: its index and the epoch it was drawn in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub epoch: u64,
    pub index: usize,
}

/// Visits a split in a fresh random order every epoch; batches wrap across
/// epoch boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSampler {
    pub len: usize,
    pub seed: u64,
    pub epoch: u64,
    /// Position within the current epoch's order.
    pub cursor: usize,
    order: Vec<usize>,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self::restore(len, seed, 0, 0)
    }

    /// Rebuilds a sampler from its persisted position.
    pub fn restore(len: usize, seed: u64, epoch: u64, cursor: usize) -> Self {
        let mut s = EpochSampler {
            len,
            seed,
            epoch,
            cursor,
            order: Vec::new(),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order
            .shuffle(&mut rng_from(derive(self.seed, &[self.epoch])));
    }

    pub fn next_batch(&mut self, batch: usize) -> Vec<Draw> {
        let mut out = Vec::with_capacity(batch);
        if self.len == 0 {
            return out;
        }
        while out.len() < batch {
            if self.cursor == self.len {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push(Draw {
                epoch: self.epoch,
                index: self.order[self.cursor],
            });
            self.cursor += 1;
        }
        out
    }
}

fn view_seed(aug_seed: u64, split: u64, d: Draw) -> u64 {
    derive(aug_seed, &[split, d.epoch, d.index as u64])
}

/// Weak views and labels of the drawn labeled samples.
pub fn labeled_views(set: &LabeledSet, draws: &[Draw], aug_seed: u64) -> (Vec<Image>, Vec<usize>) {
    draws
        .iter()
        .map(|&d| {
            let mut rng = rng_from(view_seed(aug_seed, SPLIT_LABELED, d));
            (
                weak_aug_with(&set.images[d.index], sample_weak(&mut rng)),
                set.labels[d.index],
            )
        })
        .unzip()
}

/// Weak and strong views of the drawn unlabeled samples.
pub fn unlabeled_views(
    set: &UnlabeledSet,
    draws: &[Draw],
    aug_seed: u64,
) -> (Vec<Image>, Vec<Image>) {
    draws
        .iter()
        .map(|&d| {
            let image = &set.images[d.index];
            let mut rng = rng_from(view_seed(aug_seed, SPLIT_UNLABELED, d));
            let weak = weak_aug_with(image, sample_weak(&mut rng));
            let strong = strong_aug_with(image, sample_strong(image.height, &mut rng));
            (weak, strong)
        })
        .unzip()
}

pub fn stack(images: &[Image]) -> Result<Tensor4> {
    Tensor4::from_images(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_epoch_visits_each_index_once() {
        let mut s = EpochSampler::new(10, 7);
        let draws = s.next_batch(25);
        for epoch in 0..2 {
            let mut seen: Vec<usize> = draws
                .iter()
                .filter(|d| d.epoch == epoch)
                .map(|d| d.index)
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(draws.iter().filter(|d| d.epoch == 2).count(), 5);
        assert_eq!((s.epoch, s.cursor), (2, 5));
    }

    #[test]
    fn restore_continues_the_same_stream() {
        let mut a = EpochSampler::new(7, 3);
        a.next_batch(9);
        let mut b = EpochSampler::restore(7, 3, a.epoch, a.cursor);
        assert_eq!(a.next_batch(12), b.next_batch(12));
        assert_ne!(
            EpochSampler::new(7, 3).order,
            EpochSampler::restore(7, 3, 1, 0).order
        );
    }
}
