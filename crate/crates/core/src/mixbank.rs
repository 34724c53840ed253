//! The class balanced mix bank: bounded per-class FIFO buckets of recent
//! labeled samples and confidently pseudo-labeled unlabeled samples, drawn
//! from class-first with caller-supplied class probabilities.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{contract, Result};
use crate::rng::{categorical, Rng};
use crate::tensor::Image;
use crate::Origin;

/// Default bucket capacity (per class, per origin).
pub const DEFAULT_CAPACITY: usize = 128;

/// One stored sample: its weak view, its (pseudo-)label, and the confidence
/// of that label when it was stored (1 for labeled samples).
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub image: Image,
    pub class: usize,
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixBank {
    pub capacity: usize,
    pub labeled: Vec<VecDeque<BankEntry>>,
    pub unlabeled: Vec<VecDeque<BankEntry>>,
}

impl MixBank {
    pub fn new(num_classes: usize, capacity: usize) -> Self {
        MixBank {
            capacity,
            labeled: (0..num_classes).map(|_| VecDeque::new()).collect(),
            unlabeled: (0..num_classes).map(|_| VecDeque::new()).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labeled.len()
    }

    pub fn buckets(&self, origin: Origin) -> &[VecDeque<BankEntry>] {
        match origin {
            Origin::Labeled => &self.labeled,
            Origin::Unlabeled => &self.unlabeled,
        }
    }

    fn buckets_mut(&mut self, origin: Origin) -> &mut [VecDeque<BankEntry>] {
        match origin {
            Origin::Labeled => &mut self.labeled,
            Origin::Unlabeled => &mut self.unlabeled,
        }
    }

    /// Appends `entry` to the bucket of its class, evicting the oldest entry
    /// of a full bucket.
    pub fn push(&mut self, entry: BankEntry, origin: Origin) -> Result<()> {
        let classes = self.num_classes();
        contract!(
            entry.class < classes,
            "bank class {} out of range {classes}",
            entry.class
        );
        let capacity = self.capacity;
        let bucket = &mut self.buckets_mut(origin)[entry.class];
        if capacity == 0 {
            return Ok(());
        }
        if bucket.len() == capacity {
            bucket.pop_front();
        }
        bucket.push_back(entry);
        Ok(())
    }

    pub fn lengths(&self, origin: Origin) -> Vec<usize> {
        self.buckets(origin).iter().map(VecDeque::len).collect()
    }

    pub fn is_empty(&self, origin: Origin) -> bool {
        self.buckets(origin).iter().all(VecDeque::is_empty)
    }

    /// Draws a class from `class_probs` restricted to the non-empty buckets
    /// of `origin`, then an entry uniformly within that bucket. `None` when
    /// no bucket of `origin` has an entry with positive probability.
    pub fn draw(&self, class_probs: &[f64], origin: Origin, rng: &mut Rng) -> Option<&BankEntry> {
        let buckets = self.buckets(origin);
        let weights: Vec<f64> = buckets
            .iter()
            .zip(class_probs)
            .map(|(b, &p)| if b.is_empty() { 0.0 } else { p })
            .collect();
        let class = categorical(&weights, rng)?;
        let bucket = &buckets[class];
        Some(&bucket[rng.gen_range(0..bucket.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    fn entry(class: usize, tag: f32) -> BankEntry {
        BankEntry {
            image: Image::filled(1, 2, 2, tag),
            class,
            confidence: 1.0,
        }
    }

    #[test]
    fn fifo_eviction_keeps_latest() {
        let mut bank = MixBank::new(2, 2);
        for tag in [1.0, 2.0, 3.0] {
            bank.push(entry(0, tag), Origin::Labeled).unwrap();
        }
        let tags: Vec<f32> = bank.labeled[0].iter().map(|e| e.image.data[0]).collect();
        assert_eq!(tags, [2.0, 3.0]);
        assert!(bank.is_empty(Origin::Unlabeled));
        assert!(bank.push(entry(2, 0.0), Origin::Labeled).is_err());
    }

    #[test]
    fn draw_restricts_to_non_empty_buckets() {
        let mut rng = rng_from(1);
        let mut bank = MixBank::new(2, 4);
        assert!(bank.draw(&[0.5, 0.5], Origin::Labeled, &mut rng).is_none());
        bank.push(entry(1, 0.0), Origin::Labeled).unwrap();
        for _ in 0..200 {
            assert_eq!(
                bank.draw(&[0.9, 0.1], Origin::Labeled, &mut rng)
                    .unwrap()
                    .class,
                1
            );
        }
        assert!(bank
            .draw(&[0.5, 0.5], Origin::Unlabeled, &mut rng)
            .is_none());
    }

    #[test]
    fn uniform_probabilities_give_uniform_class_frequencies() {
        let mut rng = rng_from(2);
        let mut bank = MixBank::new(5, 3);
        for c in 0..5 {
            for k in 0..=c.min(2) {
                bank.push(entry(c, k as f32), Origin::Unlabeled).unwrap();
            }
        }
        let mut counts = [0usize; 5];
        for _ in 0..100_000 {
            counts[bank
                .draw(&[0.2; 5], Origin::Unlabeled, &mut rng)
                .unwrap()
                .class] += 1;
        }
        for n in counts {
            assert!((n as f64 / 1e5 - 0.2).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let mut bank = MixBank::new(3, 4);
        for k in 0..9 {
            bank.push(entry(k % 3, k as f32), Origin::Labeled).unwrap();
        }
        let run = |seed| {
            let mut rng = rng_from(seed);
            (0..50)
                .map(|_| {
                    bank.draw(&[0.2, 0.3, 0.5], Origin::Labeled, &mut rng)
                        .unwrap()
                        .image
                        .data[0]
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    proptest! {
        #[test]
        fn replay_lengths_and_purity(pushes in proptest::collection::vec((0usize..4, any::<bool>()), 0..100), cap in 1usize..6) {
            let mut bank = MixBank::new(4, cap);
            let mut per = [[0usize; 4]; 2];
            for (i, &(c, lab)) in pushes.iter().enumerate() {
                let origin = if lab { Origin::Labeled } else { Origin::Unlabeled };
                bank.push(entry(c, i as f32), origin).unwrap();
                per[lab as usize][c] += 1;
            }
            for (lab, origin) in [(1, Origin::Labeled), (0, Origin::Unlabeled)] {
                for (c, bucket) in bank.buckets(origin).iter().enumerate() {
                    prop_assert_eq!(bucket.len(), per[lab][c].min(cap));
                    prop_assert!(bucket.iter().all(|e| e.class == c));
                }
            }
        }
    }
}
