//! Procedural long-tailed image dataset.
//!
//! Ten shape families are rendered at random position, scale and colour with
//! additive Gaussian noise. Three head classes have a tail-class twin that
//! shares its geometry and differs only in a small detail (a hole, a dot, a
//! gap), so a network trained on the imbalanced split keeps absorbing the
//! tail twin into its head class. Splits are subsampled with the
//! long-tail profile `N_c = N_1 * gamma^(-(c-1)/(C-1))`.

mod augment;
mod render;

use alloc::vec::Vec;

pub use augment::{
    sample_strong, sample_weak, strong_aug, strong_aug_with, weak_aug, weak_aug_with, Photometric,
    StrongParams, WeakParams, CROP_SHIFT,
};
pub use render::{render_class, render_class_with, Shape, NOISE_SIGMA, SHAPES};

use crate::error::{contract, Error, Result};
use crate::rng::{derive, rng_from};
use crate::tensor::Image;

/// Test images per class (balanced test split).
pub const DEFAULT_TEST_PER_CLASS: usize = 200;

/// `max(1, round(n1 * gamma^(-(c-1)/(C-1))))` for `c = 1..=C`.
pub fn longtail_counts(n1: usize, gamma: f64, classes: usize) -> Result<Vec<usize>> {
    contract!(
        classes >= 2,
        "long-tail profile needs at least 2 classes, got {classes}"
    );
    contract!(n1 >= 1, "largest class count must be at least 1");
    contract!(
        gamma > 0.0 && gamma.is_finite(),
        "imbalance ratio must be positive, got {gamma}"
    );
    Ok((0..classes)
        .map(|c| {
            let exponent = -(c as f64) / (classes - 1) as f64;
            let n = libm::round(n1 as f64 * libm::pow(gamma, exponent));
            (n as usize).max(1)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Largest labeled class count `N_1`.
    pub n1: usize,
    /// Largest unlabeled class count `M_1`.
    pub m1: usize,
    pub gamma_l: f64,
    /// Values below 1 request the reversed profile (tail classes largest).
    pub gamma_u: f64,
    pub image_size: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// `C = 10`, `N_1 = 100`, `M_1 = 500`, `gamma_l = gamma_u = 10`.
    pub fn reference(seed: u64) -> Self {
        DatasetSpec {
            num_classes: 10,
            n1: 100,
            m1: 500,
            gamma_l: 10.0,
            gamma_u: 10.0,
            image_size: 32,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.num_classes < 2 || self.num_classes > SHAPES.len() {
            return fail(alloc::format!(
                "num_classes must be in [2, {}], got {}",
                SHAPES.len(),
                self.num_classes
            ));
        }
        if self.n1 < 1 {
            return fail("n1 must be at least 1".into());
        }
        if !(self.gamma_l >= 1.0 && self.gamma_l.is_finite()) {
            return fail(alloc::format!("gamma_l must be >= 1, got {}", self.gamma_l));
        }
        if !(self.gamma_u > 0.0 && self.gamma_u.is_finite()) {
            return fail(alloc::format!("gamma_u must be > 0, got {}", self.gamma_u));
        }
        if self.image_size < 16 || self.image_size % 4 != 0 {
            return fail(alloc::format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            ));
        }
        if self.test_per_class < 1 {
            return fail("test_per_class must be at least 1".into());
        }
        Ok(())
    }

    pub fn labeled_counts(&self) -> Result<Vec<usize>> {
        longtail_counts(self.n1, self.gamma_l, self.num_classes)
    }

    /// Unlabeled counts. For `gamma_u < 1` the profile of `1 / gamma_u` is
    /// reversed, so the last class holds `M_1` samples and the first
    /// `M_1 * gamma_u`.
    pub fn unlabeled_counts(&self) -> Result<Vec<usize>> {
        if self.m1 == 0 {
            return Ok(alloc::vec![0; self.num_classes]);
        }
        if self.gamma_u >= 1.0 {
            longtail_counts(self.m1, self.gamma_u, self.num_classes)
        } else {
            let mut counts = longtail_counts(self.m1, 1.0 / self.gamma_u, self.num_classes)?;
            counts.reverse();
            Ok(counts)
        }
    }
}

/// Images with ground-truth labels (labeled training split or test split).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub num_classes: usize,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// The unlabeled split as the learner sees it: images only.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    pub num_classes: usize,
    pub images: Vec<Image>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Ground truth of the unlabeled split, kept apart from [`UnlabeledSet`] so
/// it can only reach evaluation code that asks for it explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLabels {
    pub labels: Vec<usize>,
}

impl HiddenLabels {
    /// Empirical class distribution of the unlabeled split.
    pub fn distribution(&self, num_classes: usize) -> Vec<f64> {
        let mut d = alloc::vec![0.0; num_classes];
        for &y in &self.labels {
            d[y] += 1.0;
        }
        let n = self.labels.len().max(1) as f64;
        d.iter_mut().for_each(|v| *v /= n);
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub hidden: HiddenLabels,
    pub test: LabeledSet,
}

const SPLIT_LABELED: u64 = 1;
const SPLIT_UNLABELED: u64 = 2;
const SPLIT_TEST: u64 = 3;

fn render_split(spec: &DatasetSpec, split: u64, counts: &[usize]) -> (Vec<Image>, Vec<usize>) {
    let total = counts.iter().sum();
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (class, &n) in counts.iter().enumerate() {
        for k in 0..n {
            let mut rng = rng_from(derive(spec.seed, &[split, class as u64, k as u64]));
            images.push(render_class(class, spec.image_size, &mut rng));
            labels.push(class);
        }
    }
    (images, labels)
}

/// Renders the three splits. Every image depends only on
/// `(seed, split, class, index within class)`.
pub fn generate(spec: &DatasetSpec) -> Result<SynthData> {
    spec.validate()?;
    let c = spec.num_classes;
    let (images, labels) = render_split(spec, SPLIT_LABELED, &spec.labeled_counts()?);
    let labeled = LabeledSet {
        num_classes: c,
        images,
        labels,
    };
    let (images, hidden) = render_split(spec, SPLIT_UNLABELED, &spec.unlabeled_counts()?);
    let unlabeled = UnlabeledSet {
        num_classes: c,
        images,
    };
    let (images, labels) = render_split(spec, SPLIT_TEST, &alloc::vec![spec.test_per_class; c]);
    let test = LabeledSet {
        num_classes: c,
        images,
        labels,
    };
    Ok(SynthData {
        labeled,
        unlabeled,
        hidden: HiddenLabels { labels: hidden },
        test,
    })
}
