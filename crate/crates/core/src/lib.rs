//! Balanced and entropy-based mixing (BEM) for long-tailed semi-supervised
//! image classification.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every piece of the
//! training procedure that does not touch the file system:
//!
//! - [`tinynn`]: a three-block convolutional backbone with hand-written
//!   gradients, SGD with momentum, the cosine schedule and CAM extraction.
//! - [`synthdata`]: a procedural long-tailed image dataset with weak and
//!   strong augmentations.
//! - [`balance`]: effective numbers, EMA class distribution, class-wise and
//!   sample-wise entropy, fused sampling probabilities and entropy masks.
//! - [`mixbank`]: the class balanced mix bank.
//! - [`cammix`]: CAM-guided cut-and-paste mixing.
//! - [`learner`]: the FixMatch learner with the BEM extensions.
//! - [`evalkit`]: accuracy, confusion matrices and grouped metrics.
//!
//! File formats, configuration and the command line live in the `bem-cli`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod balance;
pub mod cammix;
pub mod error;
pub mod evalkit;
pub mod learner;
pub mod mixbank;
pub mod oracle;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod tinynn;

pub use error::{Error, Result};
pub use tensor::{Image, Tensor4};

/// Where a training sample (or a bank entry) came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Labeled,
    Unlabeled,
}
