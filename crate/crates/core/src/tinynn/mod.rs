//! Minimal differentiable compute: the convolutional backbone, its exact
//! gradients, weighted cross entropy, SGD with momentum under the cosine
//! schedule, and class activation maps.

mod backbone;
mod cam;
mod gemm;
mod loss;
mod optim;

pub use backbone::{
    backward, forward, forward_inference, forward_recycling, BackboneConfig, BackboneOutput,
    BackboneParams, Classifier, ConvLayer, ForwardCache, KERNEL, PARAM_NAMES,
};
pub use cam::{cam, cam_from_features};
pub use loss::{softmax_rows, weighted_softmax_ce};
pub use optim::{cosine_lr, sgd_step, LrSchedule, OptimizerState};

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Deterministic smooth test pattern (one 32x32 RGB image) used by the
/// golden-logit regression checks.
pub fn golden_image() -> crate::Tensor4 {
    let mut data = alloc::vec::Vec::with_capacity(3 * 32 * 32);
    for c in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let v = ((x * 7 + y * 3 + c * 11) % 32) as f32 / 31.0;
                data.push(v);
            }
        }
    }
    crate::Tensor4::from_vec([1, 3, 32, 32], data).expect("fixed shape")
}
