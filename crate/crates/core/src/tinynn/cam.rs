use alloc::vec;
use alloc::vec::Vec;

use super::{BackboneOutput, BackboneParams};
use crate::error::{contract, Result};

/// Class activation map of sample `sample` for `class_idx`:
/// `cam[y, x] = sum_k w[class, k] * features[k, y, x]`, unnormalized.
pub fn cam(
    output: &BackboneOutput,
    params: &BackboneParams,
    sample: usize,
    class_idx: usize,
) -> Result<Vec<f32>> {
    let classes = params.config.num_classes;
    contract!(
        class_idx < classes,
        "class {class_idx} out of range for {classes} classes"
    );
    contract!(sample < output.batch, "sample {sample} out of range");
    let feat = params.config.feature_channels();
    let w = &params.classifier.weights[class_idx * feat..(class_idx + 1) * feat];
    Ok(cam_from_features(output.feature_maps.sample(sample), w))
}

/// Weighted channel sum of one sample's `[channels, h, w]` feature maps.
pub fn cam_from_features(features: &[f32], weights: &[f32]) -> Vec<f32> {
    let spatial = features.len() / weights.len();
    let mut map = vec![0.0f32; spatial];
    for (plane, &w) in features.chunks_exact(spatial).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (m, &f) in map.iter_mut().zip(plane) {
            *m += w * f;
        }
    }
    map
}
