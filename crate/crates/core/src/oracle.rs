//! Slow, independent reference implementations.
//!
//! Nothing here shares code with the production paths it checks: the
//! network is a straight-line `f64` loop nest, connected components use a
//! plain stack flood fill, and so on. Unit tests, the `selfcheck` battery
//! and the acceptance suite all compare against these.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::cammix::BBox;
use crate::rng::Rng;
use crate::tensor::Tensor4;
use crate::tinynn::{self, BackboneConfig, BackboneParams, PARAM_NAMES};

/// The backbone re-implemented as direct convolution loops in `f64`.
#[derive(Clone, Debug)]
pub struct ReferenceNet {
    pub config: BackboneConfig,
    /// Parameters in [`PARAM_NAMES`] order.
    pub tensors: Vec<Vec<f64>>,
}

impl ReferenceNet {
    pub fn from_params(params: &BackboneParams) -> Self {
        ReferenceNet {
            config: params.config,
            tensors: params
                .tensors()
                .iter()
                .map(|(_, t)| t.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }

    /// Logits `[batch, classes]` for `f32` images promoted to `f64`.
    pub fn logits(&self, images: &Tensor4) -> Vec<f64> {
        self.logits_and_pattern(images, None).0
    }

    /// Logits together with the on/off pattern of every ReLU, which
    /// identifies the linear region the input lies in. With `frozen`, each
    /// ReLU applies the given gate instead of testing its own sign, which
    /// evaluates the smooth function that agrees with the network on that
    /// region.
    pub fn logits_and_pattern(
        &self,
        images: &Tensor4,
        frozen: Option<&[bool]>,
    ) -> (Vec<f64>, Vec<bool>) {
        let cfg = &self.config;
        let mut pattern = Vec::new();
        let [batch, channels, size, _] = images.shape();
        let mut logits = Vec::with_capacity(batch * cfg.num_classes);
        for b in 0..batch {
            let mut act: Vec<f64> = images.sample(b).iter().map(|&v| v as f64).collect();
            let mut in_ch = channels;
            let mut in_size = size;
            for layer in 0..3 {
                let kernels = &self.tensors[2 * layer];
                let bias = &self.tensors[2 * layer + 1];
                let out_ch = cfg.widths[layer];
                let stride = cfg.strides[layer];
                let out_size = (in_size + 2 - 3) / stride + 1;
                let mut out = vec![0.0f64; out_ch * out_size * out_size];
                for o in 0..out_ch {
                    for y in 0..out_size {
                        for x in 0..out_size {
                            let mut acc = bias[o];
                            for c in 0..in_ch {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (y * stride + ky) as isize - 1;
                                        let ix = (x * stride + kx) as isize - 1;
                                        if iy < 0
                                            || ix < 0
                                            || iy >= in_size as isize
                                            || ix >= in_size as isize
                                        {
                                            continue;
                                        }
                                        let w = kernels[((o * in_ch + c) * 3 + ky) * 3 + kx];
                                        let v = act
                                            [(c * in_size + iy as usize) * in_size + ix as usize];
                                        acc += w * v;
                                    }
                                }
                            }
                            let on = match frozen {
                                Some(gates) => gates[pattern.len()],
                                None => acc > 0.0,
                            };
                            pattern.push(acc > 0.0);
                            out[(o * out_size + y) * out_size + x] = if on { acc } else { 0.0 };
                        }
                    }
                }
                act = out;
                in_ch = out_ch;
                in_size = out_size;
            }
            let spatial = in_size * in_size;
            let pooled: Vec<f64> = (0..in_ch)
                .map(|k| act[k * spatial..(k + 1) * spatial].iter().sum::<f64>() / spatial as f64)
                .collect();
            let weights = &self.tensors[6];
            let bias = &self.tensors[7];
            for c in 0..cfg.num_classes {
                let mut z = bias[c];
                for (k, p) in pooled.iter().enumerate() {
                    z += weights[c * in_ch + k] * p;
                }
                logits.push(z);
            }
        }
        (logits, pattern)
    }

    /// `sum_m w[m] * cross_entropy(logits[m], t[m])` in `f64`.
    pub fn loss(&self, images: &Tensor4, targets: &[usize], weights: &[f64]) -> f64 {
        self.loss_and_pattern(images, targets, weights, None).0
    }

    pub fn loss_and_pattern(
        &self,
        images: &Tensor4,
        targets: &[usize],
        weights: &[f64],
        frozen: Option<&[bool]>,
    ) -> (f64, Vec<bool>) {
        let classes = self.config.num_classes;
        let (logits, pattern) = self.logits_and_pattern(images, frozen);
        let mut total = 0.0;
        for (m, row) in logits.chunks(classes).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
            total += weights[m] * (lse - row[targets[m]]);
        }
        (total, pattern)
    }
}

/// One sampled parameter of a gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradSample {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// `p ± h` switched at least one ReLU, so `numeric` was taken with the
    /// activation pattern of `p` held fixed.
    pub straddled_kink: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn kinks(&self) -> usize {
        self.samples.iter().filter(|s| s.straddled_kink).count()
    }
}

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively; `f32` accumulation noise dominates there.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares the `f32` backward pass of `weighted_softmax_ce ∘ forward`
/// against central differences (step `h`) of the `f64` reference loss on
/// `per_tensor` random entries of each parameter tensor.
///
/// ReLU networks are piecewise smooth. When `p ± h` leaves the linear
/// region of `p`, the plain difference measures a mixture of two slopes, so
/// the difference is retaken on the reference network with every ReLU gate
/// frozen at its state for `p`. That function coincides with the loss on
/// the region containing `p` and has the same gradient there.
pub fn gradient_check(
    params: &BackboneParams,
    images: &Tensor4,
    targets: &[usize],
    weights: &[f32],
    per_tensor: usize,
    h: f64,
    rng: &mut Rng,
) -> crate::Result<GradCheckReport> {
    let classes = params.config.num_classes;
    let out = tinynn::forward(params, images)?;
    let (_, logit_grads) = tinynn::weighted_softmax_ce(&out.logits, classes, targets, weights)?;
    let grads = tinynn::backward(params, &out, &logit_grads)?;
    let analytic = grads.tensors();

    let w: Vec<f64> = weights.iter().map(|&v| v as f64).collect();
    let mut net = ReferenceNet::from_params(params);
    let (_, base) = net.loss_and_pattern(images, targets, &w, None);
    let mut samples = Vec::new();
    for (t, name) in PARAM_NAMES.iter().enumerate() {
        let len = net.tensors[t].len();
        for _ in 0..per_tensor {
            let index = rng.gen_range(0..len);
            let original = net.tensors[t][index];
            let mut difference = |frozen: Option<&[bool]>| {
                net.tensors[t][index] = original + h;
                let (plus, pattern_plus) = net.loss_and_pattern(images, targets, &w, frozen);
                net.tensors[t][index] = original - h;
                let (minus, pattern_minus) = net.loss_and_pattern(images, targets, &w, frozen);
                net.tensors[t][index] = original;
                let smooth = pattern_plus == base && pattern_minus == base;
                ((plus - minus) / (2.0 * h), smooth)
            };
            let (mut numeric, smooth) = difference(None);
            if !smooth {
                numeric = difference(Some(&base)).0;
            }
            let a = analytic[t].1[index] as f64;
            samples.push(GradSample {
                tensor: name,
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
                straddled_kink: !smooth,
            });
        }
    }
    Ok(GradCheckReport { samples })
}

/// Largest 8-connected component by depth-first flood fill from every
/// unvisited cell in row-major order; strictly larger components replace
/// the incumbent. Returns the sorted cells and their bounding box.
pub fn largest_component_flood(
    mask: &[bool],
    height: usize,
    width: usize,
) -> (Vec<usize>, Option<BBox>) {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut cells = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            cells.push(i);
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if cells.len() > best.len() {
            best = cells;
        }
    }
    best.sort_unstable();
    let bbox = if best.is_empty() {
        None
    } else {
        let ys = best.iter().map(|i| i / width);
        let xs = best.iter().map(|i| i % width);
        Some(BBox {
            x0: xs.clone().min().unwrap_or(0),
            x1: xs.max().unwrap_or(0) + 1,
            y0: ys.clone().min().unwrap_or(0),
            y1: ys.max().unwrap_or(0) + 1,
        })
    };
    (best, bbox)
}

/// Min-max normalization then `> tau` as two explicit passes (first find
/// the extremes, then compare each cell), in `f64`.
pub fn threshold_two_pass(cam: &[f32], tau: f32) -> Vec<bool> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in cam {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let mut out = Vec::with_capacity(cam.len());
    for &v in cam {
        if hi > lo {
            // compare in f32 exactly as the working-precision definition
            let n = (v - lo as f32) / (hi as f32 - lo as f32);
            out.push(n > tau);
        } else {
            out.push(false);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn images(rng: &mut Rng, batch: usize) -> Tensor4 {
        Tensor4::from_vec(
            [batch, 3, 32, 32],
            (0..batch * 3 * 1024).map(|_| rng.gen::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reference_matches_fast_forward() {
        let mut rng = rng_from(11);
        let params = BackboneParams::init(BackboneConfig::reference(10), &mut rng);
        let x = images(&mut rng, 3);
        let fast = tinynn::forward_inference(&params, &x).unwrap();
        let slow = ReferenceNet::from_params(&params).logits(&x);
        for (a, b) in fast.logits.iter().zip(&slow) {
            assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_check_passes_on_reference_backbone() {
        let mut rng = rng_from(12);
        let params = BackboneParams::init(BackboneConfig::reference(10), &mut rng);
        let x = images(&mut rng, 4);
        let targets = [0, 3, 7, 9];
        let weights = [1.0, 0.5, 2.0, 1.0];
        let report = gradient_check(&params, &x, &targets, &weights, 26, 1e-3, &mut rng).unwrap();
        assert!(report.samples.len() >= 200);
        let worst = report.worst().unwrap();
        assert!(report.max_rel_error() < 1e-3, "{worst:?}");
    }
}
