use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, Layout};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Rng};
use crate::tensor::Tensor4;

pub const KERNEL: usize = 3;
const PAD: usize = 1;

/// Shape of the three-block backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub widths: [usize; 3],
    pub strides: [usize; 3],
    pub num_classes: usize,
}

impl BackboneConfig {
    /// 3x3 convs with 8, 16 and 32 channels; the second and third block
    /// downsample by two, so a 32x32 input yields 8x8 feature maps.
    pub fn reference(num_classes: usize) -> Self {
        BackboneConfig {
            in_channels: 3,
            image_size: 32,
            widths: [8, 16, 32],
            strides: [1, 2, 2],
            num_classes,
        }
    }

    pub fn with_image_size(mut self, image_size: usize) -> Self {
        self.image_size = image_size;
        self
    }

    /// Spatial side length after each block.
    pub fn sizes(&self) -> [usize; 3] {
        let mut out = [0; 3];
        let mut s = self.image_size;
        for (i, &stride) in self.strides.iter().enumerate() {
            s = (s + 2 * PAD - KERNEL) / stride + 1;
            out[i] = s;
        }
        out
    }

    pub fn feature_channels(&self) -> usize {
        self.widths[2]
    }

    pub fn feature_size(&self) -> usize {
        self.sizes()[2]
    }

    /// Integer factor mapping feature-map cells to input pixels.
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    fn input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.in_channels
        } else {
            self.widths[layer - 1]
        }
    }

    fn input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.image_size
        } else {
            self.sizes()[layer - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out, in, 3, 3]`
    pub kernels: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            stride,
            kernels: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * KERNEL * KERNEL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `[classes, feature_channels]`
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// All trainable parameters. The same type doubles as the gradient and
/// momentum container, so congruence is structural.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub convs: [ConvLayer; 3],
    pub classifier: Classifier,
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1.kernels",
    "conv1.bias",
    "conv2.kernels",
    "conv2.bias",
    "conv3.kernels",
    "conv3.bias",
    "classifier.weights",
    "classifier.bias",
];

impl BackboneParams {
    pub fn zeros(config: BackboneConfig) -> Self {
        let convs = core::array::from_fn(|i| {
            ConvLayer::zeros(
                config.input_channels(i),
                config.widths[i],
                config.strides[i],
            )
        });
        BackboneParams {
            config,
            convs,
            classifier: Classifier {
                weights: vec![0.0; config.num_classes * config.feature_channels()],
                bias: vec![0.0; config.num_classes],
            },
        }
    }

    /// He-normal kernels, zero biases, `N(0, 1/fan_in)` classifier.
    pub fn init(config: BackboneConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(config);
        for conv in &mut p.convs {
            let std = libm::sqrtf(2.0 / conv.patch_len() as f32);
            for w in &mut conv.kernels {
                *w = std * standard_normal(rng);
            }
        }
        let std = libm::sqrtf(1.0 / config.feature_channels() as f32);
        for w in &mut p.classifier.weights {
            *w = std * standard_normal(rng);
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensors(&self) -> [(&'static str, &[f32]); 8] {
        let [c1, c2, c3] = &self.convs;
        [
            (PARAM_NAMES[0], &c1.kernels[..]),
            (PARAM_NAMES[1], &c1.bias[..]),
            (PARAM_NAMES[2], &c2.kernels[..]),
            (PARAM_NAMES[3], &c2.bias[..]),
            (PARAM_NAMES[4], &c3.kernels[..]),
            (PARAM_NAMES[5], &c3.bias[..]),
            (PARAM_NAMES[6], &self.classifier.weights[..]),
            (PARAM_NAMES[7], &self.classifier.bias[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f32]); 8] {
        let [c1, c2, c3] = &mut self.convs;
        [
            (PARAM_NAMES[0], &mut c1.kernels[..]),
            (PARAM_NAMES[1], &mut c1.bias[..]),
            (PARAM_NAMES[2], &mut c2.kernels[..]),
            (PARAM_NAMES[3], &mut c2.bias[..]),
            (PARAM_NAMES[4], &mut c3.kernels[..]),
            (PARAM_NAMES[5], &mut c3.bias[..]),
            (PARAM_NAMES[6], &mut self.classifier.weights[..]),
            (PARAM_NAMES[7], &mut self.classifier.bias[..]),
        ]
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &BackboneParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Geometry of one convolution lowered to a single matrix product.
///
/// The zero-padded input is split into `stride * stride` phase planes
/// (`plane[a][b][y][x] = padded[stride * y + a][stride * x + b]`). Every
/// kernel tap then reads one contiguous run of a plane, so a patch-matrix row
/// is a single slice copy. Output is computed on a grid `plane_w` wide; the
/// columns past `out_size` are discarded.
#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    in_channels: usize,
    in_size: usize,
    out_size: usize,
    stride: usize,
    plane_w: usize,
    plane_len: usize,
}

impl ConvGeometry {
    fn new(in_channels: usize, in_size: usize, out_size: usize, stride: usize) -> Self {
        let padded = in_size + 2 * PAD;
        let plane_w = padded.div_ceil(stride);
        ConvGeometry {
            in_channels,
            in_size,
            out_size,
            stride,
            plane_w,
            plane_len: plane_w * plane_w + KERNEL,
        }
    }

    fn phases(&self) -> usize {
        self.stride * self.stride
    }

    /// Columns of the extended output grid.
    fn cols(&self) -> usize {
        self.out_size * self.plane_w
    }

    fn patch_len(&self) -> usize {
        self.in_channels * KERNEL * KERNEL
    }

    fn planes_len(&self) -> usize {
        self.in_channels * self.phases() * self.plane_len
    }

    /// (plane index, offset) read by kernel tap `(c, ky, kx)`.
    fn tap(&self, c: usize, ky: usize, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let plane = (c * s + ky % s) * s + kx % s;
        (plane, (ky / s) * self.plane_w + kx / s)
    }

    /// Scatters one `[channels, in, in]` image into zeroed phase planes.
    fn split(&self, image: &[f32], planes: &mut [f32]) {
        planes.fill(0.0);
        let (s, n, pw) = (self.stride, self.in_size, self.plane_w);
        for c in 0..self.in_channels {
            for iy in 0..n {
                let py = iy + PAD;
                let src = &image[(c * n + iy) * n..(c * n + iy + 1) * n];
                for a in 0..s {
                    let plane = (c * s + py % s) * s + a;
                    // padded columns px = ix + PAD with px % s == a
                    let first = (a + s - PAD % s) % s;
                    if first >= n {
                        continue;
                    }
                    let row = &mut planes[plane * self.plane_len + (py / s) * pw..];
                    let x0 = (first + PAD) / s;
                    for (d, v) in row[x0..].iter_mut().zip(src[first..].iter().step_by(s)) {
                        *d = *v;
                    }
                }
            }
        }
    }

    /// Inverse of [`split`] for gradients: reads padded positions back into
    /// an `[channels, in, in]` image.
    fn merge(&self, planes: &[f32], image: &mut [f32]) {
        let (s, n, pw) = (self.stride, self.in_size, self.plane_w);
        for c in 0..self.in_channels {
            for iy in 0..n {
                let py = iy + PAD;
                let dst = &mut image[(c * n + iy) * n..(c * n + iy + 1) * n];
                for a in 0..s {
                    let plane = (c * s + py % s) * s + a;
                    let first = (a + s - PAD % s) % s;
                    if first >= n {
                        continue;
                    }
                    let row = &planes[plane * self.plane_len + (py / s) * pw..];
                    let x0 = (first + PAD) / s;
                    for (d, v) in dst[first..].iter_mut().step_by(s).zip(&row[x0..]) {
                        *d = *v;
                    }
                }
            }
        }
    }

    fn im2col(&self, planes: &[f32], col: &mut [f32]) {
        let n = self.cols();
        for c in 0..self.in_channels {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let (plane, off) = self.tap(c, ky, kx);
                    let start = plane * self.plane_len + off;
                    col[row * n..(row + 1) * n].copy_from_slice(&planes[start..start + n]);
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], planes: &mut [f32]) {
        planes.fill(0.0);
        let n = self.cols();
        for c in 0..self.in_channels {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let (plane, off) = self.tap(c, ky, kx);
                    let start = plane * self.plane_len + off;
                    for (d, v) in planes[start..start + n]
                        .iter_mut()
                        .zip(&col[row * n..(row + 1) * n])
                    {
                        *d += *v;
                    }
                }
            }
        }
    }
}

fn geometry(cfg: &BackboneConfig, layer: usize) -> ConvGeometry {
    ConvGeometry::new(
        cfg.input_channels(layer),
        cfg.input_size(layer),
        cfg.sizes()[layer],
        cfg.strides[layer],
    )
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Patch matrices per layer, `[batch][patch_len, out_size * plane_w]`.
    cols: [Vec<f32>; 3],
    /// Post-ReLU outputs of the first two blocks (inputs of the next block).
    hidden: [Vec<f32>; 2],
    /// Globally average pooled features `[batch, feature_channels]`.
    pooled: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub batch: usize,
    pub num_classes: usize,
    /// `[batch, classes]`
    pub logits: Vec<f32>,
    /// `[batch, classes]`, row-wise softmax of `logits`.
    pub probs: Vec<f32>,
    /// Post-ReLU output of the final block, `[batch, channels, h', w']`.
    pub feature_maps: Tensor4,
    pub cache: Option<ForwardCache>,
}

impl BackboneOutput {
    pub fn logits_row(&self, b: usize) -> &[f32] {
        &self.logits[b * self.num_classes..(b + 1) * self.num_classes]
    }

    pub fn probs_row(&self, b: usize) -> &[f32] {
        &self.probs[b * self.num_classes..(b + 1) * self.num_classes]
    }

    pub fn argmax(&self, b: usize) -> usize {
        super::argmax(self.logits_row(b))
    }

    /// Detaches the training cache so its buffers can be recycled.
    pub fn take_cache(&mut self) -> Option<ForwardCache> {
        self.cache.take()
    }
}

/// Forward pass keeping the activations needed by [`backward`].
pub fn forward(params: &BackboneParams, images: &Tensor4) -> Result<BackboneOutput> {
    run_forward(params, images, Some(ForwardCache::default()))
}

/// Like [`forward`], reusing the buffers of a cache that is no longer needed
/// (see [`BackboneOutput::take_cache`]). Results are identical to [`forward`].
pub fn forward_recycling(
    params: &BackboneParams,
    images: &Tensor4,
    spare: ForwardCache,
) -> Result<BackboneOutput> {
    run_forward(params, images, Some(spare))
}

/// Forward pass without caches (evaluation, pseudo-labeling, CAMs).
pub fn forward_inference(params: &BackboneParams, images: &Tensor4) -> Result<BackboneOutput> {
    run_forward(params, images, None)
}

fn check_input(config: &BackboneConfig, images: &Tensor4) -> Result<()> {
    let [_, c, h, w] = images.shape();
    let checks = [
        ("input channels", config.in_channels, c),
        ("input height", config.image_size, h),
        ("input width", config.image_size, w),
    ];
    for (what, expected, actual) in checks {
        if expected != actual {
            return Err(Error::Shape {
                what,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

fn run_forward(
    params: &BackboneParams,
    images: &Tensor4,
    cache: Option<ForwardCache>,
) -> Result<BackboneOutput> {
    let cfg = &params.config;
    check_input(cfg, images)?;
    let batch = images.batch();

    let keep = cache.is_some();
    let ForwardCache {
        mut cols,
        mut hidden,
        mut pooled,
    } = cache.unwrap_or_default();
    let mut spare_hidden = core::mem::take(&mut hidden);
    let mut input: Vec<f32> = Vec::new();
    let mut planes = Vec::new();
    let mut scratch = Vec::new();
    let mut ext = Vec::new();

    for layer in 0..3 {
        let conv = &params.convs[layer];
        let geo = geometry(cfg, layer);
        let (patch, n, out) = (geo.patch_len(), geo.cols(), geo.out_size);
        let in_len = conv.in_channels * geo.in_size * geo.in_size;
        let out_len = conv.out_channels * out * out;
        // every element of `output` and of the patch matrices is overwritten
        let mut output = if layer < 2 {
            core::mem::take(&mut spare_hidden[layer])
        } else {
            Vec::new()
        };
        output.resize(batch * out_len, 0.0);
        planes.resize(geo.planes_len(), 0.0);
        ext.resize(conv.out_channels * n, 0.0);
        if keep {
            cols[layer].resize(batch * patch * n, 0.0);
        } else {
            scratch.resize(patch * n, 0.0);
        }
        let src: &[f32] = if layer == 0 { images.data() } else { &input };
        for b in 0..batch {
            let col: &mut [f32] = if keep {
                &mut cols[layer][b * patch * n..(b + 1) * patch * n]
            } else {
                &mut scratch[..]
            };
            geo.split(&src[b * in_len..(b + 1) * in_len], &mut planes);
            geo.im2col(&planes, col);
            for (o, row) in ext.chunks_exact_mut(n).enumerate() {
                row.fill(conv.bias[o]);
            }
            gemm(
                conv.out_channels,
                patch,
                n,
                &conv.kernels,
                Layout::row_major(patch),
                col,
                Layout::row_major(n),
                1.0,
                &mut ext,
                Layout::row_major(n),
            );
            let dst = &mut output[b * out_len..(b + 1) * out_len];
            for (d_row, e_row) in dst.chunks_exact_mut(out).zip(ext.chunks_exact(geo.plane_w)) {
                for (d, &e) in d_row.iter_mut().zip(e_row) {
                    *d = if e > 0.0 { e } else { 0.0 };
                }
            }
        }
        let prev = core::mem::replace(&mut input, output);
        if keep && layer > 0 {
            hidden[layer - 1] = prev;
        }
    }

    // global average pooling over the final block
    let feat = cfg.feature_channels();
    let size = cfg.feature_size();
    let spatial = size * size;
    let inv = 1.0 / spatial as f32;
    pooled.resize(batch * feat, 0.0);
    for (p, maps) in pooled.iter_mut().zip(input.chunks_exact(spatial)) {
        *p = maps.iter().sum::<f32>() * inv;
    }

    let classes = cfg.num_classes;
    let mut logits = vec![0.0f32; batch * classes];
    for row in logits.chunks_exact_mut(classes) {
        row.copy_from_slice(&params.classifier.bias);
    }
    gemm(
        batch,
        feat,
        classes,
        &pooled,
        Layout::row_major(feat),
        &params.classifier.weights,
        Layout::transposed(feat),
        1.0,
        &mut logits,
        Layout::row_major(classes),
    );
    let probs = super::softmax_rows(&logits, classes);
    let feature_maps = Tensor4::from_vec([batch, feat, size, size], input)?;

    let cache = keep.then_some(ForwardCache {
        cols,
        hidden,
        pooled,
    });
    Ok(BackboneOutput {
        batch,
        num_classes: classes,
        logits,
        probs,
        feature_maps,
        cache,
    })
}

/// Reverse-mode gradients of `sum(logits * logit_grads)` with respect to
/// every parameter.
pub fn backward(
    params: &BackboneParams,
    output: &BackboneOutput,
    logit_grads: &[f32],
) -> Result<BackboneParams> {
    let cache = output.cache.as_ref().ok_or(Error::Usage(
        "backward needs the caches of a training forward pass",
    ))?;
    let cfg = &params.config;
    let batch = output.batch;
    let classes = cfg.num_classes;
    if logit_grads.len() != batch * classes {
        return Err(Error::Shape {
            what: "logit gradients",
            expected: batch * classes,
            actual: logit_grads.len(),
        });
    }
    let mut grads = params.zeros_like();
    let feat = cfg.feature_channels();

    // classifier
    gemm(
        classes,
        batch,
        feat,
        logit_grads,
        Layout::transposed(classes),
        &cache.pooled,
        Layout::row_major(feat),
        0.0,
        &mut grads.classifier.weights,
        Layout::row_major(feat),
    );
    for row in logit_grads.chunks_exact(classes) {
        for (g, v) in grads.classifier.bias.iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut d_pooled = vec![0.0f32; batch * feat];
    gemm(
        batch,
        classes,
        feat,
        logit_grads,
        Layout::row_major(classes),
        &params.classifier.weights,
        Layout::row_major(feat),
        0.0,
        &mut d_pooled,
        Layout::row_major(feat),
    );

    // through pooling and the final ReLU
    let size = cfg.feature_size();
    let spatial3 = size * size;
    let inv = 1.0 / spatial3 as f32;
    let maps = output.feature_maps.data();
    let mut d_out: Vec<f32> = maps
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if a > 0.0 {
                d_pooled[i / spatial3] * inv
            } else {
                0.0
            }
        })
        .collect();

    let mut d_ext = Vec::new();
    let mut d_col = Vec::new();
    let mut d_planes = Vec::new();
    for layer in (0..3).rev() {
        let conv = &params.convs[layer];
        let geo = geometry(cfg, layer);
        let (patch, n, out) = (geo.patch_len(), geo.cols(), geo.out_size);
        let out_len = conv.out_channels * out * out;
        let in_len = conv.in_channels * geo.in_size * geo.in_size;
        let cols = &cache.cols[layer];
        let g = &mut grads.convs[layer];
        let mut d_in = if layer > 0 {
            vec![0.0f32; batch * in_len]
        } else {
            Vec::new()
        };
        d_ext.clear();
        d_ext.resize(conv.out_channels * n, 0.0);
        d_col.resize(patch * n, 0.0);
        d_planes.resize(geo.planes_len(), 0.0);
        for b in 0..batch {
            let dout = &d_out[b * out_len..(b + 1) * out_len];
            for (e_row, d_row) in d_ext
                .chunks_exact_mut(geo.plane_w)
                .zip(dout.chunks_exact(out))
            {
                e_row[..out].copy_from_slice(d_row);
            }
            let col = &cols[b * patch * n..(b + 1) * patch * n];
            gemm(
                conv.out_channels,
                n,
                patch,
                &d_ext,
                Layout::row_major(n),
                col,
                Layout::transposed(n),
                1.0,
                &mut g.kernels,
                Layout::row_major(patch),
            );
            for (gb, row) in g.bias.iter_mut().zip(dout.chunks_exact(out * out)) {
                *gb += row.iter().sum::<f32>();
            }
            if layer > 0 {
                gemm(
                    patch,
                    conv.out_channels,
                    n,
                    &conv.kernels,
                    Layout::transposed(patch),
                    &d_ext,
                    Layout::row_major(n),
                    0.0,
                    &mut d_col,
                    Layout::row_major(n),
                );
                geo.col2im(&d_col, &mut d_planes);
                geo.merge(&d_planes, &mut d_in[b * in_len..(b + 1) * in_len]);
            }
        }
        if layer > 0 {
            let act = &cache.hidden[layer - 1];
            for (d, &a) in d_in.iter_mut().zip(act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            d_out = d_in;
        }
    }
    for (name, t) in grads.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: format!("{name} (backward)"),
            });
        }
    }
    Ok(grads)
}
