//! CAM-guided cut-and-paste mixing.
//!
//! For each destination image a source image is drawn from the mix bank.
//! The source's class activation map (at its label) is min-max normalized,
//! thresholded, reduced to its largest 8-connected region, and that
//! region's bounding box, scaled to image coordinates, is pasted onto the
//! destination at the same location. Regions that are too small fall back
//! to a random box. The loss weight `lambda` is one minus the batch-mean
//! pasted area ratio.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::{Image, Tensor4};
use crate::tinynn::{self, BackboneParams};
use crate::Origin;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn is_valid(&self, height: usize, width: usize) -> bool {
        self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    pub fn whole(height: usize, width: usize) -> Self {
        BBox {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CamMixConfig {
    /// Threshold on the min-max normalized CAM.
    pub tau_c: f32,
    /// Smallest region area ratio accepted before falling back.
    pub tau_a: f32,
}

impl Default for CamMixConfig {
    fn default() -> Self {
        CamMixConfig {
            tau_c: 0.8,
            tau_a: 0.1,
        }
    }
}

/// Min-max normalizes `cam` and keeps cells strictly above `tau_c`. A
/// constant map normalizes to all zeros.
pub fn normalize_and_threshold(cam: &[f32], tau_c: f32) -> Vec<bool> {
    let min = cam.iter().copied().fold(f32::INFINITY, f32::min);
    let max = cam.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![false; cam.len()];
    }
    cam.iter().map(|&v| (v - min) / range > tau_c).collect()
}

/// A set of map cells, as row-major indices in increasing order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Component {
    pub cells: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.cells.len()
    }

    /// Bounding box in map coordinates; `None` for the empty component.
    pub fn bbox(&self, width: usize) -> Option<BBox> {
        let first = *self.cells.first()?;
        let mut b = BBox {
            x0: first % width,
            y0: first / width,
            x1: first % width + 1,
            y1: first / width + 1,
        };
        for &i in &self.cells {
            let (y, x) = (i / width, i % width);
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x + 1);
            b.y1 = b.y1.max(y + 1);
        }
        Some(b)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Largest 8-connected component of `mask` (`height x width`, row-major).
/// Equal areas resolve to the component whose first cell comes first in
/// row-major order. Two-pass labeling with union-find.
pub fn largest_component(mask: &[bool], height: usize, width: usize) -> Component {
    let n = height * width;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut neighbours = [None; 4];
            if x > 0 {
                neighbours[0] = Some(i - 1);
            }
            if y > 0 {
                if x > 0 {
                    neighbours[1] = Some(i - width - 1);
                }
                neighbours[2] = Some(i - width);
                if x + 1 < width {
                    neighbours[3] = Some(i - width + 1);
                }
            }
            for j in neighbours.into_iter().flatten() {
                if mask[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    // the smaller index becomes the root, so every root is
                    // its component's first cell in row-major order
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut sizes = vec![0usize; n];
    for i in 0..n {
        if mask[i] {
            let r = find(&mut parent, i);
            sizes[r] += 1;
        }
    }
    let mut best: Option<usize> = None;
    for r in 0..n {
        if sizes[r] > 0 && best.is_none_or(|b| sizes[r] > sizes[b]) {
            best = Some(r);
        }
    }
    let Some(root) = best else {
        return Component::default();
    };
    let cells = (0..n)
        .filter(|&i| mask[i] && find(&mut parent, i) == root)
        .collect();
    Component { cells }
}

/// A random box covering an area ratio uniform in `[tau_a, 0.5]` with
/// aspect ratio (width / height) uniform in `[0.5, 2]`, fully inside the
/// image. After rounding to whole pixels the area ratio is nudged back into
/// `[tau_a, 0.5]` when the image is large enough to allow it.
pub fn random_box(height: usize, width: usize, tau_a: f32, rng: &mut Rng) -> BBox {
    let total = (height * width) as f32;
    let lo = tau_a.clamp(0.0, 0.5);
    let ratio = rng.gen_range(lo..=0.5f32);
    let aspect = rng.gen_range(0.5f32..=2.0);
    let area = ratio * total;
    let mut bw = (libm::roundf(libm::sqrtf(area * aspect)) as usize).clamp(1, width);
    let mut bh = (libm::roundf(libm::sqrtf(area / aspect)) as usize).clamp(1, height);
    let min_area = libm::ceilf(lo * total) as usize;
    let max_area = (0.5 * total) as usize;
    while bw * bh < min_area && (bw < width || bh < height) {
        if (bw <= bh && bw < width) || bh == height {
            bw += 1;
        } else {
            bh += 1;
        }
    }
    while bw * bh > max_area && (bw > 1 || bh > 1) {
        if (bw >= bh && bw > 1) || bh == 1 {
            bw -= 1;
        } else {
            bh -= 1;
        }
    }
    let x0 = rng.gen_range(0..=width - bw);
    let y0 = rng.gen_range(0..=height - bh);
    BBox {
        x0,
        y0,
        x1: x0 + bw,
        y1: y0 + bh,
    }
}

/// Image-space box for a component of a `map_h x map_w` map, or a random
/// fallback box when the component's area ratio is below `tau_a`. The flag
/// reports whether the fallback was taken.
pub fn region_to_box(
    component: &Component,
    map_h: usize,
    map_w: usize,
    image_h: usize,
    image_w: usize,
    stride: usize,
    tau_a: f32,
    rng: &mut Rng,
) -> (BBox, bool) {
    let ratio = component.area() as f32 / (map_h * map_w) as f32;
    match component.bbox(map_w) {
        Some(b) if ratio >= tau_a => {
            let scaled = BBox {
                x0: (b.x0 * stride).min(image_w - 1),
                y0: (b.y0 * stride).min(image_h - 1),
                x1: (b.x1 * stride).min(image_w),
                y1: (b.y1 * stride).min(image_h),
            };
            (scaled, false)
        }
        _ => (random_box(image_h, image_w, tau_a, rng), true),
    }
}

/// Copies `src[bbox]` onto a copy of `dst` at the same location. Returns the
/// mixed image and the pasted area ratio `|bbox| / (H W)`.
pub fn paste(dst: &Image, src: &Image, bbox: BBox) -> Result<(Image, f32)> {
    contract!(dst.same_shape(src), "paste needs equally shaped images");
    contract!(
        bbox.is_valid(dst.height, dst.width),
        "box {bbox:?} outside {}x{}",
        dst.height,
        dst.width
    );
    let mut out = dst.clone();
    for c in 0..dst.channels {
        for y in bbox.y0..bbox.y1 {
            let start = out.index(c, y, bbox.x0);
            let end = start + (bbox.x1 - bbox.x0);
            out.data[start..end].copy_from_slice(&src.data[start..end]);
        }
    }
    Ok((out, bbox.area() as f32 / (dst.height * dst.width) as f32))
}

/// How a drawn source is combined with its destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PasteMode {
    /// Box from the source's thresholded CAM.
    Cam,
    /// Box drawn by [`random_box`].
    RandomBox,
    /// Convex blend `lambda_m * dst + (1 - lambda_m) * src`, `lambda_m ~ U(0, 1)`.
    Blend,
}

/// A bank sample chosen as the mixing source of one destination image.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSource {
    /// Weak view stored in the bank.
    pub image: Image,
    /// Ground-truth label (labeled source) or pseudo label (unlabeled).
    pub class: usize,
    /// Stored confidence of `class` (1 for labeled sources).
    pub confidence: f32,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutcome {
    pub source_class: usize,
    pub source_origin: Origin,
    pub source_confidence: f32,
    /// Share of the mixed image taken from the source, `1 - lambda_m`.
    pub area_ratio: f32,
    pub used_fallback: bool,
    /// Pasted box (absent in blend mode).
    pub bbox: Option<BBox>,
    /// Thresholded CAM of the source (CAM mode only).
    pub cam_mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct MixedBatch {
    pub images: Tensor4,
    /// `mean_m lambda_m`, with `lambda_m = 1` for passthrough samples.
    pub lambda: f32,
    /// `None` where no source was available (passthrough).
    pub outcomes: Vec<Option<MixOutcome>>,
}

/// Mixes each destination `dst[m]` with `sources[m]` (if any) under `mode`.
/// CAMs are computed with the current `params` on the stored weak views.
pub fn cammix_batch(
    dst: &Tensor4,
    sources: &[Option<MixSource>],
    params: &BackboneParams,
    cfg: CamMixConfig,
    mode: PasteMode,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    let batch = dst.batch();
    contract!(
        sources.len() == batch,
        "{} sources for a batch of {batch}",
        sources.len()
    );
    let [_, _, height, width] = dst.shape();
    let available: Vec<usize> = (0..batch).filter(|&m| sources[m].is_some()).collect();

    let cams = if mode == PasteMode::Cam && !available.is_empty() {
        let images = Tensor4::from_images(
            available
                .iter()
                .map(|&m| &sources[m].as_ref().expect("available").image),
        )?;
        let out = tinynn::forward_inference(params, &images)?;
        let mut cams = Vec::with_capacity(available.len());
        for (k, &m) in available.iter().enumerate() {
            let class = sources[m].as_ref().expect("available").class;
            cams.push(tinynn::cam(&out, params, k, class)?);
        }
        cams
    } else {
        Vec::new()
    };
    let map = params.config.feature_size();
    let stride = params.config.stride_product();

    let mut mixed = dst.clone();
    let mut outcomes = vec![None; batch];
    let mut lambda_sum = 0.0f32;
    let mut next_cam = cams.into_iter();
    for m in 0..batch {
        let Some(src) = &sources[m] else {
            lambda_sum += 1.0;
            continue;
        };
        let target = dst.image(m);
        let (image, area_ratio, bbox, fallback, mask) = match mode {
            PasteMode::Blend => {
                let lam: f32 = rng.gen_range(0.0f32..=1.0);
                let mut out = target.clone();
                for (o, s) in out.data.iter_mut().zip(&src.image.data) {
                    *o = lam * *o + (1.0 - lam) * s;
                }
                (out, 1.0 - lam, None, false, None)
            }
            PasteMode::RandomBox => {
                let b = random_box(height, width, cfg.tau_a, rng);
                let (out, r) = paste(&target, &src.image, b)?;
                (out, r, Some(b), false, None)
            }
            PasteMode::Cam => {
                let cam = next_cam.next().expect("one CAM per available source");
                let mask = normalize_and_threshold(&cam, cfg.tau_c);
                let component = largest_component(&mask, map, map);
                let (b, fallback) =
                    region_to_box(&component, map, map, height, width, stride, cfg.tau_a, rng);
                let (out, r) = paste(&target, &src.image, b)?;
                (out, r, Some(b), fallback, Some(mask))
            }
        };
        mixed.sample_mut(m).copy_from_slice(&image.data);
        lambda_sum += 1.0 - area_ratio;
        outcomes[m] = Some(MixOutcome {
            source_class: src.class,
            source_origin: src.origin,
            source_confidence: src.confidence,
            area_ratio,
            used_fallback: fallback,
            bbox,
            cam_mask: mask,
        });
    }
    Ok(MixedBatch {
        images: mixed,
        lambda: if batch == 0 {
            1.0
        } else {
            lambda_sum / batch as f32
        },
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng::rng_from;
    use crate::tinynn::BackboneConfig;
    use proptest::prelude::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(normalize_and_threshold(&[0.3; 6], 0.8), [false; 6]);
        let mut cam = [0.0f32; 16];
        cam[5] = 3.0;
        cam[6] = 2.0;
        let mask = normalize_and_threshold(&cam, 0.8);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
        assert!(mask[5]);
    }

    #[test]
    fn component_examples() {
        // areas 5 and 7
        let rows = [
            "##.....", //
            "###....", //
            "....###", //
            "....###", //
            ".....#.", //
        ];
        let mask: Vec<bool> = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        let comp = largest_component(&mask, 5, 7);
        assert_eq!(comp.area(), 7);
        assert_eq!(
            comp.bbox(7),
            Some(BBox {
                x0: 4,
                y0: 2,
                x1: 7,
                y1: 5
            })
        );
        // diagonal adjacency joins
        let diag = [true, false, false, false, true, false, false, false, true];
        assert_eq!(largest_component(&diag, 3, 3).area(), 3);
        // tie: earliest first cell wins
        let tie = [true, false, true, false, false, false, false, false, false];
        assert_eq!(largest_component(&tie, 3, 3).cells, [0]);
        assert_eq!(largest_component(&[false; 4], 2, 2).area(), 0);
    }

    #[test]
    fn region_to_box_examples() {
        let mut rng = rng_from(1);
        let (_, fallback) = region_to_box(&Component::default(), 8, 8, 32, 32, 4, 0.1, &mut rng);
        assert!(fallback);
        let full = Component {
            cells: (0..64).collect(),
        };
        let (b, fallback) = region_to_box(&full, 8, 8, 32, 32, 4, 0.1, &mut rng);
        assert_eq!((b, fallback), (BBox::whole(32, 32), false));
        // 12x12 block of a 32x32 map: ratio 144/1024 >= 0.1
        let mut cells = Vec::new();
        for y in 10..22 {
            for x in 3..15 {
                cells.push(y * 32 + x);
            }
        }
        let block = Component { cells };
        let (b, fallback) = region_to_box(&block, 32, 32, 128, 128, 4, 0.1, &mut rng);
        assert!(!fallback);
        assert_eq!(
            b,
            BBox {
                x0: 12,
                y0: 40,
                x1: 60,
                y1: 88
            }
        );
    }

    #[test]
    fn random_boxes_stay_inside_and_in_range() {
        let mut rng = rng_from(2);
        for _ in 0..2000 {
            let b = random_box(32, 32, 0.1, &mut rng);
            assert!(b.is_valid(32, 32));
            let r = b.area() as f32 / 1024.0;
            assert!((0.1..=0.5).contains(&r), "{b:?}");
            let aspect = (b.x1 - b.x0) as f32 / (b.y1 - b.y0) as f32;
            assert!((0.4..=2.5).contains(&aspect), "{b:?}");
        }
    }

    #[test]
    fn paste_examples() {
        let mut rng = rng_from(3);
        let a = crate::synthdata::render_class(0, 32, &mut rng);
        let b = crate::synthdata::render_class(1, 32, &mut rng);
        let (m, r) = paste(&a, &b, BBox::whole(32, 32)).unwrap();
        assert_eq!((m, r), (b.clone(), 1.0));
        let (m, r) = paste(
            &a,
            &b,
            BBox {
                x0: 3,
                y0: 4,
                x1: 4,
                y1: 5,
            },
        )
        .unwrap();
        assert_eq!(r, 1.0 / 1024.0);
        let differing = (0..32 * 32)
            .filter(|&i| (0..3).any(|c| m.data[c * 1024 + i] != a.data[c * 1024 + i]))
            .count();
        assert_eq!(differing, 1);
        let (m, _) = paste(
            &a,
            &a,
            BBox {
                x0: 0,
                y0: 0,
                x1: 9,
                y1: 7,
            },
        )
        .unwrap();
        assert_eq!(m, a);
    }

    fn source(class: usize, image: Image) -> MixSource {
        MixSource {
            image,
            class,
            confidence: 1.0,
            origin: Origin::Labeled,
        }
    }

    #[test]
    fn batch_passthrough_and_whole_image_paste() {
        let cfg = BackboneConfig::reference(3);
        let params = BackboneParams::init(cfg, &mut rng_from(4));
        let dst = Tensor4::from_vec([2, 3, 32, 32], vec![0.25; 2 * 3 * 1024]).unwrap();
        let out = cammix_batch(
            &dst,
            &[None, None],
            &params,
            CamMixConfig::default(),
            PasteMode::Cam,
            &mut rng_from(5),
        )
        .unwrap();
        assert_eq!(out.images, dst);
        assert_eq!(out.lambda, 1.0);

        // tau_c below every normalized value keeps the whole (non-constant) map
        let src = crate::synthdata::render_class(2, 32, &mut rng_from(6));
        let single = Tensor4::from_vec([1, 3, 32, 32], vec![0.25; 3 * 1024]).unwrap();
        let cam_cfg = CamMixConfig {
            tau_c: -1.0,
            tau_a: 0.1,
        };
        let out = cammix_batch(
            &single,
            &[Some(source(1, src.clone()))],
            &params,
            cam_cfg,
            PasteMode::Cam,
            &mut rng_from(7),
        )
        .unwrap();
        let o = out.outcomes[0].as_ref().unwrap();
        assert!(!o.used_fallback);
        assert_eq!(o.bbox, Some(BBox::whole(32, 32)));
        assert_eq!(out.images.image(0), src);
        assert_eq!(out.lambda, 0.0);
    }

    #[test]
    fn lambda_is_the_mean_of_per_sample_weights() {
        let cfg = BackboneConfig::reference(3);
        let params = BackboneParams::init(cfg, &mut rng_from(8));
        let dst = Tensor4::from_vec([3, 3, 32, 32], vec![0.1; 3 * 3 * 1024]).unwrap();
        let src = crate::synthdata::render_class(0, 32, &mut rng_from(9));
        let sources = [Some(source(0, src.clone())), None, Some(source(0, src))];
        let out = cammix_batch(
            &dst,
            &sources,
            &params,
            CamMixConfig::default(),
            PasteMode::RandomBox,
            &mut rng_from(10),
        )
        .unwrap();
        let ratios: Vec<f32> = out
            .outcomes
            .iter()
            .map(|o| o.as_ref().map_or(0.0, |o| o.area_ratio))
            .collect();
        let expected = ((1.0 - ratios[0]) + 1.0 + (1.0 - ratios[2])) / 3.0;
        assert_eq!(out.lambda, expected);
        assert!(out.lambda > 0.0 && out.lambda < 1.0);
    }

    proptest! {
        #[test]
        fn component_matches_flood_fill_oracle(seed in any::<u64>(), density in 0.2f64..0.7) {
            let mut rng = rng_from(seed);
            let mask: Vec<bool> = (0..256).map(|_| rng.gen_bool(density)).collect();
            let comp = largest_component(&mask, 16, 16);
            let (cells, bbox) = oracle::largest_component_flood(&mask, 16, 16);
            prop_assert_eq!(&comp.cells, &cells);
            prop_assert_eq!(comp.bbox(16), bbox);
        }

        #[test]
        fn threshold_matches_brute_force_and_is_monotone(cam in proptest::collection::vec(-5.0f32..5.0, 64), t1 in 0.0f32..1.0, t2 in 0.0f32..1.0) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = normalize_and_threshold(&cam, lo);
            prop_assert_eq!(&a, &oracle::threshold_two_pass(&cam, lo));
            let b = normalize_and_threshold(&cam, hi);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| *x || !*y));
        }

        #[test]
        fn pasted_pixels_come_from_exactly_one_image(seed in any::<u64>()) {
            let mut rng = rng_from(seed);
            let a = crate::synthdata::render_class(rng.gen_range(0..10), 32, &mut rng);
            let b = crate::synthdata::render_class(rng.gen_range(0..10), 32, &mut rng);
            let bbox = random_box(32, 32, 0.1, &mut rng);
            let (m, r) = paste(&a, &b, bbox).unwrap();
            prop_assert!(r > 0.0);
            for c in 0..3 { for y in 0..32 { for x in 0..32 {
                let expected = if bbox.contains(y, x) { b.get(c, y, x) } else { a.get(c, y, x) };
                prop_assert_eq!(m.get(c, y, x), expected);
            }}}
        }
    }
}
