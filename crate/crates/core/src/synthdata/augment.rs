use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::Image;

/// Largest translation of the weak pad-and-crop, in pixels.
pub const CROP_SHIFT: i32 = 4;

/// Parameters of one weak augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeakParams {
    /// Crop offset: output pixel `(y, x)` reads input `(y + dy, x + dx)`.
    pub dx: i32,
    pub dy: i32,
    pub flip: bool,
}

impl WeakParams {
    pub const IDENTITY: WeakParams = WeakParams {
        dx: 0,
        dy: 0,
        flip: false,
    };
}

/// The photometric operation of a strong augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Photometric {
    /// Multiply every pixel by the factor.
    Brightness(f32),
    /// Scale deviations from the image mean by the factor.
    Contrast(f32),
    /// Quantize each channel to `2^bits` levels.
    Posterize(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrongParams {
    pub weak: WeakParams,
    pub photometric: Photometric,
    /// Top-left corner of the Cutout square; may lie partly outside.
    pub cutout_y: i32,
    pub cutout_x: i32,
}

pub fn sample_weak(rng: &mut Rng) -> WeakParams {
    WeakParams {
        dx: rng.gen_range(-CROP_SHIFT..=CROP_SHIFT),
        dy: rng.gen_range(-CROP_SHIFT..=CROP_SHIFT),
        flip: rng.gen_bool(0.5),
    }
}

pub fn sample_strong(size: usize, rng: &mut Rng) -> StrongParams {
    let weak = sample_weak(rng);
    let photometric = match rng.gen_range(0..3) {
        0 => Photometric::Brightness(rng.gen_range(0.5f32..=1.5)),
        1 => Photometric::Contrast(rng.gen_range(0.5f32..=1.5)),
        _ => Photometric::Posterize(rng.gen_range(2u32..=4)),
    };
    let side = (size / 4) as i32;
    // the square's centre is uniform over the image
    let cy = rng.gen_range(0..size as i32);
    let cx = rng.gen_range(0..size as i32);
    StrongParams {
        weak,
        photometric,
        cutout_y: cy - side / 2,
        cutout_x: cx - side / 2,
    }
}

fn reflect(i: i32, n: i32) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Pad-and-crop (reflect padding) followed by an optional horizontal flip.
pub fn weak_aug_with(image: &Image, p: WeakParams) -> Image {
    if p == WeakParams::IDENTITY {
        return image.clone();
    }
    let (h, w) = (image.height as i32, image.width as i32);
    let mut out = Image::new(image.channels, image.height, image.width);
    for c in 0..image.channels {
        for y in 0..h {
            let sy = reflect(y + p.dy, h);
            for x in 0..w {
                let cx = if p.flip { w - 1 - x } else { x };
                let sx = reflect(cx + p.dx, w);
                out.set(c, y as usize, x as usize, image.get(c, sy, sx));
            }
        }
    }
    out
}

pub fn weak_aug(image: &Image, rng: &mut Rng) -> Image {
    weak_aug_with(image, sample_weak(rng))
}

/// Weak augmentation, one photometric op, then Cutout with a 0.5-filled
/// square of side `size / 4`.
pub fn strong_aug_with(image: &Image, p: StrongParams) -> Image {
    let mut out = weak_aug_with(image, p.weak);
    match p.photometric {
        Photometric::Brightness(f) => out.data.iter_mut().for_each(|v| *v *= f),
        Photometric::Contrast(f) => {
            let mean = out.data.iter().sum::<f32>() / out.data.len() as f32;
            out.data
                .iter_mut()
                .for_each(|v| *v = mean + (*v - mean) * f);
        }
        Photometric::Posterize(bits) => {
            let levels = ((1u32 << bits) - 1) as f32;
            out.data
                .iter_mut()
                .for_each(|v| *v = libm::roundf(v.clamp(0.0, 1.0) * levels) / levels);
        }
    }
    out.clamp01();
    let side = (out.height / 4) as i32;
    let y0 = p.cutout_y.max(0);
    let y1 = (p.cutout_y + side).min(out.height as i32);
    let x0 = p.cutout_x.max(0);
    let x1 = (p.cutout_x + side).min(out.width as i32);
    for c in 0..out.channels {
        for y in y0..y1 {
            for x in x0..x1 {
                out.set(c, y as usize, x as usize, 0.5);
            }
        }
    }
    out
}

pub fn strong_aug(image: &Image, rng: &mut Rng) -> Image {
    let p = sample_strong(image.height, rng);
    strong_aug_with(image, p)
}
