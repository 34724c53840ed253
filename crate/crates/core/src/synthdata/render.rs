use rand::Rng as _;

use crate::rng::{standard_normal, Rng};
use crate::tensor::Image;

/// Standard deviation of the additive pixel noise.
pub const NOISE_SIGMA: f32 = 0.05;

/// Shape families, indexed by class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disk,
    SquareOutline,
    Plus,
    Stripes,
    Triangle,
    Checker,
    Saltire,
    /// `Plus` with its centre square cut out.
    PlusGap,
    /// `SquareOutline` with a dot in the middle.
    SquareOutlineDot,
    /// `Disk` with a small concentric hole.
    DiskHole,
}

/// Class `c` renders `SHAPES[c]`. The three hard pairs couple a head class
/// with a tail class: (0, 9), (1, 8) and (2, 7).
pub const SHAPES: [Shape; 10] = [
    Shape::Disk,
    Shape::SquareOutline,
    Shape::Plus,
    Shape::Stripes,
    Shape::Triangle,
    Shape::Checker,
    Shape::Saltire,
    Shape::PlusGap,
    Shape::SquareOutlineDot,
    Shape::DiskHole,
];

const HOLE_RADIUS: f32 = 0.25;
const OUTLINE_INNER: f32 = 0.68;
const DOT_HALF: f32 = 0.14;
const ARM_HALF: f32 = 0.26;
const GAP_HALF: f32 = 0.14;

impl Shape {
    /// Membership test in shape-local coordinates, where the shape fills
    /// roughly `[-1, 1]^2`.
    pub fn contains(self, u: f32, v: f32) -> bool {
        let r2 = u * u + v * v;
        let box_norm = u.abs().max(v.abs());
        let plus =
            (u.abs() <= ARM_HALF && v.abs() <= 1.0) || (v.abs() <= ARM_HALF && u.abs() <= 1.0);
        let outline = box_norm <= 1.0 && box_norm >= OUTLINE_INNER;
        match self {
            Shape::Disk => r2 <= 1.0,
            Shape::DiskHole => r2 <= 1.0 && r2 > HOLE_RADIUS * HOLE_RADIUS,
            Shape::SquareOutline => outline,
            Shape::SquareOutlineDot => outline || box_norm <= DOT_HALF,
            Shape::Plus => plus,
            Shape::PlusGap => plus && box_norm > GAP_HALF,
            Shape::Stripes => box_norm <= 1.0 && (libm::floorf((v + 1.0) * 2.5) as i32) % 2 == 0,
            Shape::Triangle => v.abs() <= 1.0 && u.abs() <= (v + 1.0) * 0.5,
            Shape::Checker => {
                box_norm <= 1.0
                    && (libm::floorf((u + 1.0) * 2.0) as i32 + libm::floorf((v + 1.0) * 2.0) as i32)
                        % 2
                        == 0
            }
            Shape::Saltire => {
                box_norm <= 0.9 && (u.abs() - v.abs()).abs() <= ARM_HALF * core::f32::consts::SQRT_2
            }
        }
    }
}

/// Renders one sample of `class` with the default noise level.
pub fn render_class(class: usize, size: usize, rng: &mut Rng) -> Image {
    render_class_with(class, size, NOISE_SIGMA, rng)
}

/// Renders `SHAPES[class]` (2x2 supersampled coverage) at a random centre
/// offset (up to 1/16 of the side), radius (11/32 to 14/32 of the side),
/// foreground and background colour, then adds `N(0, noise^2)` pixel noise
/// and clamps to `[0, 1]`.
pub fn render_class_with(class: usize, size: usize, noise: f32, rng: &mut Rng) -> Image {
    let shape = SHAPES[class];
    let s = size as f32;
    let jitter = s / 16.0;
    let cx = s / 2.0 + rng.gen_range(-jitter..=jitter);
    let cy = s / 2.0 + rng.gen_range(-jitter..=jitter);
    let radius = s * rng.gen_range(11.0f32..=14.0) / 32.0;
    let fg: [f32; 3] = core::array::from_fn(|_| rng.gen_range(0.55f32..=1.0));
    let bg: [f32; 3] = core::array::from_fn(|_| rng.gen_range(0.0f32..=0.35));

    let mut image = Image::new(3, size, size);
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0u32;
            for sy in [0.25f32, 0.75] {
                for sx in [0.25f32, 0.75] {
                    let u = (x as f32 + sx - cx) / radius;
                    let v = (y as f32 + sy - cy) / radius;
                    hits += shape.contains(u, v) as u32;
                }
            }
            let coverage = hits as f32 / 4.0;
            for c in 0..3 {
                image.set(c, y, x, coverage * fg[c] + (1.0 - coverage) * bg[c]);
            }
        }
    }
    if noise > 0.0 {
        for v in &mut image.data {
            *v += noise * standard_normal(rng);
        }
    }
    image.clamp01();
    image
}
