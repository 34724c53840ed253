use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A dense image with values in `[0, 1]`, stored planar (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// `[batch, channel, height, width]` array of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract(alloc::format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if expected != data.len() {
            return Err(Error::Shape {
                what: "tensor data length",
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    /// Stacks same-shaped images into a batch.
    pub fn from_images<'a, I>(images: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Image>,
    {
        let mut data = Vec::new();
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut batch = 0;
        for img in images {
            let d = (img.channels, img.height, img.width);
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Shape {
                        what: "image size within batch",
                        expected: prev.0 * prev.1 * prev.2,
                        actual: d.0 * d.1 * d.2,
                    })
                }
                _ => {}
            }
            data.extend_from_slice(&img.data);
            batch += 1;
        }
        let (c, h, w) = dims.ok_or(Error::Contract("empty image batch".into()))?;
        Tensor4::from_vec([batch, c, h, w], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Contiguous `[channel, height, width]` block of sample `b`.
    pub fn sample(&self, b: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn image(&self, b: usize) -> Image {
        Image {
            channels: self.shape[1],
            height: self.shape[2],
            width: self.shape[3],
            data: self.sample(b).to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        assert!(matches!(
            Tensor4::from_vec([1, 2, 2, 2], vec![0.0; 7]),
            Err(Error::Shape { .. })
        ));
        assert!(Tensor4::from_vec([0, 2, 2, 2], vec![]).is_err());
    }

    #[test]
    fn stacking_keeps_sample_order() {
        let a = Image::filled(1, 2, 2, 0.25);
        let b = Image::filled(1, 2, 2, 0.75);
        let t = Tensor4::from_images([&a, &b]).unwrap();
        assert_eq!(t.shape(), [2, 1, 2, 2]);
        assert_eq!(t.image(1), b);
        let odd = Image::filled(1, 3, 2, 0.0);
        assert!(Tensor4::from_images([&a, &odd]).is_err());
    }
}
