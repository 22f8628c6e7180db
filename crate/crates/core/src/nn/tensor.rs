use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::raster::{Image, SoftMask};

/// Floating-point element type of the engine (f32 for training, f64 for gradient checks).
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Self { shape, data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: [1, 1, 1, 1], data: vec![v] }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks RGB images into an `[N, 3, H, W]` tensor.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::shape("no images to stack"))?;
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for img in images {
            if img.dims() != (w, h) {
                return Err(Error::shape("images in a batch must share dimensions"));
            }
            for c in 0..3 {
                data.extend(img.data().chunks_exact(3).map(|px| T::lit(px[c] as f64)));
            }
        }
        Ok(Self::new([images.len(), 3, h, w], data))
    }

    pub fn from_image(image: &Image) -> Self {
        Self::from_images(&[image]).expect("single image")
    }

    /// Stacks masks into an `[N, 1, H, W]` tensor.
    pub fn from_masks(masks: &[&SoftMask]) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::shape("no masks to stack"))?;
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(masks.len() * w * h);
        for m in masks {
            if m.dims() != (w, h) {
                return Err(Error::shape("masks in a batch must share dimensions"));
            }
            data.extend(m.data().iter().map(|&v| T::lit(v as f64)));
        }
        Ok(Self::new([masks.len(), 1, h, w], data))
    }

    /// Sample `n` of a 3-channel tensor as an image (values clamped to [0,1]).
    pub fn to_image(&self, n: usize) -> Image {
        let [_, c, h, w] = self.shape;
        assert_eq!(c, 3, "to_image needs 3 channels");
        let plane = h * w;
        let base = n * 3 * plane;
        let mut data = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for k in 0..3 {
                data.push(self.data[base + k * plane + i].as_f32());
            }
        }
        Image::from_raw(w, h, data).expect("sized by construction")
    }

    /// Sample `n` of a single-channel tensor as a mask (values clamped to [0,1]).
    pub fn to_mask(&self, n: usize) -> SoftMask {
        let [_, c, h, w] = self.shape;
        assert_eq!(c, 1, "to_mask needs 1 channel");
        let plane = h * w;
        let data = self.data[n * plane..(n + 1) * plane].iter().map(|v| v.as_f32()).collect();
        SoftMask::from_raw(w, h, data).expect("sized by construction")
    }

    /// Repeats a `[1, C, H, W]` tensor `n` times along the batch axis.
    pub fn repeat_batch(&self, n: usize) -> Self {
        assert_eq!(self.shape[0], 1);
        let mut data = Vec::with_capacity(self.data.len() * n);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Self::new([n, self.shape[1], self.shape[2], self.shape[3]], data)
    }

    /// Repeats a `[N, 1, H, W]` tensor `c` times along the channel axis.
    pub fn repeat_channels(&self, c: usize) -> Self {
        assert_eq!(self.shape[1], 1);
        let [n, _, h, w] = self.shape;
        let plane = h * w;
        let mut data = Vec::with_capacity(self.data.len() * c);
        for ni in 0..n {
            for _ in 0..c {
                data.extend_from_slice(&self.data[ni * plane..(ni + 1) * plane]);
            }
        }
        Self::new([n, c, h, w], data)
    }
}
