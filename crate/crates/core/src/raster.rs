//! Plain float rasters: RGB images, UV texture maps and single-channel soft masks.

use std::ops::Deref;
use std::path::Path;

use image::{GrayImage, RgbImage, RgbaImage};

use crate::error::{Error, Result};

/// Default working resolution for images and UV maps.
pub const WORKING_SIZE: usize = 256;

/// H×W×3 raster, interleaved RGB, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    /// Wraps raw interleaved data. Values are clamped into [0,1]; NaN becomes 0.
    pub fn from_raw(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "raw buffer of {} values does not describe a {width}x{height} RGB image",
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers on integers),
    /// clamping to the border.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Texelwise product with a single-channel mask.
    pub fn masked(&self, mask: &SoftMask) -> Result<Image> {
        check_same_dims(self.dims(), mask.dims(), "image/mask")?;
        let mut out = self.clone();
        for (px, &m) in out.data.chunks_exact_mut(3).zip(mask.data()) {
            px.iter_mut().for_each(|v| *v *= m);
        }
        Ok(out)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let buf = self.data.iter().map(|&v| quantize_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized by construction")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self { width: img.width() as usize, height: img.height() as usize, data }
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        Self::from_rgb8(&img.to_rgb8())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Round-trips through 8-bit storage, as saving and reloading a PNG would.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect();
        Image { width: self.width, height: self.height, data }
    }

    /// Box-filter downscale by an integer factor (dims must divide).
    pub fn downscale(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::param(format!("cannot downscale {}x{} by {factor}", self.width, self.height)));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        Ok(Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = self.get(x * factor + dx, y * factor + dy);
                    acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                }
            }
            acc.map(|v| v * norm)
        }))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn check_same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// UV-indexed color raster. Texels outside the layout's valid region are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap(Image);

impl TextureMap {
    /// Wraps an image as a texture, zeroing everything outside `valid`.
    pub fn new(mut texels: Image, valid: &[bool]) -> Result<Self> {
        if valid.len() != texels.width() * texels.height() {
            return Err(Error::shape("validity mask does not match texture size"));
        }
        texels.clamp01();
        for (px, &ok) in texels.data_mut().chunks_exact_mut(3).zip(valid) {
            if !ok {
                px.fill(0.0);
            }
        }
        Ok(Self(texels))
    }

    /// Wraps an image whose invariants the caller already guarantees.
    pub fn from_image(texels: Image) -> Self {
        Self(texels)
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

impl Deref for TextureMap {
    type Target = Image;

    fn deref(&self) -> &Image {
        &self.0
    }
}

/// Single-channel soft mask with weights in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Predicted or ground-truth pattern mask in UV space.
pub type PatternMask = SoftMask;

impl SoftMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!("{} weights for a {width}x{height} mask", data.len())));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, data })
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height);
        Self { width, height, data: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Strict threshold: a texel is on when its weight exceeds `threshold`.
    pub fn binarize(&self, threshold: f32) -> Vec<bool> {
        self.data.iter().map(|&v| v > threshold).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_empty_at(&self, threshold: f32) -> bool {
        self.data.iter().all(|&v| v <= threshold)
    }

    /// Zeroes every texel outside `valid`.
    pub fn restrict_to(&mut self, valid: &[bool]) {
        for (v, &ok) in self.data.iter_mut().zip(valid) {
            if !ok {
                *v = 0.0;
            }
        }
    }

    pub fn to_gray8(&self) -> GrayImage {
        let buf = self.data.iter().map(|&v| quantize_u8(v)).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized by construction")
    }

    /// Loads an 8-bit mask PNG; weight = value / 255.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_luma8();
        Ok(Self::from_gray8(&img))
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_gray8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_gray8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// RGBA raster with straight (non-premultiplied) alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbaRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbaRaster {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 4]) -> Self {
        let mut data = Vec::with_capacity(width * height * 4);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    /// Bilinear sample in premultiplied space; returns straight RGB and alpha.
    /// Coordinates outside the raster are fully transparent.
    pub fn sample(&self, x: f32, y: f32) -> ([f32; 3], f32) {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut pre = [0.0f32; 3];
        let mut alpha = 0.0f32;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (sx, sy) = (x0 as i64 + dx, y0 as i64 + dy);
                if sx < 0 || sy < 0 || sx >= self.width as i64 || sy >= self.height as i64 {
                    continue;
                }
                let w = wx * wy;
                let p = self.get(sx as usize, sy as usize);
                alpha += w * p[3];
                for k in 0..3 {
                    pre[k] += w * p[3] * p[k];
                }
            }
        }
        if alpha <= 1e-8 {
            return ([0.0; 3], 0.0);
        }
        (pre.map(|v| (v / alpha).clamp(0.0, 1.0)), alpha.clamp(0.0, 1.0))
    }

    pub fn to_rgba8(&self) -> RgbaImage {
        let buf = self.data.iter().map(|&v| quantize_u8(v)).collect();
        RgbaImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized by construction")
    }

    pub fn from_rgba8(img: &RgbaImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }
}
