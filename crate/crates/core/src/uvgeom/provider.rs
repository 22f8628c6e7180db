//! Geometry providers: image → UV position map.
//!
//! A production deployment plugs an external face reconstructor in through
//! [`PrecomputedProvider`] (position maps produced offline and stored as UVPM
//! files). The parametric head below stands in for it in tests and synthetic
//! data generation.

use std::collections::HashMap;
use std::f32::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::UvLayout;
use super::position::PositionMap;
use super::render::rasterize_coverage;
use crate::error::GeometryError;
use crate::raster::{quantize_u8, Image};

/// Longitude span of the UV u axis (radians across u ∈ [0,1]).
const LON_SPAN: f32 = PI;
/// Latitude span of the UV v axis.
const LAT_SPAN: f32 = 0.8 * PI;

pub trait GeometryProvider: Send + Sync {
    /// The fixed UV layout every produced position map uses.
    fn layout(&self) -> &UvLayout;

    /// Reconstructs the face geometry of `image`. Must be deterministic.
    fn position_map(&self, image: &Image) -> Result<PositionMap, GeometryError>;

    fn name(&self) -> &'static str;
}

/// Pose and shape of the parametric ellipsoidal head, in image pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub center: [f32; 2],
    /// Semi-axes (width, height, depth) in pixels.
    pub semi_axes: [f32; 3],
    pub yaw: f32,
    pub pitch: f32,
    pub roll: f32,
}

impl HeadPose {
    pub fn frontal(center: [f32; 2], semi_axes: [f32; 3]) -> Self {
        Self { center, semi_axes, yaw: 0.0, pitch: 0.0, roll: 0.0 }
    }

    /// Frontal head centered in a 256×256 frame.
    pub fn canonical() -> Self {
        Self::frontal([127.5, 127.5], [82.0, 104.0, 82.0])
    }

    pub fn with_yaw(mut self, yaw: f32) -> Self {
        self.yaw = yaw;
        self
    }

    /// Camera-space point for a UV texel (x, y) on a `w`×`h` grid.
    pub fn surface_point(&self, x: usize, y: usize, w: usize, h: usize) -> [f32; 3] {
        let u = (x as f32 + 0.5) / w as f32;
        let v = (y as f32 + 0.5) / h as f32;
        let lon = (u - 0.5) * LON_SPAN;
        let lat = (0.5 - v) * LAT_SPAN;
        let [ax, ay, az] = self.semi_axes;
        let p = [ax * lon.sin() * lat.cos(), -ay * lat.sin(), az * lon.cos() * lat.cos()];
        let p = rotate(p, self.yaw, self.pitch, self.roll);
        [self.center[0] + p[0], self.center[1] + p[1], p[2]]
    }

    /// Position map of this head over `layout`.
    pub fn position_map(&self, layout: &UvLayout) -> PositionMap {
        let (w, h) = layout.dims();
        let mut coords = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                coords.push(if layout.is_valid(x, y) { self.surface_point(x, y, w, h) } else { [0.0; 3] });
            }
        }
        PositionMap::new(w, h, coords, layout.valid().to_vec()).expect("parametric coordinates are finite")
    }
}

/// Yaw about the vertical axis, then pitch about the horizontal axis, then roll in-plane.
fn rotate(p: [f32; 3], yaw: f32, pitch: f32, roll: f32) -> [f32; 3] {
    let (sy, cy) = yaw.sin_cos();
    let p = [p[0] * cy + p[2] * sy, p[1], -p[0] * sy + p[2] * cy];
    let (sp, cp) = pitch.sin_cos();
    let p = [p[0], p[1] * cp - p[2] * sp, p[1] * sp + p[2] * cp];
    let (sr, cr) = roll.sin_cos();
    [p[0] * cr - p[1] * sr, p[0] * sr + p[1] * cr, p[2]]
}

fn check_bounds(pm: PositionMap, image: &Image) -> Result<PositionMap, GeometryError> {
    if pm.fits_image(image.width(), image.height()) {
        Ok(pm)
    } else {
        Err(GeometryError::OutOfBounds { width: image.width(), height: image.height() })
    }
}

/// Returns the same head pose for every image.
#[derive(Clone, Debug)]
pub struct FixedPoseProvider {
    layout: UvLayout,
    pose: HeadPose,
}

impl FixedPoseProvider {
    pub fn new(layout: UvLayout, pose: HeadPose) -> Self {
        Self { layout, pose }
    }

    pub fn pose(&self) -> &HeadPose {
        &self.pose
    }
}

impl GeometryProvider for FixedPoseProvider {
    fn layout(&self) -> &UvLayout {
        &self.layout
    }

    fn position_map(&self, image: &Image) -> Result<PositionMap, GeometryError> {
        check_bounds(self.pose.position_map(&self.layout), image)
    }

    fn name(&self) -> &'static str {
        "fixed-pose"
    }
}

/// Fits a frontal parametric head to the face silhouette.
///
/// Foreground is every pixel whose color differs from the border median by more
/// than `threshold` in some channel. The head center is the silhouette centroid
/// and the semi-axes follow from its second moments, calibrated once against the
/// rasterized coverage of a known head.
#[derive(Clone, Debug)]
pub struct SilhouetteProvider {
    layout: UvLayout,
    threshold: f32,
    /// Silhouette standard deviation per unit semi-axis, (x, y).
    spread: [f32; 2],
}

impl SilhouetteProvider {
    pub fn new(layout: UvLayout) -> Self {
        let pose = HeadPose::frontal([127.5, 127.5], [80.0, 100.0, 80.0]);
        let coverage = rasterize_coverage(&pose.position_map(&layout), 256, 256);
        let stats = moments(&coverage, 256).expect("calibration head is non-empty");
        let spread = [stats.sigma[0] / pose.semi_axes[0], stats.sigma[1] / pose.semi_axes[1]];
        Self { layout, threshold: 0.08, spread }
    }

    /// Fitted pose for an image, without building the position map.
    pub fn fit(&self, image: &Image) -> Result<HeadPose, GeometryError> {
        let (w, h) = image.dims();
        if w < 16 || h < 16 {
            return Err(GeometryError::NoFace(format!("image {w}x{h} is too small")));
        }
        let bg = border_median(image);
        let fg: Vec<bool> = image
            .data()
            .chunks_exact(3)
            .map(|px| px.iter().zip(bg).any(|(v, b)| (v - b).abs() > self.threshold))
            .collect();
        let count = fg.iter().filter(|&&b| b).count();
        let frac = count as f32 / (w * h) as f32;
        if !(0.01..=0.85).contains(&frac) {
            return Err(GeometryError::NoFace(format!("foreground covers {:.1}% of the image", frac * 100.0)));
        }
        let stats = moments(&fg, w).ok_or_else(|| GeometryError::NoFace("empty silhouette".into()))?;
        let ax = stats.sigma[0] / self.spread[0];
        let ay = stats.sigma[1] / self.spread[1];
        Ok(HeadPose::frontal(stats.centroid, [ax, ay, ax]))
    }
}

impl GeometryProvider for SilhouetteProvider {
    fn layout(&self) -> &UvLayout {
        &self.layout
    }

    fn position_map(&self, image: &Image) -> Result<PositionMap, GeometryError> {
        let pose = self.fit(image)?;
        check_bounds(pose.position_map(&self.layout), image)
    }

    fn name(&self) -> &'static str {
        "silhouette"
    }
}

struct Moments {
    centroid: [f32; 2],
    sigma: [f32; 2],
}

fn moments(mask: &[bool], width: usize) -> Option<Moments> {
    let (mut n, mut sx, mut sy, mut sxx, mut syy) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let x = (i % width) as f64;
        let y = (i / width) as f64;
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
    }
    if n == 0.0 {
        return None;
    }
    let (mx, my) = (sx / n, sy / n);
    Some(Moments {
        centroid: [mx as f32, my as f32],
        sigma: [(sxx / n - mx * mx).max(0.0).sqrt() as f32, (syy / n - my * my).max(0.0).sqrt() as f32],
    })
}

fn border_median(image: &Image) -> [f32; 3] {
    let (w, h) = image.dims();
    let mut chans: [Vec<f32>; 3] = Default::default();
    let mut push = |x: usize, y: usize| {
        let p = image.get(x, y);
        for k in 0..3 {
            chans[k].push(p[k]);
        }
    };
    for x in 0..w {
        push(x, 0);
        push(x, h - 1);
    }
    for y in 1..h - 1 {
        push(0, y);
        push(w - 1, y);
    }
    chans.map(|mut c| {
        c.sort_by(f32::total_cmp);
        c[c.len() / 2]
    })
}

/// Content hash of an image at 8-bit precision, stable across PNG round trips.
pub fn image_key(image: &Image) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((image.width() as u32).to_le_bytes());
    hasher.update((image.height() as u32).to_le_bytes());
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
    hasher.update(&bytes);
    hasher.finalize().into()
}

/// Serves externally reconstructed position maps keyed by image content,
/// optionally falling back to another provider.
pub struct PrecomputedProvider {
    layout: UvLayout,
    maps: HashMap<[u8; 32], PositionMap>,
    fallback: Option<Box<dyn GeometryProvider>>,
}

impl PrecomputedProvider {
    pub fn new(layout: UvLayout) -> Self {
        Self { layout, maps: HashMap::new(), fallback: None }
    }

    pub fn with_fallback(mut self, fallback: Box<dyn GeometryProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    /// Registers the geometry of `image`. The map must use this provider's layout.
    pub fn register(&mut self, image: &Image, map: PositionMap) -> Result<(), GeometryError> {
        let (uv_w, uv_h) = self.layout.dims();
        if map.dims() != (uv_w, uv_h) || map.valid() != self.layout.valid() {
            return Err(GeometryError::LayoutMismatch { pos_w: map.width(), pos_h: map.height(), uv_w, uv_h });
        }
        self.maps.insert(image_key(image), map);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl GeometryProvider for PrecomputedProvider {
    fn layout(&self) -> &UvLayout {
        &self.layout
    }

    fn position_map(&self, image: &Image) -> Result<PositionMap, GeometryError> {
        match self.maps.get(&image_key(image)) {
            Some(map) => check_bounds(map.clone(), image),
            None => match &self.fallback {
                Some(fb) => fb.position_map(image),
                None => Err(GeometryError::Unregistered),
            },
        }
    }

    fn name(&self) -> &'static str {
        "precomputed"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uvgeom::render::render;

    #[test]
    fn parametric_map_is_deterministic_and_in_bounds() {
        let layout = UvLayout::default();
        let a = HeadPose::canonical().position_map(&layout);
        let b = HeadPose::canonical().position_map(&layout);
        assert_eq!(a, b);
        assert!(a.fits_image(256, 256));
        assert_eq!(a.valid(), layout.valid());
    }

    #[test]
    fn silhouette_fit_recovers_pose() {
        let layout = UvLayout::default();
        let provider = SilhouetteProvider::new(layout.clone());
        let truth = HeadPose::frontal([120.0, 131.0], [76.0, 98.0, 76.0]);
        let pm = truth.position_map(&layout);
        let tex = crate::raster::TextureMap::new(Image::filled(256, 256, [0.85, 0.6, 0.5]), layout.valid()).unwrap();
        let bg = Image::filled(256, 256, [0.2, 0.3, 0.45]);
        let img = render(&pm, &tex, &bg).unwrap().image;
        let fit = provider.fit(&img).unwrap();
        assert!((fit.center[0] - 120.0).abs() < 1.0, "{fit:?}");
        assert!((fit.center[1] - 131.0).abs() < 1.0, "{fit:?}");
        assert!((fit.semi_axes[0] - 76.0).abs() < 2.0, "{fit:?}");
        assert!((fit.semi_axes[1] - 98.0).abs() < 2.0, "{fit:?}");
    }

    #[test]
    fn uniform_image_has_no_face() {
        let provider = SilhouetteProvider::new(UvLayout::default());
        let err = provider.position_map(&Image::filled(256, 256, [0.5; 3])).unwrap_err();
        assert!(matches!(err, GeometryError::NoFace(_)));
    }

    #[test]
    fn fixed_provider_rejects_small_image() {
        let provider = FixedPoseProvider::new(UvLayout::default(), HeadPose::canonical());
        assert!(provider.position_map(&Image::new(256, 256)).is_ok());
        assert!(matches!(provider.position_map(&Image::new(64, 64)), Err(GeometryError::OutOfBounds { .. })));
    }

    #[test]
    fn precomputed_provider_lookup_and_fallback() {
        let layout = UvLayout::default();
        let img = Image::filled(256, 256, [0.1, 0.2, 0.3]);
        let pm = HeadPose::canonical().position_map(&layout);
        let mut p = PrecomputedProvider::new(layout.clone());
        p.register(&img, pm.clone()).unwrap();
        assert_eq!(p.position_map(&img).unwrap(), pm);
        assert!(matches!(p.position_map(&Image::new(256, 256)), Err(GeometryError::Unregistered)));
        let p = p.with_fallback(Box::new(FixedPoseProvider::new(layout, HeadPose::canonical())));
        assert!(p.position_map(&Image::new(256, 256)).is_ok());
    }
}
