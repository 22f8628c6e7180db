//! The fixed UV parameterization: valid face region and universal cosmetic region masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{SoftMask, WORKING_SIZE};

/// Cosmetic regions used by the histogram loss and partial transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Eyes,
    Lips,
    Skin,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Eyes, Region::Lips, Region::Skin];

    pub fn name(self) -> &'static str {
        match self {
            Region::Eyes => "eyes",
            Region::Lips => "lips",
            Region::Skin => "skin",
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eyes" | "eye" => Ok(Region::Eyes),
            "lips" | "lip" => Ok(Region::Lips),
            "skin" => Ok(Region::Skin),
            other => Err(Error::param(format!("unknown region `{other}` (expected lips, eyes or skin)"))),
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Soft masks for the eyes, lips and skin regions, disjoint at threshold 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMaskSet {
    pub eyes: SoftMask,
    pub lips: SoftMask,
    pub skin: SoftMask,
}

impl RegionMaskSet {
    pub fn get(&self, region: Region) -> &SoftMask {
        match region {
            Region::Eyes => &self.eyes,
            Region::Lips => &self.lips,
            Region::Skin => &self.skin,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Region, &SoftMask)> {
        Region::ALL.into_iter().map(move |r| (r, self.get(r)))
    }

    /// Writes `eyes.png`, `lips.png`, `skin.png` as 8-bit gray masks.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (region, mask) in self.iter() {
            mask.save_png(dir.join(format!("{}.png", region.name())))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |r: Region| SoftMask::load(dir.join(format!("{}.png", r.name())));
        Ok(Self { eyes: load(Region::Eyes)?, lips: load(Region::Lips)?, skin: load(Region::Skin)? })
    }
}

/// Normalized ellipse in UV coordinates (u, v in [0,1], v grows downward).
#[derive(Clone, Copy, Debug)]
struct UvEllipse {
    cu: f32,
    cv: f32,
    ru: f32,
    rv: f32,
}

impl UvEllipse {
    fn radius(&self, u: f32, v: f32) -> f32 {
        (((u - self.cu) / self.ru).powi(2) + ((v - self.cv) / self.rv).powi(2)).sqrt()
    }
}

const FACE: UvEllipse = UvEllipse { cu: 0.5, cv: 0.5, ru: 0.45, rv: 0.47 };
const EYE_LEFT: UvEllipse = UvEllipse { cu: 0.36, cv: 0.40, ru: 0.085, rv: 0.05 };
const EYE_RIGHT: UvEllipse = UvEllipse { cu: 0.64, cv: 0.40, ru: 0.085, rv: 0.05 };
const LIPS: UvEllipse = UvEllipse { cu: 0.5, cv: 0.74, ru: 0.11, rv: 0.05 };
const CHEEK_CENTERS: [(f32, f32); 2] = [(0.28, 0.60), (0.72, 0.60)];
const CHEEK_DIAMETER: f32 = 0.2;

/// Soft ellipse edge: 1 inside 0.85·r, 0 beyond 1.15·r, smoothstep between.
fn soft_edge(r: f32) -> f32 {
    let t = ((1.15 - r) / 0.3).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// UV layout shared by every position map a provider produces.
#[derive(Clone, Debug, PartialEq)]
pub struct UvLayout {
    width: usize,
    height: usize,
    valid: Vec<bool>,
    regions: RegionMaskSet,
}

impl Default for UvLayout {
    fn default() -> Self {
        Self::face(WORKING_SIZE, WORKING_SIZE)
    }
}

impl UvLayout {
    /// The shipped face layout at the given UV resolution.
    pub fn face(width: usize, height: usize) -> Self {
        let uv = |x: usize, y: usize| ((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = uv(x, y);
                valid.push(FACE.radius(u, v) <= 1.0);
            }
        }
        let inside = |x: usize, y: usize| valid[y * width + x];
        let eyes = SoftMask::from_fn(width, height, |x, y| {
            let (u, v) = uv(x, y);
            let w = soft_edge(EYE_LEFT.radius(u, v)).max(soft_edge(EYE_RIGHT.radius(u, v)));
            if inside(x, y) {
                w
            } else {
                0.0
            }
        });
        let lips = SoftMask::from_fn(width, height, |x, y| {
            let (u, v) = uv(x, y);
            if inside(x, y) {
                soft_edge(LIPS.radius(u, v))
            } else {
                0.0
            }
        });
        let skin =
            SoftMask::from_fn(
                width,
                height,
                |x, y| {
                    if inside(x, y) {
                        1.0 - eyes.get(x, y) - lips.get(x, y)
                    } else {
                        0.0
                    }
                },
            );
        Self { width, height, valid, regions: RegionMaskSet { eyes, lips, skin } }
    }

    /// Builds a layout from an externally supplied validity mask and region masks.
    pub fn from_parts(width: usize, height: usize, valid: Vec<bool>, mut regions: RegionMaskSet) -> Result<Self> {
        if valid.len() != width * height {
            return Err(Error::shape("validity mask size"));
        }
        for mask in [&mut regions.eyes, &mut regions.lips, &mut regions.skin] {
            if mask.dims() != (width, height) {
                return Err(Error::shape("region mask size"));
            }
            mask.restrict_to(&valid);
        }
        Ok(Self { width, height, valid, regions })
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

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_mask(&self) -> SoftMask {
        SoftMask::from_bools(self.width, self.height, &self.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Universal per-region soft masks.
    pub fn region_masks(&self) -> &RegionMaskSet {
        &self.regions
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the valid region.
    pub fn valid_bbox(&self) -> (usize, usize, usize, usize) {
        let mut bb = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(x, y) {
                    bb.0 = bb.0.min(x);
                    bb.1 = bb.1.min(y);
                    bb.2 = bb.2.max(x);
                    bb.3 = bb.3.max(y);
                }
            }
        }
        bb
    }

    /// Whether a UV point falls in the middle ninth of the valid bounding box.
    pub fn in_central_zone(&self, x: f32, y: f32) -> bool {
        let (x0, y0, x1, y1) = self.valid_bbox();
        let w = (x1 - x0 + 1) as f32;
        let h = (y1 - y0 + 1) as f32;
        let lx = x0 as f32 + w / 3.0;
        let ly = y0 as f32 + h / 3.0;
        x >= lx && x < lx + w / 3.0 && y >= ly && y < ly + h / 3.0
    }

    /// Cheek diameter in texels (horizontal extent of the cheek disc).
    pub fn cheek_diameter(&self) -> f32 {
        CHEEK_DIAMETER * self.width as f32
    }

    /// Cheek centers in texel coordinates.
    pub fn cheek_centers(&self) -> [(f32, f32); 2] {
        CHEEK_CENTERS.map(|(u, v)| (u * self.width as f32 - 0.5, v * self.height as f32 - 0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_disjoint_at_half() {
        let layout = UvLayout::default();
        let r = layout.region_masks();
        for i in 0..layout.width() * layout.height() {
            let on = [&r.eyes, &r.lips, &r.skin].iter().filter(|m| m.data()[i] > 0.5).count();
            assert!(on <= 1, "texel {i} in {on} regions");
        }
    }

    #[test]
    fn regions_inside_valid() {
        let layout = UvLayout::default();
        for (_, mask) in layout.region_masks().iter() {
            for (w, &ok) in mask.data().iter().zip(layout.valid()) {
                if !ok {
                    assert_eq!(*w, 0.0);
                }
            }
        }
    }

    #[test]
    fn lips_centroid_in_lower_third() {
        let layout = UvLayout::default();
        let lips = &layout.region_masks().lips;
        let (mut sum, mut sy) = (0.0f64, 0.0f64);
        for y in 0..layout.height() {
            for x in 0..layout.width() {
                let w = lips.get(x, y) as f64;
                sum += w;
                sy += w * y as f64;
            }
        }
        let cy = sy / sum;
        let (_, y0, _, y1) = layout.valid_bbox();
        let lower_third = y0 as f64 + (y1 - y0) as f64 * 2.0 / 3.0;
        assert!(cy > lower_third, "centroid {cy} vs {lower_third}");
    }

    #[test]
    fn region_names_parse() {
        assert_eq!("Lips".parse::<Region>().unwrap(), Region::Lips);
        assert!("nose".parse::<Region>().is_err());
    }
}
