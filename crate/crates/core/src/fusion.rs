//! Blending of branch outputs: pattern fusion, style interpolation and
//! partial (per-region) transfer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_same_dims, Image, SoftMask, TextureMap};
use crate::uvgeom::{Region, RegionMaskSet};

/// Which face regions receive the transferred style.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionSelection {
    #[default]
    FullFace,
    Regions(BTreeSet<Region>),
}

impl RegionSelection {
    pub fn only(regions: impl IntoIterator<Item = Region>) -> Self {
        RegionSelection::Regions(regions.into_iter().collect())
    }

    /// Parses `lips,eyes,skin` style lists; `all` or `full` selects the full face.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") || s.eq_ignore_ascii_case("full") || s.eq_ignore_ascii_case("full-face") {
            return Ok(RegionSelection::FullFace);
        }
        let set =
            s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<BTreeSet<Region>>>()?;
        if set.is_empty() {
            return Err(Error::param("region selection is empty"));
        }
        Ok(RegionSelection::Regions(set))
    }

    pub fn is_full_face(&self) -> bool {
        matches!(self, RegionSelection::FullFace)
    }
}

/// Whose pattern is fused when two references are given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternSource {
    #[default]
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferRequest {
    pub use_color: bool,
    pub use_pattern: bool,
    /// Weight of the first style; the second style (or the bare source) gets 1 − α.
    pub alpha: f32,
    pub regions: RegionSelection,
    pub pattern_source: PatternSource,
    /// Recorded with the result; inference itself is deterministic.
    pub seed: u64,
}

impl Default for TransferRequest {
    fn default() -> Self {
        Self {
            use_color: true,
            use_pattern: true,
            alpha: 1.0,
            regions: RegionSelection::FullFace,
            pattern_source: PatternSource::First,
            seed: 0,
        }
    }
}

impl TransferRequest {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let RegionSelection::Regions(set) = &self.regions {
            if set.is_empty() {
                return Err(Error::param("partial transfer needs at least one region"));
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Texelwise `m·a + (1−m)·b`.
pub fn blend(a: &TextureMap, b: &TextureMap, mask: &SoftMask) -> Result<TextureMap> {
    check_same_dims(a.dims(), b.dims(), "blend")?;
    check_same_dims(a.dims(), mask.dims(), "blend mask")?;
    let (w, h) = a.dims();
    let mut data = Vec::with_capacity(w * h * 3);
    for ((pa, pb), &m) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).zip(mask.data()) {
        for c in 0..3 {
            data.push(m * pa[c] + (1.0 - m) * pb[c]);
        }
    }
    Ok(TextureMap::from_image(Image::from_raw(w, h, data)?))
}

/// Places the reference pattern over the color-transferred texture:
/// `t_ref·Γ + t_color·(1−Γ)`.
pub fn fuse(t_ref: &TextureMap, t_color: &TextureMap, mask: &SoftMask) -> Result<TextureMap> {
    blend(t_ref, t_color, mask)
}

/// `α·t_a + (1−α)·t_b`.
pub fn interpolate(t_a: &TextureMap, t_b: &TextureMap, alpha: f32) -> Result<TextureMap> {
    check_alpha(alpha)?;
    check_same_dims(t_a.dims(), t_b.dims(), "interpolate")?;
    let (w, h) = t_a.dims();
    let data = t_a.data().iter().zip(t_b.data()).map(|(&a, &b)| alpha * a + (1.0 - alpha) * b).collect();
    Ok(TextureMap::from_image(Image::from_raw(w, h, data)?))
}

/// Union of the selected soft masks (clamped sum); the full face selects everything.
pub fn selection_mask(regions: &RegionMaskSet, selection: &RegionSelection) -> Result<SoftMask> {
    let (w, h) = regions.skin.dims();
    match selection {
        RegionSelection::FullFace => Ok(SoftMask::filled(w, h, 1.0)),
        RegionSelection::Regions(set) if set.is_empty() => {
            Err(Error::param("partial transfer needs at least one region"))
        }
        RegionSelection::Regions(set) => {
            let mut data = vec![0.0f32; w * h];
            for r in set {
                for (d, &v) in data.iter_mut().zip(regions.get(*r).data()) {
                    *d += v;
                }
            }
            SoftMask::from_raw(w, h, data)
        }
    }
}

/// Applies `t_full` only inside the selected regions: `M·t_full + (1−M)·t_src`.
pub fn partial_apply(
    t_src: &TextureMap,
    t_full: &TextureMap,
    regions: &RegionMaskSet,
    selection: &RegionSelection,
) -> Result<TextureMap> {
    let m = selection_mask(regions, selection)?;
    blend(t_full, t_src, &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32) -> TextureMap {
        TextureMap::from_image(Image::filled(4, 4, [v; 3]))
    }

    #[test]
    fn fuse_endpoints() {
        let (r, c) = (constant(1.0), constant(0.0));
        assert_eq!(fuse(&r, &c, &SoftMask::zeros(4, 4)).unwrap(), c);
        assert_eq!(fuse(&r, &c, &SoftMask::filled(4, 4, 1.0)).unwrap(), r);
        assert_eq!(fuse(&r, &c, &SoftMask::filled(4, 4, 0.5)).unwrap(), constant(0.5));
    }

    #[test]
    fn interpolation_examples() {
        let (a, b) = (constant(0.8), constant(0.4));
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
        assert!(interpolate(&a, &b, 0.25).unwrap().data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(interpolate(&a, &b, 1.5).is_err());
        assert!(interpolate(&a, &b, f32::NAN).is_err());
    }

    #[test]
    fn region_selection_parsing() {
        assert_eq!(RegionSelection::parse("all").unwrap(), RegionSelection::FullFace);
        assert_eq!(RegionSelection::parse("lips, eyes").unwrap(), RegionSelection::only([Region::Lips, Region::Eyes]));
        assert!(RegionSelection::parse("").is_err());
        assert!(RegionSelection::parse("nose").is_err());
        let req = TransferRequest { regions: RegionSelection::Regions(BTreeSet::new()), ..Default::default() };
        assert!(req.validate().is_err());
    }
}
