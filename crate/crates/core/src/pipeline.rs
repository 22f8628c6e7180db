//! End-to-end transfer: unwrap both faces, run the color and pattern
//! branches, blend, and render back onto the source photo.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colorxfer::{ColorNet, ColorTransfer};
use crate::error::{Error, FaceRole, Result};
use crate::fusion::{blend, interpolate, partial_apply, PatternSource, TransferRequest};
use crate::metrics::regional_hist_distance;
use crate::patternseg::{PatternSegmenter, SegNet};
use crate::raster::{Image, PatternMask, SoftMask, TextureMap};
use crate::uvgeom::{extract_texture, render, GeometryProvider, PositionMap, Region, RegionMaskSet};

pub const COLOR_CHECKPOINT: &str = "color.ckpt";
pub const PATTERN_CHECKPOINT: &str = "pattern.ckpt";
/// A predicted mask with no texel above this is reported as "no pattern".
pub const PATTERN_PRESENCE_THRESHOLD: f32 = 0.5;

/// Trained networks stored side by side in a model directory.
#[derive(Clone, Debug, Default)]
pub struct ModelBundle {
    pub color: Option<ColorNet>,
    pub pattern: Option<SegNet>,
}

impl ModelBundle {
    /// Writes `color.ckpt` and/or `pattern.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some(c) = &self.color {
            c.save(dir.join(COLOR_CHECKPOINT))?;
        }
        if let Some(p) = &self.pattern {
            p.save(dir.join(PATTERN_CHECKPOINT))?;
        }
        Ok(())
    }

    /// Loads whichever checkpoints exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("model directory {} not found", dir.display()),
            )));
        }
        let color = dir.join(COLOR_CHECKPOINT);
        let pattern = dir.join(PATTERN_CHECKPOINT);
        Ok(Self {
            color: color.exists().then(|| ColorNet::load(&color)).transpose()?,
            pattern: pattern.exists().then(|| SegNet::load(&pattern)).transpose()?,
        })
    }
}

/// A reference face already unwrapped into UV space. The mask, when present,
/// is used instead of running the segmentation network.
#[derive(Clone, Debug)]
pub struct PreparedFace {
    pub position: PositionMap,
    pub texture: TextureMap,
    pub mask: Option<PatternMask>,
}

/// Per-stage wall time in milliseconds.
pub type Timings = BTreeMap<String, f64>;

/// Everything the output was composed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub source_texture: TextureMap,
    pub reference_textures: Vec<TextureMap>,
    /// Color-branch output per reference (the source texture when color is off).
    pub color_textures: Vec<TextureMap>,
    /// Mask of the pattern-source reference (zero when pattern is off).
    pub pattern_mask: PatternMask,
    pub output_texture: TextureMap,
}

impl Intermediates {
    /// Recomputes the output texture from the stored parts.
    pub fn recompose(&self, req: &TransferRequest, regions: &RegionMaskSet) -> Result<TextureMap> {
        compose(&self.source_texture, &self.reference_textures, &self.color_textures, &self.pattern_mask, req, regions)
    }

    /// Writes every intermediate as PNG into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.source_texture.save_png(dir.join("source_texture.png"))?;
        for (i, t) in self.reference_textures.iter().enumerate() {
            t.save_png(dir.join(format!("reference{}_texture.png", i + 1)))?;
        }
        for (i, t) in self.color_textures.iter().enumerate() {
            t.save_png(dir.join(format!("color{}_texture.png", i + 1)))?;
        }
        self.pattern_mask.save_png(dir.join("pattern_mask.png"))?;
        self.output_texture.save_png(dir.join("output_texture.png"))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    pub output: Image,
    pub intermediates: Intermediates,
    pub timings: Timings,
    /// Pattern transfer was on but the mask stayed empty, so only color was applied.
    pub pattern_empty: bool,
    pub request: TransferRequest,
}

#[derive(Serialize)]
struct ResultMeta<'a> {
    request: &'a TransferRequest,
    timings_ms: &'a Timings,
    pattern_empty: bool,
}

impl TransferResult {
    /// Writes intermediates plus `meta.json` (request, timings, flags).
    pub fn dump(&self, dir: &Path) -> Result<()> {
        self.intermediates.dump(dir)?;
        let meta = ResultMeta { request: &self.request, timings_ms: &self.timings, pattern_empty: self.pattern_empty };
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

/// Blends branch outputs into the final texture.
///
/// With pattern on, the pattern-source reference's style is its color output
/// with the reference texture fused in under the mask. Styles are interpolated
/// with weight α toward the first reference (the bare source stands in for a
/// missing second one), and finally restricted to the selected regions.
pub fn compose(
    source: &TextureMap,
    references: &[TextureMap],
    colors: &[TextureMap],
    mask: &PatternMask,
    req: &TransferRequest,
    regions: &RegionMaskSet,
) -> Result<TextureMap> {
    if references.is_empty() || references.len() > 2 || colors.len() != references.len() {
        return Err(Error::param("transfer needs one or two references with one color output each"));
    }
    let pattern_idx = pattern_index(req, references.len())?;
    let styles: Vec<TextureMap> = colors
        .iter()
        .enumerate()
        .map(|(i, c)| if req.use_pattern && i == pattern_idx { blend(&references[i], c, mask) } else { Ok(c.clone()) })
        .collect::<Result<_>>()?;
    let other = styles.get(1).unwrap_or(source);
    let mixed = if req.alpha == 1.0 { styles[0].clone() } else { interpolate(&styles[0], other, req.alpha)? };
    partial_apply(source, &mixed, regions, &req.regions)
}

fn pattern_index(req: &TransferRequest, n: usize) -> Result<usize> {
    match req.pattern_source {
        PatternSource::First => Ok(0),
        PatternSource::Second if n == 2 => Ok(1),
        PatternSource::Second => Err(Error::param("pattern source `second` needs a second reference")),
    }
}

/// The transfer function with its geometry provider and optional branch models.
pub struct Pipeline {
    provider: Arc<dyn GeometryProvider>,
    color: Option<Arc<dyn ColorTransfer>>,
    pattern: Option<Arc<dyn PatternSegmenter>>,
}

impl Pipeline {
    pub fn new(provider: Arc<dyn GeometryProvider>) -> Self {
        Self { provider, color: None, pattern: None }
    }

    pub fn with_color(mut self, color: Arc<dyn ColorTransfer>) -> Self {
        self.color = Some(color);
        self
    }

    pub fn with_pattern(mut self, pattern: Arc<dyn PatternSegmenter>) -> Self {
        self.pattern = Some(pattern);
        self
    }

    pub fn from_bundle(provider: Arc<dyn GeometryProvider>, bundle: ModelBundle) -> Self {
        let mut p = Self::new(provider);
        if let Some(c) = bundle.color {
            p = p.with_color(Arc::new(c));
        }
        if let Some(s) = bundle.pattern {
            p = p.with_pattern(Arc::new(s));
        }
        p
    }

    pub fn provider(&self) -> &dyn GeometryProvider {
        self.provider.as_ref()
    }

    pub fn has_color(&self) -> bool {
        self.color.is_some()
    }

    pub fn has_pattern(&self) -> bool {
        self.pattern.is_some()
    }

    /// Reconstructs and unwraps one face.
    pub fn unwrap_face(&self, image: &Image, role: FaceRole) -> Result<PreparedFace> {
        let position = self.provider.position_map(image).map_err(|e| Error::geometry(role, e))?;
        let texture = extract_texture(image, &position)?;
        Ok(PreparedFace { position, texture, mask: None })
    }

    /// Unwraps a reference and, when a segmentation model is loaded, stores its mask.
    pub fn prepare_reference(&self, image: &Image, role: FaceRole) -> Result<PreparedFace> {
        let mut face = self.unwrap_face(image, role)?;
        if let Some(p) = &self.pattern {
            face.mask = Some(p.segment(&face.texture, self.provider.layout().valid())?);
        }
        Ok(face)
    }

    /// Full transfer from images.
    pub fn transfer(
        &self,
        source: &Image,
        reference: &Image,
        reference2: Option<&Image>,
        req: &TransferRequest,
    ) -> Result<TransferResult> {
        let t0 = Instant::now();
        let src = self.unwrap_face(source, FaceRole::Source)?;
        let mut refs = vec![self.unwrap_face(reference, FaceRole::Reference)?];
        if let Some(r2) = reference2 {
            refs.push(self.unwrap_face(r2, FaceRole::Reference2)?);
        }
        let unwrap_ms = ms(t0);
        let mut res = self.transfer_prepared(source, &src, &refs, req)?;
        res.timings.insert("unwrap".into(), unwrap_ms);
        Ok(res)
    }

    /// Transfer from already unwrapped faces; `source` is the photo rendered onto.
    pub fn transfer_prepared(
        &self,
        source: &Image,
        src: &PreparedFace,
        refs: &[PreparedFace],
        req: &TransferRequest,
    ) -> Result<TransferResult> {
        req.validate()?;
        if refs.is_empty() || refs.len() > 2 {
            return Err(Error::param("transfer needs one or two references"));
        }
        let pattern_idx = pattern_index(req, refs.len())?;
        let color = match (&self.color, req.use_color) {
            (None, true) => return Err(Error::ModelMissing("color")),
            (c, _) => c.as_ref(),
        };
        let needs_segmentation = req.use_pattern && refs[pattern_idx].mask.is_none();
        if needs_segmentation && self.pattern.is_none() {
            return Err(Error::ModelMissing("pattern"));
        }
        let layout = self.provider.layout();
        let mut timings = Timings::new();

        // the branches share no state; run them side by side
        let (color_out, pattern_out) = rayon::join(
            || -> Result<(Vec<TextureMap>, f64)> {
                let t = Instant::now();
                let outs = refs
                    .iter()
                    .map(|r| match color {
                        Some(c) if req.use_color => Ok(c.swap(&src.texture, &r.texture)?.0),
                        _ => Ok(src.texture.clone()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((outs, ms(t)))
            },
            || -> Result<(PatternMask, f64)> {
                let t = Instant::now();
                let (w, h) = layout.dims();
                let r = &refs[pattern_idx];
                let mask = match (&r.mask, &self.pattern) {
                    _ if !req.use_pattern => SoftMask::zeros(w, h),
                    (Some(m), _) => m.clone(),
                    (None, Some(p)) => p.segment(&r.texture, layout.valid())?,
                    (None, None) => unreachable!("checked above"),
                };
                Ok((mask, ms(t)))
            },
        );
        let (colors, color_ms) = color_out?;
        let (pattern_mask, pattern_ms) = pattern_out?;
        timings.insert("color".into(), color_ms);
        timings.insert("pattern".into(), pattern_ms);
        let pattern_empty = req.use_pattern && pattern_mask.is_empty_at(PATTERN_PRESENCE_THRESHOLD);
        if pattern_empty {
            log::info!("reference has no detectable pattern; applying color only");
        }

        let t = Instant::now();
        let reference_textures: Vec<TextureMap> = refs.iter().map(|r| r.texture.clone()).collect();
        let output_texture =
            compose(&src.texture, &reference_textures, &colors, &pattern_mask, req, layout.region_masks())?;
        timings.insert("fusion".into(), ms(t));

        let t = Instant::now();
        let output = render(&src.position, &output_texture, source)?.image;
        timings.insert("render".into(), ms(t));

        Ok(TransferResult {
            output,
            intermediates: Intermediates {
                source_texture: src.texture.clone(),
                reference_textures,
                color_textures: colors,
                pattern_mask,
                output_texture,
            },
            timings,
            pattern_empty,
            request: req.clone(),
        })
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Outcome of the transfer-stability check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub bound: f64,
    /// Largest pairwise regional histogram distance per region.
    pub worst: BTreeMap<Region, f64>,
    pub within_bound: bool,
}

/// Moves every source toward the same reference with the color branch and
/// compares the outputs' regional histograms pairwise.
pub fn color_stability(
    color: &dyn ColorTransfer,
    sources: &[TextureMap],
    reference: &TextureMap,
    regions: &RegionMaskSet,
    bound: f64,
) -> Result<StabilityReport> {
    let outs = sources.iter().map(|s| Ok(color.swap(s, reference)?.0)).collect::<Result<Vec<_>>>()?;
    let mut worst: BTreeMap<Region, f64> = BTreeMap::new();
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            for (r, d) in regional_hist_distance(&outs[i], &outs[j], regions)? {
                let e = worst.entry(r).or_insert(0.0);
                *e = e.max(d);
            }
        }
    }
    let within_bound = worst.values().all(|&d| d <= bound);
    Ok(StabilityReport { bound, worst, within_bound })
}
