//! Sticker library and alpha compositing of stickers into UV textures.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, PatternMask, RgbaRaster, SoftMask, TextureMap};
use crate::uvgeom::UvLayout;

pub const STICKER_INDEX: &str = "index.json";
/// Sticker width relative to the cheek diameter.
pub const SCALE_RANGE: (f32, f32) = (0.5, 1.5);

#[derive(Clone, Debug, PartialEq)]
pub struct Sticker {
    pub name: String,
    pub rgba: RgbaRaster,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    file: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct StickerIndex {
    stickers: Vec<IndexEntry>,
}

/// Writes `{name}.png` (RGBA) per sticker plus the index file.
pub fn save_stickers(dir: &Path, stickers: &[Sticker]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = StickerIndex::default();
    for s in stickers {
        let file = format!("{}.png", s.name);
        s.rgba.to_rgba8().save(dir.join(&file))?;
        index.stickers.push(IndexEntry { name: s.name.clone(), file });
    }
    std::fs::write(dir.join(STICKER_INDEX), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Loads the stickers listed in the index. Files without an alpha channel are skipped.
pub fn load_stickers(dir: &Path) -> Result<Vec<Sticker>> {
    let index: StickerIndex = serde_json::from_slice(&std::fs::read(dir.join(STICKER_INDEX))?)?;
    let mut out = Vec::new();
    for e in index.stickers {
        let img = image::open(dir.join(&e.file))?;
        if !img.color().has_alpha() {
            log::warn!("skipping sticker {}: no alpha channel", e.file);
            continue;
        }
        out.push(Sticker { name: e.name, rgba: RgbaRaster::from_rgba8(&img.to_rgba8()) });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("no usable stickers in {}", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Disc,
    Ring,
    Star,
    Heart,
    Diamond,
    Flower,
    Dots,
    Stripes,
}

const SHAPES: [Shape; 8] =
    [Shape::Disc, Shape::Ring, Shape::Star, Shape::Heart, Shape::Diamond, Shape::Flower, Shape::Dots, Shape::Stripes];

/// Signed coverage in [0, 1] at normalized coordinates in [-1, 1]², with an
/// antialiasing ramp `aa` wide.
fn coverage(shape: Shape, x: f32, y: f32, aa: f32, k: f32) -> f32 {
    let r = (x * x + y * y).sqrt();
    let a = y.atan2(x);
    let edge = |d: f32| (0.5 - d / aa).clamp(0.0, 1.0);
    match shape {
        Shape::Disc => edge(r - 0.85),
        Shape::Ring => edge((r - 0.65).abs() - 0.2),
        Shape::Star => {
            let spikes = 5.0;
            let t = (0.5 + 0.5 * (spikes * a).cos()).powf(1.5);
            edge(r - (0.4 + 0.5 * t))
        }
        Shape::Heart => {
            let (hx, hy) = (1.2 * x, -1.2 * y + 0.25);
            let f = (hx * hx + hy * hy - 0.55).powi(3) - hx * hx * hy.powi(3);
            if f <= 0.0 {
                1.0
            } else {
                edge(f.cbrt() * 1.5)
            }
        }
        Shape::Diamond => edge(x.abs() * 0.9 + y.abs() * 1.1 - 0.85),
        Shape::Flower => {
            let petals = 4.0 + (k * 3.0).floor();
            edge(r - (0.55 + 0.35 * (petals * a).cos().abs()))
        }
        Shape::Dots => {
            let centers = [(-0.45, -0.4), (0.45, -0.35), (0.0, 0.1), (-0.4, 0.5), (0.45, 0.5)];
            let d = centers
                .iter()
                .map(|&(cx, cy): &(f32, f32)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - 0.28)
                .fold(f32::INFINITY, f32::min);
            edge(d)
        }
        Shape::Stripes => {
            let band = ((x + y) * (2.0 + 2.0 * k) * std::f32::consts::PI).sin();
            edge(r - 0.85).min(edge(-band * 0.2))
        }
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// `n` procedural RGBA stickers (shapes cycle, colors random), 64×64 each.
pub fn procedural_stickers(n: usize, seed: u64) -> Vec<Sticker> {
    let size = 64;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x571c_4e55);
            rng.set_stream(i as u64);
            let shape = SHAPES[i % SHAPES.len()];
            let k: f32 = rng.random();
            let hue: f32 = rng.random();
            let hue2 = hue + rng.random_range(0.1..0.4);
            let sat = rng.random_range(0.6..1.0);
            let val = if rng.random_bool(0.2) { rng.random_range(0.05..0.25) } else { rng.random_range(0.6..1.0) };
            let aa = 2.0 / size as f32 * 1.5;
            let rgba = RgbaRaster::from_fn(size, size, |x, y| {
                let nx = (x as f32 + 0.5) / size as f32 * 2.0 - 1.0;
                let ny = (y as f32 + 0.5) / size as f32 * 2.0 - 1.0;
                let a = coverage(shape, nx, ny, aa, k);
                let t = 0.5 + 0.5 * nx.clamp(-1.0, 1.0) * 0.6 + 0.2 * ny;
                let c = hsv(hue + (hue2 - hue) * t, sat, val);
                [c[0], c[1], c[2], a]
            });
            Sticker { name: format!("sticker-{i:03}"), rgba }
        })
        .collect()
}

/// Where and how a sticker is blended into UV space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    /// Sticker width as a multiple of the cheek diameter.
    pub scale: f32,
    /// Center in normalized UV coordinates.
    pub center_uv: [f32; 2],
    pub opacity: f32,
    pub seed: u64,
}

impl PlacementParams {
    fn center_texel(&self, layout: &UvLayout) -> (f32, f32) {
        (self.center_uv[0] * layout.width() as f32 - 0.5, self.center_uv[1] * layout.height() as f32 - 0.5)
    }

    pub fn validate(&self, layout: &UvLayout) -> Result<()> {
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale) {
            return Err(Error::param(format!("sticker scale {} outside {SCALE_RANGE:?}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::param(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        let (cx, cy) = self.center_texel(layout);
        let (xi, yi) = (cx.round(), cy.round());
        if xi < 0.0
            || yi < 0.0
            || xi >= layout.width() as f32
            || yi >= layout.height() as f32
            || !layout.is_valid(xi as usize, yi as usize)
        {
            return Err(Error::param("sticker center lies outside the valid face region"));
        }
        if layout.in_central_zone(cx, cy) {
            return Err(Error::param("sticker center lies in the central zone of the face"));
        }
        Ok(())
    }

    /// Draws a placement whose center is valid, outside the central zone, and
    /// far enough from the face border that most of the sticker stays on the face.
    pub fn sample(rng: &mut impl Rng, layout: &UvLayout, sticker: &Sticker) -> Self {
        let (x0, y0, x1, y1) = layout.valid_bbox();
        let valid_at = |x: f32, y: f32| {
            let (xi, yi) = (x.round(), y.round());
            xi >= 0.0
                && yi >= 0.0
                && (xi as usize) < layout.width()
                && (yi as usize) < layout.height()
                && layout.is_valid(xi as usize, yi as usize)
        };
        loop {
            let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
            let opacity = rng.random_range(0.6..=1.0);
            let cx = rng.random_range(x0 as f32..=x1 as f32);
            let cy = rng.random_range(y0 as f32..=y1 as f32);
            let (sw, sh) = extent(layout, sticker, scale);
            let reach = [(0.0, 0.0), (-0.4, 0.0), (0.4, 0.0), (0.0, -0.4), (0.0, 0.4)];
            if layout.in_central_zone(cx, cy) || !reach.iter().all(|&(dx, dy)| valid_at(cx + dx * sw, cy + dy * sh)) {
                continue;
            }
            let center_uv = [(cx + 0.5) / layout.width() as f32, (cy + 0.5) / layout.height() as f32];
            return Self { scale, center_uv, opacity, seed: rng.random() };
        }
    }
}

/// Sticker extent in texels.
fn extent(layout: &UvLayout, sticker: &Sticker, scale: f32) -> (f32, f32) {
    let sw = scale * layout.cheek_diameter();
    (sw, sw * sticker.rgba.height() as f32 / sticker.rgba.width() as f32)
}

/// Alpha-composites the sticker into the texture. Effective alpha is sticker
/// alpha × opacity, restricted to the valid region; it is also returned as the
/// ground-truth pattern mask.
pub fn blend_sticker(
    tex: &TextureMap,
    sticker: &Sticker,
    p: &PlacementParams,
    layout: &UvLayout,
) -> Result<(TextureMap, PatternMask)> {
    crate::raster::check_same_dims(tex.dims(), layout.dims(), "sticker blend")?;
    p.validate(layout)?;
    let (w, h) = layout.dims();
    let (cx, cy) = p.center_texel(layout);
    let (sw, sh) = extent(layout, sticker, p.scale);
    let (rw, rh) = (sticker.rgba.width() as f32, sticker.rgba.height() as f32);
    let mut out = tex.image().clone();
    let mut mask = SoftMask::zeros(w, h);
    let xs = ((cx - sw / 2.0).floor().max(0.0) as usize)..((cx + sw / 2.0).ceil() as usize + 1).min(w);
    let ys = ((cy - sh / 2.0).floor().max(0.0) as usize)..((cy + sh / 2.0).ceil() as usize + 1).min(h);
    for y in ys {
        for x in xs.clone() {
            if !layout.is_valid(x, y) {
                continue;
            }
            let sx = ((x as f32 - cx) / sw + 0.5) * rw - 0.5;
            let sy = ((y as f32 - cy) / sh + 0.5) * rh - 0.5;
            let (rgb, a) = sticker.rgba.sample(sx, sy);
            // bilinear weights may sum to just under one inside an opaque sticker
            let a = if a > 1.0 - 1e-6 { p.opacity } else { a * p.opacity };
            if a <= 0.0 {
                continue;
            }
            let t = out.get(x, y);
            out.set(x, y, [0, 1, 2].map(|c| a * rgb[c] + (1.0 - a) * t[c]));
            mask.set(x, y, a);
        }
    }
    Ok((TextureMap::new(out, layout.valid())?, mask))
}

/// Solid-color opaque square sticker, handy for tests.
pub fn solid_sticker(name: &str, size: usize, rgb: [f32; 3]) -> Sticker {
    Sticker { name: name.into(), rgba: RgbaRaster::from_fn(size, size, |_, _| [rgb[0], rgb[1], rgb[2], 1.0]) }
}

/// Renders a sticker over a flat background, for previews.
pub fn preview(sticker: &Sticker, background: [f32; 3]) -> Image {
    Image::from_fn(sticker.rgba.width(), sticker.rgba.height(), |x, y| {
        let p = sticker.rgba.get(x, y);
        [0, 1, 2].map(|c| p[3] * p[c] + (1.0 - p[3]) * background[c])
    })
}
