//! Procedural faces, makeup styles and face-directory ingestion.

use std::path::Path;

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FaceRole, Result};
use crate::raster::{Image, SoftMask, TextureMap, WORKING_SIZE};
use crate::uvgeom::{extract_texture, render, GeometryProvider, HeadPose, PositionMap, UvLayout};

/// Faces smaller than this on either side are discarded on ingestion.
pub const MIN_FACE_SIDE: usize = 150;

/// A face image and, when known, its geometry.
#[derive(Clone, Debug)]
pub struct Face {
    pub id: String,
    pub image: Image,
    pub position: Option<PositionMap>,
}

impl Face {
    /// The stored geometry, or whatever `provider` reconstructs.
    pub fn geometry(&self, provider: &dyn GeometryProvider) -> Result<PositionMap> {
        match &self.position {
            Some(p) => Ok(p.clone()),
            None => provider.position_map(&self.image).map_err(|e| Error::geometry(FaceRole::Source, e)),
        }
    }

    /// Geometry and UV texture, or `None` (logged) when reconstruction fails.
    pub fn unwrap_texture(&self, provider: &dyn GeometryProvider) -> Option<(PositionMap, TextureMap)> {
        let res = self.geometry(provider).and_then(|pos| {
            let tex = extract_texture(&self.image, &pos)?;
            Ok((pos, tex))
        });
        match res {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("skipping face {}: {e}", self.id);
                None
            }
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft ellipse indicator with an edge `soft` wide (in normalized radius).
fn ellipse(u: f32, v: f32, cu: f32, cv: f32, ru: f32, rv: f32, soft: f32) -> f32 {
    let r = (((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)).sqrt();
    smoothstep((1.0 - r) / soft)
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// Appearance parameters of one synthetic subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceTraits {
    pub skin: [f32; 3],
    pub lips: [f32; 3],
    pub iris: [f32; 3],
    pub brows: [f32; 3],
    pub background: [f32; 3],
    pub shading: [f32; 4],
    pub pose: HeadPose,
}

impl FaceTraits {
    pub fn random(rng: &mut impl Rng) -> Self {
        let t: f32 = rng.random();
        let skin = mix([0.93, 0.78, 0.67], [0.47, 0.32, 0.24], t);
        let skin = skin.map(|c| (c + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0));
        let lips = [skin[0] * 0.92, skin[1] * 0.62, skin[2] * 0.64];
        let iris = mix([0.35, 0.22, 0.12], [0.30, 0.45, 0.55], rng.random());
        let brows = mix([0.12, 0.08, 0.06], [0.45, 0.33, 0.20], rng.random());
        let background = [rng.random_range(0.10..0.40), rng.random_range(0.30..0.60), rng.random_range(0.55..0.85)];
        let shading = [rng.random_range(1.0..2.5), rng.random_range(1.0..2.5), rng.random(), rng.random()];
        let ax = rng.random_range(78.0..86.0);
        let mut pose = HeadPose::frontal(
            [127.5 + rng.random_range(-5.0..5.0), 127.5 + rng.random_range(-5.0..5.0)],
            [ax, ax * rng.random_range(1.2..1.3), ax],
        );
        pose.yaw = rng.random_range(-0.06..0.06);
        Self { skin, lips, iris, brows, background, shading, pose }
    }

    /// The subject's bare UV texture.
    pub fn texture(&self, layout: &UvLayout) -> TextureMap {
        let (w, h) = layout.dims();
        let [fu, fv, pu, pv] = self.shading;
        let img = Image::from_fn(w, h, |x, y| {
            let u = (x as f32 + 0.5) / w as f32;
            let v = (y as f32 + 0.5) / h as f32;
            let side = 1.0 - 0.10 * (2.0 * (u - 0.5)).powi(2);
            let wave = 1.0
                + 0.03 * (std::f32::consts::TAU * (fu * u + pu)).sin() * (std::f32::consts::TAU * (fv * v + pv)).sin();
            let mut c = self.skin.map(|s| s * side * wave);
            let brow = ellipse(u, v, 0.36, 0.31, 0.09, 0.02, 0.5).max(ellipse(u, v, 0.64, 0.31, 0.09, 0.02, 0.5));
            c = mix(c, self.brows, 0.85 * brow);
            for cu in [0.36, 0.64] {
                let sclera = ellipse(u, v, cu, 0.40, 0.065, 0.03, 0.4);
                c = mix(c, [0.92, 0.90, 0.88], sclera);
                let iris = ellipse(u, v, cu, 0.40, 0.022, 0.022 * w as f32 / h as f32, 0.4);
                c = mix(c, self.iris, iris * sclera);
                let pupil = ellipse(u, v, cu, 0.40, 0.009, 0.009 * w as f32 / h as f32, 0.5);
                c = mix(c, [0.05, 0.04, 0.04], pupil * sclera);
            }
            c = mix(c, self.lips, ellipse(u, v, 0.5, 0.74, 0.10, 0.04, 0.4));
            let nose = ellipse(u, v, 0.5, 0.60, 0.035, 0.02, 0.8);
            c.map(|s| s * (1.0 - 0.15 * nose))
        });
        TextureMap::new(img, layout.valid()).expect("texture sized by layout")
    }

    /// Renders a texture with this subject's pose over the background.
    pub fn render(&self, layout: &UvLayout, tex: &TextureMap) -> Result<(Image, PositionMap)> {
        let pos = self.pose.position_map(layout);
        let bg = Image::filled(WORKING_SIZE, WORKING_SIZE, self.background);
        Ok((render(&pos, tex, &bg)?.image, pos))
    }
}

/// Regional makeup color applied on top of a bare texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MakeupStyle {
    pub id: String,
    pub lips: [f32; 3],
    pub eyes: [f32; 3],
    pub blush: [f32; 3],
    /// Blend strength per region: lips, eyes, blush.
    pub strength: [f32; 3],
}

impl MakeupStyle {
    pub fn random(id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let lip_palette =
            [[0.75, 0.10, 0.18], [0.55, 0.08, 0.22], [0.90, 0.35, 0.40], [0.62, 0.25, 0.18], [0.80, 0.20, 0.45]];
        let eye_palette =
            [[0.35, 0.20, 0.45], [0.55, 0.40, 0.30], [0.20, 0.30, 0.50], [0.60, 0.45, 0.55], [0.25, 0.20, 0.18]];
        let jitter = |c: [f32; 3], rng: &mut dyn rand::RngCore| {
            c.map(|v: f32| (v + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0))
        };
        let lips = jitter(lip_palette[rng.random_range(0..lip_palette.len())], rng);
        let eyes = jitter(eye_palette[rng.random_range(0..eye_palette.len())], rng);
        let blush = jitter([0.90, 0.45, 0.45], rng);
        let strength = [rng.random_range(0.55..0.85), rng.random_range(0.35..0.65), rng.random_range(0.15..0.35)];
        Self { id: id.into(), lips, eyes, blush, strength }
    }

    /// Applies the style inside the layout's regions; blush is a soft disc on each cheek.
    pub fn apply(&self, tex: &TextureMap, layout: &UvLayout) -> Result<TextureMap> {
        crate::raster::check_same_dims(tex.dims(), layout.dims(), "makeup style")?;
        let regions = layout.region_masks();
        let (w, h) = layout.dims();
        let radius = 0.5 * layout.cheek_diameter();
        let cheeks = layout.cheek_centers();
        let blush = SoftMask::from_fn(w, h, |x, y| {
            let d = cheeks
                .iter()
                .map(|&(cx, cy)| ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt())
                .fold(f32::INFINITY, f32::min);
            smoothstep(1.0 - d / radius) * regions.skin.get(x, y)
        });
        let img = Image::from_fn(w, h, |x, y| {
            let mut c = tex.get(x, y);
            c = mix(c, self.lips, self.strength[0] * regions.lips.get(x, y));
            // eyeshadow tints the lids, leaving most of the eye readable
            c = mix(c, self.eyes, self.strength[1] * regions.eyes.get(x, y));
            mix(c, self.blush, self.strength[2] * blush.get(x, y))
        });
        TextureMap::new(img, layout.valid())
    }
}

/// `n` bare synthetic faces with known geometry, ids `face-000`, ...
pub fn procedural_faces(n: usize, seed: u64, layout: &UvLayout) -> Result<Vec<Face>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let traits = FaceTraits::random(&mut rng);
            let (image, pos) = traits.render(layout, &traits.texture(layout))?;
            Ok(Face { id: format!("face-{i:03}"), image, position: Some(pos) })
        })
        .collect()
}

/// `n` synthetic faces wearing random makeup styles, ids `style-000`, ...
pub fn procedural_styles(n: usize, seed: u64, layout: &UvLayout) -> Result<Vec<(Face, MakeupStyle)>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57_71e5);
            rng.set_stream(i as u64);
            let traits = FaceTraits::random(&mut rng);
            let id = format!("style-{i:03}");
            let style = MakeupStyle::random(id.clone(), &mut rng);
            let tex = style.apply(&traits.texture(layout), layout)?;
            let (image, pos) = traits.render(layout, &tex)?;
            Ok((Face { id, image, position: Some(pos) }, style))
        })
        .collect()
}

/// Writes `{id}.png` and, when known, `{id}.uvpm` for every face.
pub fn save_faces(dir: &Path, faces: &[Face]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in faces {
        f.image.save_png(dir.join(format!("{}.png", f.id)))?;
        if let Some(p) = &f.position {
            p.save(dir.join(format!("{}.uvpm", f.id)))?;
        }
    }
    Ok(())
}

/// Loads a directory of face crops (PNG or JPEG), sorted by name.
///
/// Crops smaller than [`MIN_FACE_SIDE`] are skipped. Others are resized to the
/// working size; a sibling `{stem}.uvpm` is used as geometry when the crop was
/// already at working size.
pub fn load_faces(dir: &Path) -> Result<Vec<Face>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    let mut faces = Vec::new();
    for path in paths {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let dynamic = image::open(&path)?;
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        if w < MIN_FACE_SIDE || h < MIN_FACE_SIDE {
            log::warn!("skipping {}: {w}x{h} is below {MIN_FACE_SIDE}x{MIN_FACE_SIDE}", path.display());
            continue;
        }
        let at_size = w == WORKING_SIZE && h == WORKING_SIZE;
        let image = if at_size {
            Image::from_dynamic(&dynamic)
        } else {
            let s = WORKING_SIZE as u32;
            Image::from_rgb8(&image::imageops::resize(&dynamic.to_rgb8(), s, s, FilterType::Triangle))
        };
        let uvpm = path.with_extension("uvpm");
        let position = if at_size && uvpm.exists() { Some(PositionMap::load(&uvpm)?) } else { None };
        faces.push(Face { id, image, position });
    }
    if faces.is_empty() {
        return Err(Error::EmptyDataset(format!("no usable faces in {}", dir.display())));
    }
    Ok(faces)
}
