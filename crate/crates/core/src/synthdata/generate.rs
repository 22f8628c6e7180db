//! Synthetic pattern datasets: (texture, pattern mask) training pairs and
//! (source, reference, ground truth) transfer triplets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::faces::Face;
use super::manifest::{file_sha256, read_manifest, ManifestWriter, MANIFEST_FILE};
use super::stickers::{blend_sticker, PlacementParams, Sticker};
use crate::colorxfer::ColorTransfer;
use crate::error::{Error, Result};
use crate::raster::{Image, PatternMask, SoftMask, TextureMap};
use crate::uvgeom::{render, GeometryProvider, PositionMap, UvLayout};

/// Placements whose strongest mask value stays below this are redrawn.
const MIN_MASK_PEAK: f32 = 0.25;
const PLACEMENT_TRIES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Share of subjects and stickers reserved for the test split.
    pub test_fraction: f64,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, test_fraction: 0.25 }
    }
}

/// Independent RNG stream for one sample, so parallel and serial runs agree.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Unwrapped<'a> {
    face: &'a Face,
    pos: PositionMap,
    tex: TextureMap,
}

fn unwrap_all<'a>(faces: &'a [Face], provider: &dyn GeometryProvider) -> Vec<Unwrapped<'a>> {
    faces
        .par_iter()
        .filter_map(|face| face.unwrap_texture(provider).map(|(pos, tex)| Unwrapped { face, pos, tex }))
        .collect()
}

/// Splits ids into disjoint (train, test) sets; both sides get at least one.
fn split_ids<T: Clone>(ids: &[T], test_fraction: f64, rng: &mut impl Rng) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train.into_iter().map(|i| ids[i].clone()).collect(), test.into_iter().map(|i| ids[i].clone()).collect())
}

/// Draws a placement and blends, redrawing until the mask is clearly visible.
fn place(
    rng: &mut ChaCha8Rng,
    tex: &TextureMap,
    sticker: &Sticker,
    layout: &UvLayout,
) -> Result<(PlacementParams, TextureMap, PatternMask)> {
    let mut last = None;
    for _ in 0..PLACEMENT_TRIES {
        let p = PlacementParams::sample(rng, layout, sticker);
        let (out, mask) = blend_sticker(tex, sticker, &p, layout)?;
        let peak = mask.data().iter().copied().fold(0.0f32, f32::max);
        if peak >= MIN_MASK_PEAK {
            return Ok((p, out, mask));
        }
        last = Some((p, out, mask));
    }
    log::warn!("sticker {} stays faint after {PLACEMENT_TRIES} placements", sticker.name);
    Ok(last.expect("at least one try"))
}

#[derive(Clone, Debug)]
pub struct Synt1Sample {
    pub id: String,
    pub index: usize,
    pub split: Split,
    pub subject: String,
    pub sticker: String,
    pub placement: PlacementParams,
    /// Face with the sticker, rendered back to image space.
    pub image: Image,
    pub texture: TextureMap,
    pub mask: PatternMask,
    pub position: PositionMap,
}

/// Blends random stickers into face textures and renders them back. Subjects
/// and stickers are partitioned between the train and test splits.
pub fn generate_synt1(
    faces: &[Face],
    stickers: &[Sticker],
    provider: &dyn GeometryProvider,
    cfg: &SynthConfig,
) -> Result<Vec<Synt1Sample>> {
    let layout = provider.layout();
    let usable = unwrap_all(faces, provider);
    if usable.len() < 2 || stickers.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least two usable faces and two stickers, have {} and {}",
            usable.len(),
            stickers.len()
        )));
    }
    let mut rng = sample_rng(cfg.seed, u64::MAX);
    let (train_faces, test_faces) = split_ids(&(0..usable.len()).collect::<Vec<_>>(), cfg.test_fraction, &mut rng);
    let (train_st, test_st) = split_ids(&(0..stickers.len()).collect::<Vec<_>>(), cfg.test_fraction, &mut rng);
    (0..cfg.n)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(cfg.seed, index as u64);
            let split = if rng.random_bool(cfg.test_fraction) { Split::Test } else { Split::Train };
            let (fs, ss) = match split {
                Split::Train => (&train_faces, &train_st),
                Split::Test => (&test_faces, &test_st),
            };
            let u = &usable[*fs.choose(&mut rng).expect("non-empty split")];
            let sticker = &stickers[*ss.choose(&mut rng).expect("non-empty split")];
            let (placement, texture, mask) = place(&mut rng, &u.tex, sticker, layout)?;
            let image = render(&u.pos, &texture, &u.face.image)?.image;
            Ok(Synt1Sample {
                id: format!("{index:05}"),
                index,
                split,
                subject: u.face.id.clone(),
                sticker: sticker.name.clone(),
                placement,
                image,
                texture,
                mask,
                position: u.pos.clone(),
            })
        })
        .collect()
}

/// One manifest line of a pattern dataset. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synt1Record {
    pub id: String,
    pub index: usize,
    pub split: Split,
    pub subject: String,
    pub sticker: String,
    pub placement: PlacementParams,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
    pub sha256: BTreeMap<String, String>,
}

fn ensure_fresh(root: &Path) -> Result<()> {
    if root.join(MANIFEST_FILE).exists() {
        return Err(Error::Dataset(format!("{} already holds a dataset", root.display())));
    }
    for d in ["images", "textures", "masks"] {
        std::fs::create_dir_all(root.join(d))?;
    }
    Ok(())
}

/// Writes named files (relative path → writer) and returns paths and hashes.
fn write_files(
    root: &Path,
    files: Vec<(&str, String, Box<dyn FnOnce(&Path) -> Result<()> + '_>)>,
) -> Result<(BTreeMap<String, String>, BTreeMap<String, String>)> {
    let mut paths = BTreeMap::new();
    let mut hashes = BTreeMap::new();
    for (key, rel, write) in files {
        let full = root.join(&rel);
        write(&full)?;
        hashes.insert(key.to_string(), file_sha256(&full)?);
        paths.insert(key.to_string(), rel);
    }
    Ok((paths, hashes))
}

/// Writes the dataset under `root` (images/, textures/, masks/, manifest) and
/// returns the manifest checksum.
pub fn save_synt1(root: &Path, samples: &[Synt1Sample], seed: u64) -> Result<String> {
    ensure_fresh(root)?;
    let mut manifest = ManifestWriter::open::<Synt1Record>(root.join(MANIFEST_FILE))?;
    for s in samples {
        let (files, sha256) = write_files(
            root,
            vec![
                ("image", format!("images/{}.png", s.id), Box::new(|p: &Path| s.image.save_png(p))),
                ("texture", format!("textures/{}.png", s.id), Box::new(|p: &Path| s.texture.save_png(p))),
                ("position", format!("textures/{}.uvpm", s.id), Box::new(|p: &Path| s.position.save(p))),
                ("mask", format!("masks/{}.png", s.id), Box::new(|p: &Path| s.mask.save_png(p))),
            ],
        )?;
        manifest.append(&Synt1Record {
            id: s.id.clone(),
            index: s.index,
            split: s.split,
            subject: s.subject.clone(),
            sticker: s.sticker.clone(),
            placement: s.placement,
            seed,
            files,
            sha256,
        })?;
    }
    Ok(manifest.checksum())
}

fn checked_path(
    root: &Path,
    files: &BTreeMap<String, String>,
    sha: &BTreeMap<String, String>,
    key: &str,
) -> Result<std::path::PathBuf> {
    let rel = files.get(key).ok_or_else(|| Error::Dataset(format!("record lacks a `{key}` file")))?;
    let p = root.join(rel);
    if sha.get(key).map(String::as_str) != Some(file_sha256(&p)?.as_str()) {
        return Err(Error::Dataset(format!("{} does not match its manifest checksum", p.display())));
    }
    Ok(p)
}

/// A pattern-dataset sample read back from disk.
#[derive(Clone, Debug)]
pub struct Synt1Entry {
    pub record: Synt1Record,
    pub texture: TextureMap,
    pub mask: PatternMask,
}

/// Loads textures and masks of a saved pattern dataset, verifying checksums.
pub fn load_synt1(root: &Path, layout: &UvLayout) -> Result<Vec<Synt1Entry>> {
    let manifest = read_manifest::<Synt1Record>(root.join(MANIFEST_FILE))?;
    manifest
        .records
        .into_iter()
        .map(|record| {
            let tex = Image::load(checked_path(root, &record.files, &record.sha256, "texture")?)?;
            let mask = SoftMask::load(checked_path(root, &record.files, &record.sha256, "mask")?)?;
            Ok(Synt1Entry { texture: TextureMap::new(tex, layout.valid())?, mask, record })
        })
        .collect()
}

/// Source face, reference face with style and sticker, and the source wearing
/// the same style and sticker.
#[derive(Clone, Debug)]
pub struct Synt2Triplet {
    pub id: String,
    pub index: usize,
    pub source_subject: String,
    pub reference_subject: String,
    pub style: String,
    pub sticker: String,
    pub placement: PlacementParams,
    pub source: Image,
    pub reference: Image,
    pub ground_truth: Image,
    pub source_position: PositionMap,
    pub reference_position: PositionMap,
    pub reference_mask: PatternMask,
    pub ground_truth_mask: PatternMask,
}

/// Builds transfer triplets: two bare faces are moved to the same style by
/// `color`, the same sticker is blended into both at the same UV placement,
/// and both are rendered back.
pub fn generate_synt2(
    faces: &[Face],
    styles: &[Face],
    stickers: &[Sticker],
    color: &dyn ColorTransfer,
    provider: &dyn GeometryProvider,
    cfg: &SynthConfig,
) -> Result<Vec<Synt2Triplet>> {
    let layout = provider.layout();
    let usable = unwrap_all(faces, provider);
    let style_tex = unwrap_all(styles, provider);
    if usable.len() < 2 || style_tex.is_empty() || stickers.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "need two usable faces, one style and one sticker, have {}, {} and {}",
            usable.len(),
            style_tex.len(),
            stickers.len()
        )));
    }
    (0..cfg.n)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(cfg.seed, index as u64);
            let pick: Vec<usize> = rand::seq::index::sample(&mut rng, usable.len(), 2).into_vec();
            let (a, b) = (&usable[pick[0]], &usable[pick[1]]);
            let style = &style_tex[rng.random_range(0..style_tex.len())];
            let sticker = &stickers[rng.random_range(0..stickers.len())];
            let styled_a = color.swap(&a.tex, &style.tex)?.0;
            let styled_b = color.swap(&b.tex, &style.tex)?.0;
            let (placement, gt_tex, ground_truth_mask) = place(&mut rng, &styled_a, sticker, layout)?;
            let (ref_tex, reference_mask) = blend_sticker(&styled_b, sticker, &placement, layout)?;
            Ok(Synt2Triplet {
                id: format!("{index:05}"),
                index,
                source_subject: a.face.id.clone(),
                reference_subject: b.face.id.clone(),
                style: style.face.id.clone(),
                sticker: sticker.name.clone(),
                placement,
                source: a.face.image.clone(),
                reference: render(&b.pos, &ref_tex, &b.face.image)?.image,
                ground_truth: render(&a.pos, &gt_tex, &a.face.image)?.image,
                source_position: a.pos.clone(),
                reference_position: b.pos.clone(),
                reference_mask,
                ground_truth_mask,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synt2Record {
    pub id: String,
    pub index: usize,
    pub source_subject: String,
    pub reference_subject: String,
    pub style: String,
    pub sticker: String,
    pub placement: PlacementParams,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
    pub sha256: BTreeMap<String, String>,
}

/// Writes triplets under `root` and returns the manifest checksum. The mask is
/// shared by reference and ground truth and stored once.
pub fn save_synt2(root: &Path, triplets: &[Synt2Triplet], seed: u64) -> Result<String> {
    ensure_fresh(root)?;
    let mut manifest = ManifestWriter::open::<Synt2Record>(root.join(MANIFEST_FILE))?;
    for t in triplets {
        let id = &t.id;
        let (files, sha256) = write_files(
            root,
            vec![
                ("source", format!("images/{id}-source.png"), Box::new(|p: &Path| t.source.save_png(p))),
                ("reference", format!("images/{id}-reference.png"), Box::new(|p: &Path| t.reference.save_png(p))),
                ("ground_truth", format!("images/{id}-gt.png"), Box::new(|p: &Path| t.ground_truth.save_png(p))),
                (
                    "source_position",
                    format!("textures/{id}-source.uvpm"),
                    Box::new(|p: &Path| t.source_position.save(p)),
                ),
                (
                    "reference_position",
                    format!("textures/{id}-reference.uvpm"),
                    Box::new(|p: &Path| t.reference_position.save(p)),
                ),
                ("mask", format!("masks/{id}.png"), Box::new(|p: &Path| t.ground_truth_mask.save_png(p))),
            ],
        )?;
        manifest.append(&Synt2Record {
            id: id.clone(),
            index: t.index,
            source_subject: t.source_subject.clone(),
            reference_subject: t.reference_subject.clone(),
            style: t.style.clone(),
            sticker: t.sticker.clone(),
            placement: t.placement,
            seed,
            files,
            sha256,
        })?;
    }
    Ok(manifest.checksum())
}

/// Loads saved triplets, verifying checksums.
pub fn load_synt2(root: &Path) -> Result<Vec<Synt2Triplet>> {
    let manifest = read_manifest::<Synt2Record>(root.join(MANIFEST_FILE))?;
    manifest
        .records
        .into_iter()
        .map(|r| {
            let path = |key: &str| checked_path(root, &r.files, &r.sha256, key);
            let mask = SoftMask::load(path("mask")?)?;
            Ok(Synt2Triplet {
                source: Image::load(path("source")?)?,
                reference: Image::load(path("reference")?)?,
                ground_truth: Image::load(path("ground_truth")?)?,
                source_position: PositionMap::load(path("source_position")?)?,
                reference_position: PositionMap::load(path("reference_position")?)?,
                reference_mask: mask.clone(),
                ground_truth_mask: mask,
                id: r.id,
                index: r.index,
                source_subject: r.source_subject,
                reference_subject: r.reference_subject,
                style: r.style,
                sticker: r.sticker,
                placement: r.placement,
            })
        })
        .collect()
}
