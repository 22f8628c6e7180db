//! Evaluation metrics: mask IoU, MS-SSIM, identity similarity and regional
//! histogram distance, plus the report format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorxfer::HIST_MASK_THRESHOLD;
use crate::error::{Error, FaceRole, GeometryError, Result};
use crate::nn::seeded_rng;
use crate::raster::{check_same_dims, quantize_u8, Image, SoftMask};
use crate::uvgeom::{Region, RegionMaskSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouScore {
    /// Mean of the pattern and background IoU.
    pub miou: f64,
    pub foreground: f64,
    pub background: f64,
    /// A class was absent from both masks and counted as 1.
    pub vacuous: bool,
}

/// Two-class IoU after binarizing both masks at `threshold` (strictly above is foreground).
pub fn miou(gt: &SoftMask, pr: &SoftMask, threshold: f32) -> Result<IouScore> {
    check_same_dims(gt.dims(), pr.dims(), "miou")?;
    let (mut fg_i, mut fg_u, mut bg_i, mut bg_u) = (0u64, 0u64, 0u64, 0u64);
    for (&a, &b) in gt.data().iter().zip(pr.data()) {
        let (a, b) = (a > threshold, b > threshold);
        fg_i += (a && b) as u64;
        fg_u += (a || b) as u64;
        bg_i += (!a && !b) as u64;
        bg_u += (!a || !b) as u64;
    }
    let mut vacuous = false;
    let mut iou = |i: u64, u: u64| {
        if u == 0 {
            vacuous = true;
            1.0
        } else {
            i as f64 / u as f64
        }
    };
    let foreground = iou(fg_i, fg_u);
    let background = iou(bg_i, bg_u);
    Ok(IouScore { miou: 0.5 * (foreground + background), foreground, background, vacuous })
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        let (w, h) = img.dims();
        Self { w, h, data: img.data().chunks_exact(3).map(|p| p[c] as f64).collect() }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                data.push(0.25 * (self.data[i] + self.data[i + 1] + self.data[i + self.w] + self.data[i + self.w + 1]));
            }
        }
        Self { w, h, data }
    }

    /// Separable Gaussian filter, valid region only.
    fn filter(&self, win: &[f64; WINDOW]) -> Self {
        let (wo, ho) = (self.w + 1 - WINDOW, self.h + 1 - WINDOW);
        let mut tmp = vec![0.0; wo * self.h];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..wo {
                tmp[y * wo + x] = win.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut data = vec![0.0; wo * ho];
        for y in 0..ho {
            for x in 0..wo {
                data[y * wo + x] = (0..WINDOW).map(|k| win[k] * tmp[(y + k) * wo + x]).sum();
            }
        }
        Self { w: wo, h: ho, data }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &Plane, y: &Plane, win: &[f64; WINDOW]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mx = x.filter(win);
    let my = y.filter(win);
    let sxx = x.zip(x, |a, b| a * b).filter(win);
    let syy = y.zip(y, |a, b| a * b).filter(win);
    let sxy = x.zip(y, |a, b| a * b).filter(win);
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cov = sxy.data[i] - ux * uy;
        let csv = (2.0 * cov + c2) / (vx + vy + c2);
        cs += csv;
        ssim += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1) * csv;
    }
    (ssim / n, cs / n)
}

/// Number of scales an image of this size supports (at most 5).
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut s = 0;
    let mut m = width.min(height);
    while s < MS_SSIM_WEIGHTS.len() && m >= WINDOW {
        s += 1;
        m /= 2;
    }
    s
}

/// Multi-scale SSIM over RGB (channel mean), 5 scales with the standard
/// weights. Smaller images use fewer scales with renormalized weights.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a.dims(), b.dims(), "ms-ssim")?;
    let (w, h) = a.dims();
    let scales = ms_ssim_scales(w, h);
    if scales == 0 {
        return Err(Error::shape(format!("{w}x{h} is smaller than the {WINDOW}x{WINDOW} SSIM window")));
    }
    if scales < MS_SSIM_WEIGHTS.len() {
        log::warn!("ms-ssim: {w}x{h} supports only {scales} scales");
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let norm: f64 = weights.iter().sum();
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let (mut x, mut y) = (Plane::channel(a, c), Plane::channel(b, c));
        let mut value = 1.0;
        for (s, &wt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&x, &y, &win);
            // negative terms would make fractional powers undefined
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(wt / norm);
            if s + 1 < scales {
                x = x.downsample();
                y = y.downsample();
            }
        }
        total += value;
    }
    Ok(total / 3.0)
}

/// PSNR in dB over the pixels where `mask` is set (peak 1.0). Identical
/// images give infinity.
pub fn psnr_masked(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_same_dims(a.dims(), b.dims(), "psnr")?;
    if mask.len() != a.width() * a.height() {
        return Err(Error::shape("psnr mask size"));
    }
    let (mut se, mut n) = (0.0f64, 0usize);
    for ((pa, pb), &m) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).zip(mask) {
        if m {
            se += (0..3).map(|c| (pa[c] as f64 - pb[c] as f64).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::param("psnr over an empty region"));
    }
    Ok(-10.0 * (se / n as f64).log10())
}

/// Face embedding used for identity similarity.
pub trait FaceEmbedder: Send + Sync {
    /// Unit-norm embedding, or a `NoFace` failure.
    fn embed(&self, image: &Image) -> Result<Vec<f32>, GeometryError>;
}

/// Deterministic stand-in embedder: an 8×8 area-averaged thumbnail,
/// mean-centered, through a seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct RandomProjectionEmbedder {
    grid: usize,
    projection: Vec<Vec<f32>>,
}

impl RandomProjectionEmbedder {
    pub const DIM: usize = 128;

    pub fn new(seed: u64) -> Self {
        let grid = 8;
        let mut rng = seeded_rng(seed);
        let inputs = grid * grid * 3;
        let projection =
            (0..Self::DIM).map(|_| (0..inputs).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        Self { grid, projection }
    }

    fn thumbnail(&self, image: &Image) -> Vec<f32> {
        let (w, h) = image.dims();
        let g = self.grid;
        let mut acc = vec![0.0f64; g * g * 3];
        let mut cnt = vec![0usize; g * g];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * g / h) * g + x * g / w;
                let px = image.get(x, y);
                for c in 0..3 {
                    acc[cell * 3 + c] += px[c] as f64;
                }
                cnt[cell] += 1;
            }
        }
        acc.iter().enumerate().map(|(i, &v)| (v / cnt[i / 3].max(1) as f64) as f32).collect()
    }
}

impl FaceEmbedder for RandomProjectionEmbedder {
    fn embed(&self, image: &Image) -> Result<Vec<f32>, GeometryError> {
        let mut t = self.thumbnail(image);
        let mean = t.iter().sum::<f32>() / t.len() as f32;
        t.iter_mut().for_each(|v| *v -= mean);
        if t.iter().map(|v| v * v).sum::<f32>() < 1e-8 {
            return Err(GeometryError::NoFace("image has no structure to embed".into()));
        }
        let mut e: Vec<f32> = self.projection.iter().map(|row| row.iter().zip(&t).map(|(a, b)| a * b).sum()).collect();
        let norm = e.iter().map(|v| v * v).sum::<f32>().sqrt();
        e.iter_mut().for_each(|v| *v /= norm);
        Ok(e)
    }
}

/// Cosine similarity of the two embeddings, in [−1, 1].
pub fn identity_similarity(a: &Image, b: &Image, embedder: &dyn FaceEmbedder) -> Result<f64> {
    let ea = embedder.embed(a).map_err(|e| Error::geometry(FaceRole::Source, e))?;
    let eb = embedder.embed(b).map_err(|e| Error::geometry(FaceRole::Reference, e))?;
    let dot: f64 = ea.iter().zip(&eb).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = ea.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = eb.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-region histogram distance between two textures: for each channel the
/// 256-bin histograms of texels with Γ > 0.5 are normalized to sum 1, and the
/// total-variation distance ½·Σ|p − q| is averaged over channels. 0 means
/// identical distributions, 1 disjoint ones. Empty regions are skipped.
pub fn regional_hist_distance(a: &Image, b: &Image, regions: &RegionMaskSet) -> Result<BTreeMap<Region, f64>> {
    check_same_dims(a.dims(), b.dims(), "histogram distance")?;
    let mut out = BTreeMap::new();
    for (region, mask) in regions.iter() {
        check_same_dims(a.dims(), mask.dims(), "histogram distance mask")?;
        let inside = mask.binarize(HIST_MASK_THRESHOLD);
        let n = inside.iter().filter(|&&v| v).count();
        if n == 0 {
            continue;
        }
        let mut d = 0.0;
        for c in 0..3 {
            let mut ha = [0i64; 256];
            let mut hb = [0i64; 256];
            for ((pa, pb), &ok) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).zip(&inside) {
                if ok {
                    ha[quantize_u8(pa[c]) as usize] += 1;
                    hb[quantize_u8(pb[c]) as usize] += 1;
                }
            }
            let l1: i64 = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum();
            d += 0.5 * l1 as f64 / n as f64;
        }
        out.insert(region, d / 3.0);
    }
    Ok(out)
}

/// One evaluated sample. Missing metrics (e.g. failed embeddings) are absent
/// from `metrics` and listed in `failures`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: String,
    pub dataset: String,
    pub models: String,
    pub config_hash: String,
    pub samples: usize,
    /// Arithmetic mean of each metric over the samples that have it.
    pub aggregate: BTreeMap<String, f64>,
    /// Samples that contributed to each metric.
    pub counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn new(
        task: &str,
        dataset: &str,
        models: &str,
        config: &serde_json::Value,
        records: Vec<SampleRecord>,
    ) -> Self {
        let config_hash = hex::encode(Sha256::digest(config.to_string().as_bytes()));
        let (aggregate, counts) = aggregate(&records);
        Self {
            summary: EvalSummary {
                task: task.into(),
                dataset: dataset.into(),
                models: models.into(),
                config_hash,
                samples: records.len(),
                aggregate,
                counts,
            },
            records,
        }
    }

    /// Where the summary of a report written to `path` lives.
    pub fn summary_path(path: &Path) -> PathBuf {
        path.with_extension("summary.json")
    }

    /// Writes one JSON record per line to `path` and the summary beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        std::fs::write(Self::summary_path(path), serde_json::to_vec_pretty(&self.summary)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = Vec::new();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let summary = serde_json::from_slice(&std::fs::read(Self::summary_path(path))?)?;
        Ok(Self { summary, records })
    }
}

/// Per-metric arithmetic mean in record order, and contributing counts.
pub fn aggregate(records: &[SampleRecord]) -> (BTreeMap<String, f64>, BTreeMap<String, usize>) {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        for (k, &v) in &r.metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let means = sums.iter().map(|(k, &(s, n))| (k.clone(), s / n as f64)).collect();
    let counts = sums.into_iter().map(|(k, (_, n))| (k, n)).collect();
    (means, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miou_examples() {
        let n = 64;
        let a = SoftMask::from_fn(n, n, |x, y| if y < 8 && x < 64 { 1.0 } else { 0.0 });
        let b = SoftMask::from_fn(n, n, |x, y| if (8..16).contains(&y) && x < 64 { 1.0 } else { 0.0 });
        let s = miou(&a, &b, 0.5).unwrap();
        assert_eq!(s.foreground, 0.0);
        assert!((s.background - 0.75).abs() < 1e-12);
        assert!((s.miou - 0.375).abs() < 1e-12);
        assert_eq!(miou(&a, &a, 0.5).unwrap().miou, 1.0);
        let z = SoftMask::zeros(n, n);
        let e = miou(&z, &z, 0.5).unwrap();
        assert!(e.vacuous && e.miou == 1.0);
        assert_eq!(miou(&a, &z, 0.5).unwrap().foreground, 0.0);
    }

    #[test]
    fn ms_ssim_basics() {
        let x = Image::from_fn(256, 256, |px, py| [((px ^ py) % 64) as f32 / 63.0, 0.3, py as f32 / 255.0]);
        assert_eq!(ms_ssim(&x, &x).unwrap(), 1.0);
        let y = Image::from_fn(256, 256, |px, py| [((px + py) % 50) as f32 / 49.0, 0.35, py as f32 / 255.0]);
        let (xy, yx) = (ms_ssim(&x, &y).unwrap(), ms_ssim(&y, &x).unwrap());
        assert_eq!(xy, yx);
        assert!(xy < 1.0 && xy > 0.0);
        let half = Image::from_fn(256, 256, |px, _| [if px < 128 { 0.0 } else { 1.0 }; 3]);
        let inv = Image::from_fn(256, 256, |px, _| [if px < 128 { 1.0 } else { 0.0 }; 3]);
        assert!(ms_ssim(&half, &inv).unwrap() < 0.2);
        assert_eq!(ms_ssim_scales(64, 64), 3);
        assert!(ms_ssim(&Image::new(8, 8), &Image::new(8, 8)).is_err());
    }

    #[test]
    fn embedder_properties() {
        let e = RandomProjectionEmbedder::new(7);
        let img = Image::from_fn(64, 64, |x, y| [x as f32 / 63.0, y as f32 / 63.0, ((x / 8 + y / 8) % 2) as f32]);
        let shifted = Image::from_fn(64, 64, |x, y| img.get(x.saturating_sub(2), y));
        assert!((identity_similarity(&img, &img, &e).unwrap() - 1.0).abs() < 1e-6);
        assert!(identity_similarity(&img, &shifted, &e).unwrap() >= 0.9);
        assert!(identity_similarity(&img, &Image::filled(64, 64, [0.5; 3]), &e).is_err());
    }

    #[test]
    fn report_round_trip_and_mean() {
        let records: Vec<SampleRecord> = (0..7)
            .map(|i| SampleRecord {
                id: format!("s{i}"),
                metrics: [("miou".to_string(), 0.1 * i as f64 + 1.0 / 3.0)].into_iter().collect(),
                failures: vec![],
            })
            .collect();
        let r = EvalReport::new("seg", "d", "m", &serde_json::json!({"a": 1}), records);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.jsonl");
        r.save(&p).unwrap();
        let back = EvalReport::load(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(aggregate(&back.records).0, back.summary.aggregate);
    }
}
