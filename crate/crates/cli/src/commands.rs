use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use uvmakeup_core::colorxfer::{ColorDataset, ColorTrainConfig, ColorTrainer, ColorTransfer, IdentityColor};
use uvmakeup_core::fusion::{PatternSource, RegionSelection, TransferRequest};
use uvmakeup_core::metrics::{
    identity_similarity, miou, ms_ssim, regional_hist_distance, EvalReport, RandomProjectionEmbedder, SampleRecord,
};
use uvmakeup_core::patternseg::{self, SegTrainConfig};
use uvmakeup_core::pipeline::{ModelBundle, Pipeline, COLOR_CHECKPOINT, PATTERN_CHECKPOINT};
use uvmakeup_core::synthdata::{
    generate_synt1, generate_synt2, load_faces, load_stickers, load_synt1, load_synt2, procedural_faces,
    procedural_stickers, procedural_styles, save_faces, save_stickers, save_synt1, save_synt2, Face, Split,
    SynthConfig,
};
use uvmakeup_core::uvgeom::{extract_texture, PrecomputedProvider, SilhouetteProvider};
use uvmakeup_core::{Error, FaceRole, Image, PositionMap, TextureMap, UvLayout};

use crate::error::CliError;
use crate::{EvalArgs, EvalTask, PatternFrom, Synth1Args, Synth2Args, TransferArgs};

/// Binarization threshold for segmentation scores.
const MASK_THRESHOLD: f32 = 0.5;
const IDENTITY_SEED: u64 = 0;

fn print(doc: serde_json::Value) {
    println!("{doc}");
}

/// Geometry from precomputed maps, falling back to silhouette fitting.
fn provider() -> PrecomputedProvider {
    let layout = UvLayout::default();
    PrecomputedProvider::new(layout.clone()).with_fallback(Box::new(SilhouetteProvider::new(layout)))
}

/// Loads an image and registers a sibling `{stem}.uvpm` as its geometry.
fn load_face_image(path: &Path, role: FaceRole, provider: &mut PrecomputedProvider) -> Result<Image, CliError> {
    let image = Image::load(path)?;
    let uvpm = path.with_extension("uvpm");
    if uvpm.exists() {
        provider.register(&image, PositionMap::load(&uvpm)?).map_err(|e| Error::geometry(role, e))?;
    }
    Ok(image)
}

/// Whatever checkpoints `dir` holds; an absent directory gives no models.
fn load_models(dir: &Path) -> Result<ModelBundle, CliError> {
    if !dir.exists() {
        log::warn!("model directory {} does not exist", dir.display());
        return Ok(ModelBundle::default());
    }
    Ok(ModelBundle::load(dir)?)
}

pub fn transfer(a: TransferArgs) -> Result<(), CliError> {
    let mut provider = provider();
    let source = load_face_image(&a.source, FaceRole::Source, &mut provider)?;
    let reference = load_face_image(&a.reference, FaceRole::Reference, &mut provider)?;
    let reference2 =
        a.reference2.as_deref().map(|p| load_face_image(p, FaceRole::Reference2, &mut provider)).transpose()?;
    let req = TransferRequest {
        use_color: !a.no_color,
        use_pattern: !a.no_pattern,
        alpha: a.alpha,
        regions: RegionSelection::parse(&a.regions)?,
        pattern_source: match a.pattern_source {
            PatternFrom::First => PatternSource::First,
            PatternFrom::Second => PatternSource::Second,
        },
        seed: a.seed,
    };
    let pipeline = Pipeline::from_bundle(Arc::new(provider), load_models(&a.models)?);
    let res = pipeline.transfer(&source, &reference, reference2.as_ref(), &req)?;
    res.output.save_png(&a.out)?;
    if let Some(dir) = &a.dump_intermediates {
        res.dump(dir)?;
    }
    print(json!({ "output": a.out, "pattern_empty": res.pattern_empty, "timings_ms": res.timings }));
    Ok(())
}

/// A TOML job file; relative paths inside it are resolved against its directory.
fn read_job<T: DeserializeOwned>(path: &Path) -> Result<(T, PathBuf), CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead { path: path.into(), source })?;
    let job = toml::from_str(&text).map_err(|source| CliError::ConfigParse { path: path.into(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((job, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[derive(Debug, Deserialize)]
struct ColorJob {
    /// Faces without makeup.
    plain: PathBuf,
    /// Faces wearing makeup.
    makeup: PathBuf,
    /// Model directory receiving `color.ckpt`.
    out: PathBuf,
    #[serde(flatten)]
    train: ColorTrainConfig,
}

fn textures(faces: &[Face]) -> Vec<TextureMap> {
    let fit = SilhouetteProvider::new(UvLayout::default());
    faces.iter().filter_map(|f| f.unwrap_texture(&fit)).map(|(_, t)| t).collect()
}

pub fn train_color(config: &Path) -> Result<(), CliError> {
    let (mut job, base): (ColorJob, _) = read_job(config)?;
    job.train.checkpoint_dir = job.train.checkpoint_dir.map(|d| resolve(&base, &d));
    let data = ColorDataset {
        plain: textures(&load_faces(&resolve(&base, &job.plain))?),
        makeup: textures(&load_faces(&resolve(&base, &job.makeup))?),
    };
    log::info!("training color on {} plain and {} makeup textures", data.plain.len(), data.makeup.len());
    let mut trainer = ColorTrainer::new(job.train, UvLayout::default())?;
    let mut last = None;
    trainer.train(&data, |log| last = Some(*log))?;
    let out = resolve(&base, &job.out);
    std::fs::create_dir_all(&out)?;
    let path = out.join(COLOR_CHECKPOINT);
    trainer.save(&path)?;
    print(json!({ "checkpoint": path, "iterations": trainer.iteration(), "last": last }));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PatternJob {
    /// Root of a pattern dataset; its train split is used.
    dataset: PathBuf,
    /// Model directory receiving `pattern.ckpt`.
    out: PathBuf,
    #[serde(flatten)]
    train: SegTrainConfig,
}

pub fn train_pattern(config: &Path) -> Result<(), CliError> {
    let (mut job, base): (PatternJob, _) = read_job(config)?;
    job.train.checkpoint_dir = job.train.checkpoint_dir.map(|d| resolve(&base, &d));
    let data: Vec<_> = load_synt1(&resolve(&base, &job.dataset), &UvLayout::default())?
        .into_iter()
        .filter(|e| e.record.split == Split::Train)
        .map(|e| (e.texture, e.mask))
        .collect();
    log::info!("training pattern segmentation on {} samples", data.len());
    let mut last = None;
    let net = patternseg::train_pattern(&data, &job.train, |log| last = Some(*log))?;
    let out = resolve(&base, &job.out);
    std::fs::create_dir_all(&out)?;
    let path = out.join(PATTERN_CHECKPOINT);
    net.save(&path)?;
    print(json!({ "checkpoint": path, "samples": data.len(), "last": last }));
    Ok(())
}

pub fn synth1(a: Synth1Args) -> Result<(), CliError> {
    let faces = load_faces(&a.faces)?;
    let stickers = load_stickers(&a.stickers)?;
    let cfg = SynthConfig { n: a.n, seed: a.seed, test_fraction: a.test_fraction };
    let samples = generate_synt1(&faces, &stickers, &SilhouetteProvider::new(UvLayout::default()), &cfg)?;
    let checksum = save_synt1(&a.out, &samples, a.seed)?;
    print(json!({ "samples": samples.len(), "checksum": checksum }));
    Ok(())
}

pub fn synth2(a: Synth2Args) -> Result<(), CliError> {
    let faces = load_faces(&a.faces)?;
    let styles = load_faces(&a.styles)?;
    let stickers = load_stickers(&a.stickers)?;
    let color: Box<dyn ColorTransfer> = match a.models.as_deref().map(load_models).transpose()?.and_then(|b| b.color) {
        Some(c) => Box::new(c),
        None => {
            log::warn!("no color model, faces keep their own color");
            Box::new(IdentityColor)
        }
    };
    let cfg = SynthConfig::new(a.n, a.seed);
    let triplets = generate_synt2(
        &faces,
        &styles,
        &stickers,
        color.as_ref(),
        &SilhouetteProvider::new(UvLayout::default()),
        &cfg,
    )?;
    let checksum = save_synt2(&a.out, &triplets, a.seed)?;
    print(json!({ "samples": triplets.len(), "checksum": checksum }));
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let bundle = ModelBundle::load(&a.models)?;
    let (task, records) = match a.task {
        EvalTask::Seg => ("seg", eval_seg(&a.dataset, bundle)?),
        EvalTask::Transfer => ("transfer", eval_transfer(&a.dataset, bundle)?),
    };
    let config = json!({ "task": task, "threshold": MASK_THRESHOLD, "identity_seed": IDENTITY_SEED });
    let report =
        EvalReport::new(task, &a.dataset.display().to_string(), &a.models.display().to_string(), &config, records);
    report.save(&a.report)?;
    print(serde_json::to_value(&report.summary).map_err(Error::from)?);
    Ok(())
}

/// mIoU of predicted against stored masks on the test split (everything when
/// the dataset has no test split).
fn eval_seg(dataset: &Path, bundle: ModelBundle) -> Result<Vec<SampleRecord>, CliError> {
    let net = bundle.pattern.ok_or(Error::ModelMissing("pattern"))?;
    let layout = UvLayout::default();
    let entries = load_synt1(dataset, &layout)?;
    let has_test = entries.iter().any(|e| e.record.split == Split::Test);
    if !has_test {
        log::warn!("dataset has no test split, scoring every sample");
    }
    entries
        .iter()
        .filter(|e| !has_test || e.record.split == Split::Test)
        .map(|e| {
            let pred = net.predict_mask(&e.texture, layout.valid())?;
            let score = miou(&e.mask, &pred, MASK_THRESHOLD)?;
            let metrics = BTreeMap::from([
                ("miou".to_string(), score.miou),
                ("foreground_iou".to_string(), score.foreground),
                ("background_iou".to_string(), score.background),
            ]);
            Ok(SampleRecord { id: e.record.id.clone(), metrics, failures: Vec::new() })
        })
        .collect()
}

/// Full transfers scored against the ground-truth faces.
fn eval_transfer(dataset: &Path, bundle: ModelBundle) -> Result<Vec<SampleRecord>, CliError> {
    let triplets = load_synt2(dataset)?;
    let mut provider = provider();
    for t in &triplets {
        provider.register(&t.source, t.source_position.clone()).map_err(|e| Error::geometry(FaceRole::Source, e))?;
        provider
            .register(&t.reference, t.reference_position.clone())
            .map_err(|e| Error::geometry(FaceRole::Reference, e))?;
    }
    let layout = UvLayout::default();
    let pipeline = Pipeline::from_bundle(Arc::new(provider), bundle);
    let embedder = RandomProjectionEmbedder::new(IDENTITY_SEED);
    let req = TransferRequest::default();
    let mut records = Vec::with_capacity(triplets.len());
    for t in &triplets {
        let res = pipeline.transfer(&t.source, &t.reference, None, &req)?;
        let mut metrics = BTreeMap::from([("ms_ssim".to_string(), ms_ssim(&res.output, &t.ground_truth)?)]);
        let mut failures = Vec::new();
        match identity_similarity(&res.output, &t.source, &embedder) {
            Ok(s) => {
                metrics.insert("identity".into(), s);
            }
            Err(e) => {
                log::warn!("sample {}: {e}", t.id);
                failures.push("identity".to_string());
            }
        }
        let gt_texture = extract_texture(&t.ground_truth, &t.source_position)?;
        let output_texture = &res.intermediates.output_texture;
        for (region, d) in regional_hist_distance(output_texture.image(), gt_texture.image(), layout.region_masks())? {
            metrics.insert(format!("hist_{}", region.name()), d);
        }
        records.push(SampleRecord { id: t.id.clone(), metrics, failures });
    }
    Ok(records)
}

pub fn gen_faces(n: usize, seed: u64, out: &Path, styles: bool) -> Result<(), CliError> {
    let layout = UvLayout::default();
    let faces = if styles {
        procedural_styles(n, seed, &layout)?.into_iter().map(|(f, _)| f).collect()
    } else {
        procedural_faces(n, seed, &layout)?
    };
    save_faces(out, &faces)?;
    print(json!({ "faces": faces.len(), "out": out }));
    Ok(())
}

pub fn gen_stickers(n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let stickers = procedural_stickers(n, seed);
    save_stickers(out, &stickers)?;
    print(json!({ "stickers": stickers.len(), "out": out }));
    Ok(())
}

pub fn serve(config: Option<&Path>, bind: Option<String>) -> Result<(), CliError> {
    let mut cfg = uvmakeup_service::ServiceConfig::load(config)?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    let rt = tokio::runtime::Runtime::new().map_err(CliError::Runtime)?;
    rt.block_on(uvmakeup_service::serve(cfg))?;
    Ok(())
}
