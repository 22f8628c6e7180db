//! Pattern branch: a small encoder-decoder that segments makeup patterns in
//! UV textures, trained with soft dice.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{param_grads, seeded_rng, Adam, AdamConfig, Bound, Conv2d, Graph, ParamStore, Real, Tensor, Var};
use crate::raster::{check_same_dims, PatternMask, SoftMask, TextureMap};

/// Smoothing of the soft dice coefficient, in summed-weight units.
pub const DICE_EPS: f64 = 1.0;

pub const PATTERN_KIND: &str = "pattern";

/// (2·Σ gt·pr + ε) / (Σ gt + Σ pr + ε).
pub fn dice_coefficient(gt: &PatternMask, pr: &PatternMask) -> Result<f64> {
    check_same_dims(gt.dims(), pr.dims(), "dice")?;
    let (mut inter, mut sum) = (0.0f64, 0.0f64);
    for (&a, &b) in gt.data().iter().zip(pr.data()) {
        inter += a as f64 * b as f64;
        sum += a as f64 + b as f64;
    }
    Ok((2.0 * inter + DICE_EPS) / (sum + DICE_EPS))
}

/// Mean over the batch of 1 − dice, for `[N,1,H,W]` predictions and targets.
pub fn dice_loss_graph<T: Real>(g: &Graph<T>, pred: Var, target: Var) -> Var {
    let eps = T::lit(DICE_EPS);
    let inter = g.sum_per_sample(g.mul(pred, target));
    let num = g.add_scalar(g.scale(inter, T::lit(2.0)), eps);
    let den = g.add_scalar(g.add(g.sum_per_sample(pred), g.sum_per_sample(target)), eps);
    let dice = g.div(num, den);
    g.add_scalar(g.scale(g.mean(dice), -T::one()), T::one())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegNetConfig {
    /// Full-resolution skip features.
    pub stem: usize,
    /// Channels at 1/2, 1/4 and 1/8 resolution.
    pub widths: Vec<usize>,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self { stem: 4, widths: vec![8, 16, 24] }
    }
}

impl SegNetConfig {
    pub fn size_multiple(&self) -> usize {
        1 << self.widths.len()
    }
}

/// UNet-style segmenter. The encoder pools then convolves; the decoder
/// upsamples and adds 1×1-projected skips. The head ends in a sigmoid.
#[derive(Clone, Debug)]
pub struct SegNet {
    pub config: SegNetConfig,
    pub params: ParamStore<f32>,
    stem: Conv2d,
    down: Vec<Conv2d>,
    skips: Vec<Conv2d>,
    up: Vec<Conv2d>,
    head: Conv2d,
}

impl SegNet {
    pub fn new(config: SegNetConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) || config.stem == 0 {
            return Err(Error::param("segmentation widths must be positive"));
        }
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new();
        let stem = Conv2d::new(&mut p, "stem", 3, config.stem, 3, 1, 1, &mut rng);
        let mut ci = config.stem;
        let mut down = Vec::new();
        for (i, &co) in config.widths.iter().enumerate() {
            down.push(Conv2d::new(&mut p, &format!("down.{i}"), ci, co, 3, 1, 1, &mut rng));
            ci = co;
        }
        // skip projections into the decoder width at each level, coarse to fine
        let mut chans: Vec<usize> = vec![config.stem];
        chans.extend(&config.widths[..config.widths.len() - 1]);
        let mut skips = Vec::new();
        let mut up = Vec::new();
        let mut cur = *config.widths.last().expect("non-empty");
        for (lvl, &skip_c) in chans.iter().enumerate().rev() {
            skips.push(Conv2d::new(&mut p, &format!("skip.{lvl}"), skip_c, cur, 1, 1, 0, &mut rng));
            let co = skip_c.max(config.stem);
            up.push(Conv2d::new(&mut p, &format!("up.{lvl}"), cur, co, 3, 1, 1, &mut rng));
            cur = co;
        }
        let head = Conv2d::new(&mut p, "head", cur, 1, 1, 1, 0, &mut rng);
        Ok(Self { config, params: p, stem, down, skips, up, head })
    }

    /// Sigmoid probabilities, shape `[N,1,H,W]`.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let mut feats = Vec::with_capacity(self.down.len() + 1);
        let mut h = g.relu(self.stem.forward(g, p, x));
        for c in &self.down {
            feats.push(h);
            h = g.relu(c.forward(g, p, g.avg_pool2(h)));
        }
        for (skip, up) in self.skips.iter().zip(&self.up) {
            let s = feats.pop().expect("one skip per level");
            h = g.add(g.upsample(h, 2), skip.forward(g, p, s));
            h = g.relu(up.forward(g, p, h));
        }
        g.sigmoid(self.head.forward(g, p, h))
    }

    fn check_input(&self, tex: &TextureMap) -> Result<()> {
        let m = self.config.size_multiple();
        let (w, h) = tex.dims();
        if w % m != 0 || h % m != 0 {
            return Err(Error::shape(format!("texture size {w}x{h} must be a multiple of {m}")));
        }
        Ok(())
    }

    /// Raw sigmoid output, in (0,1) everywhere.
    pub fn predict_raw(&self, tex: &TextureMap) -> Result<PatternMask> {
        self.check_input(tex)?;
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let y = self.forward(&g, &p, g.constant(Tensor::from_image(tex.image())));
        Ok(g.value(y).to_mask(0))
    }

    /// Predicted pattern mask with texels outside `valid` zeroed.
    pub fn predict_mask(&self, tex: &TextureMap, valid: &[bool]) -> Result<PatternMask> {
        let mut m = self.predict_raw(tex)?;
        if valid.len() != m.data().len() {
            return Err(Error::shape("validity mask does not match texture size"));
        }
        m.restrict_to(valid);
        Ok(m)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(PATTERN_KIND, serde_json::json!({ "config": self.config, "train": meta }));
        ck.extend(self.params.iter().map(|(n, t)| (format!("s.{n}"), t.clone())));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(PATTERN_KIND)?;
        let config: SegNetConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or_default())
            .map_err(|e| CheckpointError::Header(format!("segmentation config: {e}")))?;
        let mut net = Self::new(config, 0)?;
        ck.load_into(&mut net.params, "s.")?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(serde_json::Value::Null).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&Checkpoint::load(path)?).map_err(|e| match e {
            Error::Checkpoint { path: None, source } => Error::Checkpoint { path: Some(path.to_path_buf()), source },
            other => other,
        })
    }
}

/// Anything that predicts a pattern mask for a UV texture.
pub trait PatternSegmenter: Send + Sync {
    fn segment(&self, tex: &TextureMap, valid: &[bool]) -> Result<PatternMask>;
}

impl PatternSegmenter for SegNet {
    fn segment(&self, tex: &TextureMap, valid: &[bool]) -> Result<PatternMask> {
        self.predict_mask(tex, valid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub net: SegNetConfig,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch_size: 8, lr: 0.0001, seed: 0, net: SegNetConfig::default(), checkpoint_dir: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpochLog {
    pub epoch: usize,
    /// Mean 1 − dice over the epoch's batches.
    pub loss: f64,
}

/// Supervised training on (texture, mask) pairs.
pub fn train_pattern(
    data: &[(TextureMap, PatternMask)],
    config: &SegTrainConfig,
    mut on_epoch: impl FnMut(&SegEpochLog),
) -> Result<SegNet> {
    let mut net = SegNet::new(config.net.clone(), config.seed)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no (texture, mask) pairs".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::param("batch_size must be at least 1"));
    }
    let dims = data[0].0.dims();
    for (t, m) in data {
        check_same_dims(t.dims(), dims, "training texture")?;
        check_same_dims(m.dims(), dims, "training mask")?;
    }
    net.check_input(&data[0].0)?;
    let mut opt = Adam::new(AdamConfig::new(config.lr), &net.params);
    let mut rng = seeded_rng(config.seed ^ 0x5eed_5e60);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let texs: Vec<_> = chunk.iter().map(|&i| data[i].0.image()).collect();
            let masks: Vec<&SoftMask> = chunk.iter().map(|&i| &data[i].1).collect();
            let g = Graph::new();
            let p = net.params.bind(&g);
            let pred = net.forward(&g, &p, g.constant(Tensor::from_images(&texs)?));
            let loss = dice_loss_graph(&g, pred, g.constant(Tensor::from_masks(&masks)?));
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: epoch as u64, detail: "dice loss".into() });
            }
            let grads = param_grads(&mut g.backward(loss), &p);
            opt.step(&mut net.params, &grads);
            total += value;
            batches += 1;
        }
        let log = SegEpochLog { epoch, loss: total / batches as f64 };
        log::info!("pattern epoch {epoch}: dice loss {:.5}", log.loss);
        on_epoch(&log);
        if let Some(dir) = &config.checkpoint_dir {
            let meta = serde_json::json!({ "epoch": epoch, "loss": log.loss, "config": config });
            net.to_checkpoint(meta).save(dir.join(format!("pattern-epoch-{epoch:04}.ckpt")))?;
        }
    }
    Ok(net)
}
