//! Unpaired training of the color branch.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    hist_loss_graph, hist_terms, l1_graph, lsgan_fake, lsgan_real, mse_graph, LossBreakdown, LossWeights,
};
use super::net::{valid_tensor, ColorNet, ColorNetConfig, Discriminator, COLOR_KIND};
use crate::checkpoint::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{param_grads, seeded_rng, Adam, AdamConfig, Bound, Graph, Tensor, Var};
use crate::raster::TextureMap;
use crate::uvgeom::UvLayout;

/// Unpaired texture sets: faces without makeup and faces wearing makeup.
#[derive(Clone, Debug, Default)]
pub struct ColorDataset {
    pub plain: Vec<TextureMap>,
    pub makeup: Vec<TextureMap>,
}

impl ColorDataset {
    fn validate(&self, multiple: usize) -> Result<(usize, usize)> {
        if self.plain.is_empty() {
            return Err(Error::EmptyDataset("no non-makeup textures".into()));
        }
        if self.makeup.is_empty() {
            return Err(Error::EmptyDataset("no makeup textures".into()));
        }
        let dims = self.plain[0].dims();
        if self.plain.iter().chain(&self.makeup).any(|t| t.dims() != dims) {
            return Err(Error::shape("all training textures must share dimensions"));
        }
        if dims.0 % multiple != 0 || dims.1 % multiple != 0 {
            return Err(Error::shape(format!("texture size {}x{} must be a multiple of {multiple}", dims.0, dims.1)));
        }
        Ok(dims)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorTrainConfig {
    pub epochs: usize,
    /// Defaults to the size of the larger texture set.
    pub iterations_per_epoch: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub weights: LossWeights,
    pub net: ColorNetConfig,
    /// One checkpoint per epoch is written here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ColorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            iterations_per_epoch: None,
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            seed: 0,
            weights: LossWeights::default(),
            net: ColorNetConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl ColorTrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr).with_betas(self.beta1, self.beta2)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param("lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorStepLog {
    pub iteration: u64,
    /// Generator objective evaluated on the state before this step's update.
    pub generator: LossBreakdown,
    pub discriminator: f64,
}

struct Objective {
    total: Option<Var>,
    parts: [Option<Var>; 4],
    fake_a: Var,
    fake_b: Var,
}

/// Training state: network, optimizers, iteration counter and sampling RNG.
pub struct ColorTrainer {
    pub net: ColorNet,
    pub config: ColorTrainConfig,
    layout: UvLayout,
    opt_g: Adam<f32>,
    opt_dm: Adam<f32>,
    opt_dn: Adam<f32>,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl ColorTrainer {
    pub fn new(config: ColorTrainConfig, layout: UvLayout) -> Result<Self> {
        config.validate()?;
        let net = ColorNet::new(config.net.clone(), config.seed)?;
        Ok(Self::from_net(net, config, layout))
    }

    fn from_net(net: ColorNet, config: ColorTrainConfig, layout: UvLayout) -> Self {
        let adam = config.adam();
        let gen = net.generator.as_ref().expect("trainer nets are initialized");
        Self {
            opt_g: Adam::new(adam, &gen.params),
            opt_dm: Adam::new(adam, &net.disc_makeup.params),
            opt_dn: Adam::new(adam, &net.disc_plain.params),
            rng: seeded_rng(config.seed ^ 0x5eed_c010),
            iteration: 0,
            net,
            config,
            layout,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn objective(&self, g: &Graph<f32>, gp: &Bound, a: &[&TextureMap], b: &[&TextureMap]) -> Result<Objective> {
        let w = &self.config.weights;
        let gen = self.net.generator()?;
        let n = a.len();
        let (tw, th) = a[0].dims();
        let valid = valid_tensor(self.layout.valid(), n, tw, th);
        let stack = |ts: &[&TextureMap]| Tensor::from_images(&ts.iter().map(|t| t.image()).collect::<Vec<_>>());
        let xa = g.constant(stack(a)?);
        let xb = g.constant(stack(b)?);
        let (fa, fb) = gen.forward(g, gp, xa, xb, &valid);

        let mut parts: [Option<Var>; 4] = [None; 4];
        if w.lambda_adv > 0.0 {
            let dm = self.net.disc_makeup.params.bind_frozen(g);
            let dn = self.net.disc_plain.params.bind_frozen(g);
            let adv_m = lsgan_real(g, self.net.disc_makeup.forward(g, &dm, fa));
            let adv_n = lsgan_real(g, self.net.disc_plain.forward(g, &dn, fb));
            parts[0] = Some(g.add(adv_m, adv_n));
        }
        if w.lambda_cyc > 0.0 {
            let (rec_b, rec_a) = gen.forward(g, gp, fb, fa, &valid);
            parts[1] = Some(g.add(l1_graph(g, rec_a, xa), l1_graph(g, rec_b, xb)));
        }
        if w.lambda_per > 0.0 {
            let fp = self.net.features.params.bind_frozen(g);
            let f = &self.net.features;
            let per_a = mse_graph(g, f.forward(g, &fp, xa), f.forward(g, &fp, fa));
            let per_b = mse_graph(g, f.forward(g, &fp, xb), f.forward(g, &fp, fb));
            parts[2] = Some(g.add(per_a, per_b));
        }
        if w.lambda_hist > 0.0 {
            let regions = self.layout.region_masks();
            let ta = hist_terms::<f32>(a, b, regions, w)?;
            let tb = hist_terms::<f32>(b, a, regions, w)?;
            parts[3] = match (hist_loss_graph(g, fa, &ta), hist_loss_graph(g, fb, &tb)) {
                (Some(x), Some(y)) => Some(g.add(x, y)),
                (x, y) => x.or(y),
            };
        }
        // lambda_hist is already folded into the histogram term weights
        let lambdas = [w.lambda_adv, w.lambda_cyc, w.lambda_per, 1.0];
        let mut total: Option<Var> = None;
        for (part, &l) in parts.iter().zip(&lambdas) {
            if let Some(p) = part {
                let term = g.scale(*p, l as f32);
                total = Some(match total {
                    Some(t) => g.add(t, term),
                    None => term,
                });
            }
        }
        Ok(Objective { total, parts, fake_a: fa, fake_b: fb })
    }

    fn breakdown(&self, g: &Graph<f32>, obj: &Objective) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item() as f64);
        LossBreakdown {
            adv: v(obj.parts[0]),
            cyc: v(obj.parts[1]),
            per: v(obj.parts[2]),
            hist: v(obj.parts[3]),
            total: v(obj.total),
        }
    }

    /// Generator objective for a batch without updating anything.
    pub fn evaluate(&self, plain: &[&TextureMap], makeup: &[&TextureMap]) -> Result<LossBreakdown> {
        check_batch(plain, makeup)?;
        let g = Graph::new();
        let gp = self.net.generator()?.params.bind_frozen(&g);
        let obj = self.objective(&g, &gp, plain, makeup)?;
        Ok(self.breakdown(&g, &obj))
    }

    /// One generator update followed by one discriminator update on the given batch.
    pub fn step_on(&mut self, plain: &[&TextureMap], makeup: &[&TextureMap]) -> Result<ColorStepLog> {
        check_batch(plain, makeup)?;
        let iteration = self.iteration + 1;
        let g = Graph::new();
        let gen = self.net.generator()?;
        let gp = gen.params.bind(&g);
        let obj = self.objective(&g, &gp, plain, makeup)?;
        let generator = self.breakdown(&g, &obj);
        if !generator.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, detail: format!("generator objective {generator:?}") });
        }
        let grads = match obj.total {
            Some(total) => param_grads(&mut g.backward(total), &gp),
            None => vec![None; gen.params.len()],
        };
        let fake_a = (*g.value(obj.fake_a)).clone();
        let fake_b = (*g.value(obj.fake_b)).clone();
        drop(g);
        self.opt_g.step(&mut self.net.generator.as_mut().expect("checked").params, &grads);

        let mut discriminator = 0.0;
        if self.config.weights.lambda_adv > 0.0 {
            let real_b = Tensor::from_images(&makeup.iter().map(|t| t.image()).collect::<Vec<_>>())?;
            let real_a = Tensor::from_images(&plain.iter().map(|t| t.image()).collect::<Vec<_>>())?;
            let lm = disc_step(&mut self.net.disc_makeup, &mut self.opt_dm, real_b, fake_a);
            let ln = disc_step(&mut self.net.disc_plain, &mut self.opt_dn, real_a, fake_b);
            discriminator = lm + ln;
            if !discriminator.is_finite() {
                return Err(Error::NonFiniteLoss { iteration, detail: "discriminator objective".into() });
            }
        }
        self.iteration = iteration;
        Ok(ColorStepLog { iteration, generator, discriminator })
    }

    /// Draws one batch from each set with the trainer's seeded RNG.
    pub fn sample<'a>(&mut self, data: &'a ColorDataset) -> (Vec<&'a TextureMap>, Vec<&'a TextureMap>) {
        let bs = self.config.batch_size;
        let a = (0..bs).map(|_| &data.plain[self.rng.random_range(0..data.plain.len())]).collect();
        let b = (0..bs).map(|_| &data.makeup[self.rng.random_range(0..data.makeup.len())]).collect();
        (a, b)
    }

    /// Runs the configured epochs; `on_step` sees every log entry.
    pub fn train(&mut self, data: &ColorDataset, mut on_step: impl FnMut(&ColorStepLog)) -> Result<()> {
        data.validate(self.net.config.size_multiple())?;
        let per_epoch = self.config.iterations_per_epoch.unwrap_or(data.plain.len().max(data.makeup.len()));
        for epoch in 1..=self.config.epochs {
            let mut sum = 0.0;
            for _ in 0..per_epoch {
                let (a, b) = self.sample(data);
                let log = self.step_on(&a, &b)?;
                sum += log.generator.total;
                on_step(&log);
            }
            log::info!("color epoch {epoch}: mean generator loss {:.5}", sum / per_epoch.max(1) as f64);
            if let Some(dir) = &self.config.checkpoint_dir {
                self.save(dir.join(format!("color-epoch-{epoch:04}.ckpt")))?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "iteration": self.iteration,
            "config": self.config,
        });
        let mut ck = self.net.to_checkpoint(meta)?;
        let gen = self.net.generator()?;
        let prefixed = |prefix: &str, v: Vec<(String, Tensor<f32>)>| {
            v.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)).collect::<Vec<_>>()
        };
        ck.extend(prefixed("opt_g.", self.opt_g.state(&gen.params)));
        ck.extend(prefixed("opt_dm.", self.opt_dm.state(&self.net.disc_makeup.params)));
        ck.extend(prefixed("opt_dn.", self.opt_dn.state(&self.net.disc_plain.params)));
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Restores network and optimizer state. The sampling RNG restarts from the
    /// configured seed, so use [`step_on`](Self::step_on) for exact replays.
    pub fn resume(ck: &Checkpoint, layout: UvLayout) -> Result<Self> {
        ck.expect_kind(COLOR_KIND)?;
        let train = ck.meta.get("train").ok_or_else(|| CheckpointError::Header("no training state".into()))?;
        let config: ColorTrainConfig = serde_json::from_value(train.get("config").cloned().unwrap_or_default())
            .map_err(|e| CheckpointError::Header(format!("train config: {e}")))?;
        let iteration = train.get("iteration").and_then(|v| v.as_u64()).unwrap_or(0);
        let net = ColorNet::from_checkpoint(ck)?;
        let mut t = Self::from_net(net, config, layout);
        let gen = t.net.generator()?;
        t.opt_g.load_state(&gen.params, &ck.with_prefix("opt_g."))?;
        t.opt_dm.load_state(&t.net.disc_makeup.params, &ck.with_prefix("opt_dm."))?;
        t.opt_dn.load_state(&t.net.disc_plain.params, &ck.with_prefix("opt_dn."))?;
        t.iteration = iteration;
        Ok(t)
    }
}

fn check_batch(a: &[&TextureMap], b: &[&TextureMap]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::shape("batches must be non-empty and of equal size"));
    }
    Ok(())
}

fn disc_step(d: &mut Discriminator, opt: &mut Adam<f32>, real: Tensor<f32>, fake: Tensor<f32>) -> f64 {
    let g = Graph::new();
    let p = d.params.bind(&g);
    let real = d.forward(&g, &p, g.constant(real));
    let fake = d.forward(&g, &p, g.constant(fake));
    let loss = g.scale(g.add(lsgan_real(&g, real), lsgan_fake(&g, fake)), 0.5);
    let value = g.value(loss).item() as f64;
    let grads = param_grads(&mut g.backward(loss), &p);
    opt.step(&mut d.params, &grads);
    value
}

/// Histogram-loss weights of a trained network are part of its checkpoint.
pub fn weights_from_checkpoint(ck: &Checkpoint) -> Option<LossWeights> {
    let cfg = ck.meta.get("train")?.get("config")?;
    serde_json::from_value::<ColorTrainConfig>(cfg.clone()).ok().map(|c| c.weights)
}
