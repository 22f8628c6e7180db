//! Color-swapping generator, patch discriminators and the perceptual feature stack.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{seeded_rng, Bound, Conv2d, Graph, ParamStore, Real, Tensor, Var};
use crate::raster::{check_same_dims, TextureMap};
use crate::uvgeom::UvLayout;

const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorNetConfig {
    /// Channels after each stride-2 encoder stage.
    pub encoder_widths: Vec<usize>,
    pub res_blocks: usize,
    /// Channels of the stride-2 discriminator stages (input is first halved).
    pub disc_widths: Vec<usize>,
    /// Init gain of the last decoder conv; small values start near identity.
    pub output_gain: f64,
}

impl Default for ColorNetConfig {
    fn default() -> Self {
        Self { encoder_widths: vec![8, 16, 16], res_blocks: 4, disc_widths: vec![8, 16, 32], output_gain: 0.1 }
    }
}

impl ColorNetConfig {
    fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::param("encoder_widths must be non-empty and positive"));
        }
        if self.disc_widths.is_empty() || self.disc_widths.contains(&0) {
            return Err(Error::param("disc_widths must be non-empty and positive"));
        }
        Ok(())
    }

    /// Side length must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.encoder_widths.len().max(self.disc_widths.len() + 1)
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    stages: Vec<Conv2d>,
}

#[derive(Clone, Debug)]
struct Decoder {
    stages: Vec<Conv2d>,
    out: Conv2d,
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

/// Dual-input, dual-output generator: (non-makeup a, makeup b) →
/// (a wearing b's makeup, b with makeup removed). Each decoder predicts a
/// residual at half resolution that is upsampled and added to its input.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamStore<f32>,
    enc: [Encoder; 2],
    fuse: Conv2d,
    blocks: Vec<ResBlock>,
    dec: [Decoder; 2],
}

impl Generator {
    pub fn new(cfg: &ColorNetConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new();
        let widths = &cfg.encoder_widths;
        let last = *widths.last().expect("validated");
        let enc = ["enc_a", "enc_b"].map(|name| {
            let mut ci = 3;
            let stages = widths
                .iter()
                .enumerate()
                .map(|(i, &co)| {
                    let c = Conv2d::new(&mut p, &format!("{name}.{i}"), ci, co, 3, 2, 1, &mut rng);
                    ci = co;
                    c
                })
                .collect();
            Encoder { stages }
        });
        let fuse = Conv2d::new(&mut p, "fuse", 2 * last, last, 1, 1, 0, &mut rng);
        let blocks = (0..cfg.res_blocks)
            .map(|i| ResBlock {
                a: Conv2d::new(&mut p, &format!("res.{i}.a"), last, last, 3, 1, 1, &mut rng),
                b: Conv2d::new(&mut p, &format!("res.{i}.b"), last, last, 3, 1, 1, &mut rng),
            })
            .collect();
        let dec = ["dec_a", "dec_b"].map(|name| {
            // upsampling stages mirror the encoder, stopping one short of full resolution
            let mut ci = last;
            let stages = (0..widths.len() - 1)
                .rev()
                .map(|i| {
                    let co = widths[i];
                    let c = Conv2d::new(&mut p, &format!("{name}.{i}"), ci, co, 3, 1, 1, &mut rng);
                    ci = co;
                    c
                })
                .collect();
            let out = Conv2d::with_gain(&mut p, &format!("{name}.out"), ci, 3, 3, 1, 1, cfg.output_gain, &mut rng);
            Decoder { stages, out }
        });
        Self { params: p, enc, fuse, blocks, dec }
    }

    fn encode<T: Real>(&self, g: &Graph<T>, p: &Bound, which: usize, x: Var) -> Var {
        let mut h = x;
        for c in &self.enc[which].stages {
            h = g.leaky_relu(c.forward(g, p, h), T::lit(LEAK));
        }
        h
    }

    fn decode<T: Real>(&self, g: &Graph<T>, p: &Bound, which: usize, z: Var, input: Var, valid: &Rc<Tensor<T>>) -> Var {
        let d = &self.dec[which];
        let mut h = z;
        for c in &d.stages {
            h = g.upsample(h, 2);
            h = g.relu(g.instance_norm(c.forward(g, p, h), T::lit(NORM_EPS)));
        }
        let res = g.tanh(d.out.forward(g, p, h));
        let res = g.upsample(res, 2);
        let out = g.clamp(g.add(input, res), T::zero(), T::one());
        g.mul_const(out, Rc::clone(valid))
    }

    /// `valid` is the UV validity mask broadcast to the inputs' shape.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, a: Var, b: Var, valid: &Rc<Tensor<T>>) -> (Var, Var) {
        let za = self.encode(g, p, 0, a);
        let zb = self.encode(g, p, 1, b);
        let mut z = g.relu(g.instance_norm(self.fuse.forward(g, p, g.concat(&[za, zb])), T::lit(NORM_EPS)));
        for blk in &self.blocks {
            let h = g.relu(g.instance_norm(blk.a.forward(g, p, z), T::lit(NORM_EPS)));
            let h = g.instance_norm(blk.b.forward(g, p, h), T::lit(NORM_EPS));
            z = g.add(z, h);
        }
        (self.decode(g, p, 0, z, a, valid), self.decode(g, p, 1, z, b, valid))
    }
}

/// PatchGAN-style discriminator producing a grid of least-squares scores.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore<f32>,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(cfg: &ColorNetConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new();
        let mut ci = 3;
        let stages = cfg
            .disc_widths
            .iter()
            .enumerate()
            .map(|(i, &co)| {
                let c = Conv2d::new(&mut p, &format!("d.{i}"), ci, co, 4, 2, 1, &mut rng);
                ci = co;
                c
            })
            .collect();
        let head = Conv2d::new(&mut p, "d.head", ci, 1, 3, 1, 1, &mut rng);
        Self { params: p, stages, head }
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = g.avg_pool2(x);
        for c in &self.stages {
            h = g.leaky_relu(c.forward(g, p, h), T::lit(LEAK));
        }
        self.head.forward(g, p, h)
    }
}

/// Frozen convolutional feature stack for the perceptual loss. Ships with a
/// seeded random initialization; pretrained weights in the same layout can be
/// loaded from a checkpoint of kind `features`.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub params: ParamStore<f32>,
    convs: Vec<Conv2d>,
}

pub const FEATURE_WIDTHS: [usize; 3] = [8, 16, 16];

impl FeatureStack {
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new();
        let mut ci = 3;
        let convs = FEATURE_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &co)| {
                let c = Conv2d::new(&mut p, &format!("f.{i}"), ci, co, 3, 1, 1, &mut rng);
                ci = co;
                c
            })
            .collect();
        Self { params: p, convs }
    }

    pub fn from_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        ckpt.expect_kind("features")?;
        let mut stack = Self::random(0);
        stack.params.load_named(&ckpt.tensors)?;
        Ok(stack)
    }

    /// Features at half resolution after each conv (ReLU), pooled between stages.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = g.avg_pool2(x);
        for (i, c) in self.convs.iter().enumerate() {
            if i > 0 && g.shape(h)[2] >= 2 && g.shape(h)[3] >= 2 {
                h = g.avg_pool2(h);
            }
            h = g.relu(c.forward(g, p, h));
        }
        h
    }
}

/// Anything that swaps makeup color between a source and a reference texture.
pub trait ColorTransfer: Send + Sync {
    /// Returns (source wearing the reference's makeup, reference with makeup removed).
    fn swap(&self, source: &TextureMap, reference: &TextureMap) -> Result<(TextureMap, TextureMap)>;
}

/// Passes both textures through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityColor;

impl ColorTransfer for IdentityColor {
    fn swap(&self, source: &TextureMap, reference: &TextureMap) -> Result<(TextureMap, TextureMap)> {
        check_same_dims(source.dims(), reference.dims(), "color swap")?;
        Ok((source.clone(), reference.clone()))
    }
}

/// Generator, the two domain discriminators and the perceptual feature stack.
#[derive(Clone, Debug)]
pub struct ColorNet {
    pub config: ColorNetConfig,
    pub generator: Option<Generator>,
    pub disc_makeup: Discriminator,
    pub disc_plain: Discriminator,
    pub features: FeatureStack,
}

pub const COLOR_KIND: &str = "color";

impl ColorNet {
    /// Randomly initialized network; all parts derive their seeds from `seed`.
    pub fn new(config: ColorNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            generator: Some(Generator::new(&config, seed)),
            disc_makeup: Discriminator::new(&config, seed.wrapping_add(1)),
            disc_plain: Discriminator::new(&config, seed.wrapping_add(2)),
            features: FeatureStack::random(seed.wrapping_add(3)),
            config,
        })
    }

    /// A network without generator weights; [`swap`](ColorTransfer::swap) fails until weights are loaded.
    pub fn uninitialized(config: ColorNetConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.generator = None;
        Ok(net)
    }

    pub fn generator(&self) -> Result<&Generator> {
        self.generator.as_ref().ok_or(Error::Uninitialized("color generator"))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let gen = self.generator()?;
        let mut ck = Checkpoint::new(COLOR_KIND, serde_json::json!({ "config": self.config, "train": meta }));
        let parts: [(&str, &ParamStore<f32>); 4] = [
            ("g.", &gen.params),
            ("dm.", &self.disc_makeup.params),
            ("dn.", &self.disc_plain.params),
            ("f.", &self.features.params),
        ];
        for (prefix, store) in parts {
            ck.extend(store.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(COLOR_KIND)?;
        let config: ColorNetConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or_default())
            .map_err(|e| CheckpointError::Header(format!("color config: {e}")))?;
        let mut net = Self::new(config, 0)?;
        let gen = net.generator.as_mut().expect("just built");
        ck.load_into(&mut gen.params, "g.")?;
        ck.load_into(&mut net.disc_makeup.params, "dm.")?;
        ck.load_into(&mut net.disc_plain.params, "dn.")?;
        ck.load_into(&mut net.features.params, "f.")?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(serde_json::Value::Null)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&Checkpoint::load(path)?).map_err(|e| match e {
            Error::Checkpoint { path: None, source } => Error::Checkpoint { path: Some(path.to_path_buf()), source },
            other => other,
        })
    }
}

/// UV validity mask broadcast to an `[n, 3, h, w]` batch.
pub(crate) fn valid_tensor<T: Real>(valid: &[bool], n: usize, w: usize, h: usize) -> Rc<Tensor<T>> {
    assert_eq!(valid.len(), w * h);
    let plane: Vec<T> = valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
    let one = Tensor::new([1, 1, h, w], plane);
    Rc::new(one.repeat_channels(3).repeat_batch(n))
}

impl ColorNet {
    /// Swap on a batch of equally sized texture pairs.
    pub fn swap_batch(
        &self,
        sources: &[&TextureMap],
        references: &[&TextureMap],
        valid: &[bool],
    ) -> Result<Vec<(TextureMap, TextureMap)>> {
        let gen = self.generator()?;
        if sources.len() != references.len() {
            return Err(Error::shape("swap needs equally many sources and references"));
        }
        let imgs = |ts: &[&TextureMap]| Tensor::<f32>::from_images(&ts.iter().map(|t| t.image()).collect::<Vec<_>>());
        let (a, b) = (imgs(sources)?, imgs(references)?);
        if a.shape() != b.shape() {
            return Err(Error::shape("source and reference textures differ in size"));
        }
        let [n, _, h, w] = a.shape();
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("texture size {w}x{h} must be a multiple of {m}")));
        }
        if valid.len() != w * h {
            return Err(Error::shape("validity mask does not match texture size"));
        }
        let g = Graph::new();
        let p = gen.params.bind_frozen(&g);
        let vt = valid_tensor(valid, n, w, h);
        let (fa, fb) = gen.forward(&g, &p, g.constant(a), g.constant(b), &vt);
        let (fa, fb) = (g.value(fa), g.value(fb));
        Ok((0..n).map(|i| (TextureMap::from_image(fa.to_image(i)), TextureMap::from_image(fb.to_image(i)))).collect())
    }
}

impl ColorTransfer for ColorNet {
    fn swap(&self, source: &TextureMap, reference: &TextureMap) -> Result<(TextureMap, TextureMap)> {
        check_same_dims(source.dims(), reference.dims(), "color swap")?;
        let (w, h) = source.dims();
        let layout = UvLayout::face(w, h);
        Ok(self.swap_batch(&[source], &[reference], layout.valid())?.remove(0))
    }
}
