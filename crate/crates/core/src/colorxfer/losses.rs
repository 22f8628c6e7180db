//! Generator and discriminator objectives for the color branch.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::histogram::histogram_match;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};
use crate::raster::{check_same_dims, Image, SoftMask, TextureMap};
use crate::uvgeom::{Region, RegionMaskSet};

/// Weights of the generator objective and of the per-region histogram terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_per: f64,
    pub lambda_hist: f64,
    pub lambda_eyes: f64,
    pub lambda_lips: f64,
    pub lambda_skin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_cyc: 10.0,
            lambda_per: 0.005,
            lambda_hist: 1.0,
            lambda_eyes: 1.0,
            lambda_lips: 1.0,
            lambda_skin: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_adv: 0.0,
            lambda_cyc: 0.0,
            lambda_per: 0.0,
            lambda_hist: 0.0,
            lambda_eyes: 0.0,
            lambda_lips: 0.0,
            lambda_skin: 0.0,
        }
    }

    pub fn region(&self, r: Region) -> f64 {
        match r {
            Region::Eyes => self.lambda_eyes,
            Region::Lips => self.lambda_lips,
            Region::Skin => self.lambda_skin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_adv", self.lambda_adv),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_per", self.lambda_per),
            ("lambda_hist", self.lambda_hist),
            ("lambda_eyes", self.lambda_eyes),
            ("lambda_lips", self.lambda_lips),
            ("lambda_skin", self.lambda_skin),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar parts of one generator objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub cyc: f64,
    pub per: f64,
    pub hist: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.adv, self.cyc, self.per, self.hist, self.total].iter().all(|v| v.is_finite())
    }
}

fn masked(tex: &TextureMap, mask: &SoftMask) -> TextureMap {
    TextureMap::from_image(tex.masked(mask).expect("dims checked by caller"))
}

/// Histogram-matched target for one region: HM(source⊙Γ, reference⊙Γ, Γ).
pub fn region_target(source: &TextureMap, reference: &TextureMap, mask: &SoftMask) -> Result<TextureMap> {
    check_same_dims(source.dims(), reference.dims(), "histogram target reference")?;
    check_same_dims(source.dims(), mask.dims(), "histogram target mask")?;
    Ok(histogram_match(&masked(source, mask), &masked(reference, mask), mask)?.texture)
}

/// Constant tensors of one regional histogram term, batched.
#[derive(Clone, Debug)]
pub struct HistTerm<T> {
    pub mask3: Rc<Tensor<T>>,
    pub target: Tensor<T>,
    /// λ_hist·λ_i / (3·ΣΓ_i·N), broadcast over the sample.
    pub weight: Rc<Tensor<T>>,
}

/// Builds the histogram terms for a batch of (output source, reference) pairs.
/// Regions with zero weight or empty masks are left out.
pub fn hist_terms<T: Real>(
    sources: &[&TextureMap],
    references: &[&TextureMap],
    regions: &RegionMaskSet,
    w: &LossWeights,
) -> Result<Vec<HistTerm<T>>> {
    if sources.len() != references.len() || sources.is_empty() {
        return Err(Error::shape("histogram loss needs equally many sources and references"));
    }
    let n = sources.len();
    let mut terms = Vec::new();
    for (region, mask) in regions.iter() {
        let lambda = w.lambda_hist * w.region(region);
        let area = mask.sum();
        if lambda == 0.0 || area <= 0.0 {
            continue;
        }
        let mut targets = Vec::with_capacity(n);
        for (s, r) in sources.iter().zip(references) {
            targets.push(region_target(s, r, mask)?.into_image());
        }
        let target = Tensor::from_images(&targets.iter().collect::<Vec<_>>())?;
        let mask3 = Tensor::<T>::from_masks(&[mask])?.repeat_channels(3).repeat_batch(n);
        let scale = T::lit(lambda / (3.0 * area * n as f64));
        let weight = mask3.map(|_| scale);
        terms.push(HistTerm { mask3: Rc::new(mask3), target, weight: Rc::new(weight) });
    }
    Ok(terms)
}

/// Σ_i weight_i · Σ|out⊙Γ_i − target_i|; zero when there are no terms.
pub fn hist_loss_graph<T: Real>(g: &Graph<T>, out: Var, terms: &[HistTerm<T>]) -> Option<Var> {
    let mut total: Option<Var> = None;
    for t in terms {
        let masked = g.mul_const(out, Rc::clone(&t.mask3));
        let diff = g.sub(masked, g.constant(t.target.clone()));
        let term = g.sum(g.mul_const(g.abs(diff), Rc::clone(&t.weight)));
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    total
}

/// Weighted regional histogram loss of `output` against HM targets built from
/// `source` and `reference`, scaled by `lambda_hist`.
pub fn hist_loss(
    output: &TextureMap,
    source: &TextureMap,
    reference: &TextureMap,
    regions: &RegionMaskSet,
    w: &LossWeights,
) -> Result<f64> {
    check_same_dims(output.dims(), source.dims(), "histogram loss output")?;
    let mut total = 0.0;
    for (region, mask) in regions.iter() {
        let lambda = w.lambda_hist * w.region(region);
        let area = mask.sum();
        if lambda == 0.0 || area <= 0.0 {
            continue;
        }
        let target = region_target(source, reference, mask)?;
        let mut acc = 0.0f64;
        for ((o, t), &m) in output.data().chunks_exact(3).zip(target.data().chunks_exact(3)).zip(mask.data()) {
            for c in 0..3 {
                acc += (o[c] as f64 * m as f64 - t[c] as f64).abs();
            }
        }
        total += lambda * acc / (3.0 * area);
    }
    Ok(total)
}

/// Mean absolute error.
pub fn l1_graph<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Var {
    g.mean(g.abs(g.sub(a, b)))
}

/// Mean squared error.
pub fn mse_graph<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Var {
    g.mean(g.square(g.sub(a, b)))
}

/// Least-squares GAN term pushing discriminator output `d` toward 1.
pub fn lsgan_real<T: Real>(g: &Graph<T>, d: Var) -> Var {
    g.mean(g.square(g.add_scalar(d, -T::one())))
}

/// Least-squares GAN term pushing discriminator output `d` toward 0.
pub fn lsgan_fake<T: Real>(g: &Graph<T>, d: Var) -> Var {
    g.mean(g.square(d))
}

/// Cycle-consistency distance between two textures (mean absolute error).
pub fn cyc_loss(reconstructed: &Image, original: &Image) -> Result<f64> {
    check_same_dims(reconstructed.dims(), original.dims(), "cycle loss")?;
    let n = original.data().len() as f64;
    Ok(reconstructed.data().iter().zip(original.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_adv, w.lambda_cyc, w.lambda_per, w.lambda_hist), (1.0, 10.0, 0.005, 1.0));
        assert_eq!((w.lambda_eyes, w.lambda_lips, w.lambda_skin), (1.0, 1.0, 0.1));
        let bad = LossWeights { lambda_cyc: -1.0, ..w };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hist_loss_vanishes_at_its_target() {
        let lips =
            SoftMask::from_fn(16, 16, |x, y| if (4..12).contains(&x) && (6..10).contains(&y) { 1.0 } else { 0.0 });
        let regions =
            RegionMaskSet { eyes: SoftMask::zeros(16, 16), lips: lips.clone(), skin: SoftMask::zeros(16, 16) };
        let src = TextureMap::from_image(Image::from_fn(16, 16, |x, y| [x as f32 / 15.0, 0.3, y as f32 / 15.0]));
        let rf = TextureMap::from_image(Image::from_fn(16, 16, |x, _| [0.9, x as f32 / 20.0, 0.2]));
        let w = LossWeights::default();
        let target = region_target(&src, &rf, &lips).unwrap();
        assert_eq!(hist_loss(&target, &src, &rf, &regions, &w).unwrap(), 0.0);
        assert!(hist_loss(&src, &src, &rf, &regions, &w).unwrap() > 0.0);
        assert_eq!(hist_loss(&src, &src, &rf, &regions, &LossWeights::zero()).unwrap(), 0.0);
    }
}
