use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }
}

/// Adam with bias correction. Moments are kept per parameter so they can be
/// checkpointed and training resumed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to the i-th parameter; `None` means zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match parameters");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else {
                // still decay the moments so every parameter sees the same schedule
                for (m, v) in self.m[i].data_mut().iter_mut().zip(self.v[i].data_mut()) {
                    *m *= b1;
                    *v *= b2;
                }
                continue;
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
    }

    /// Moment tensors as `(name, tensor)` pairs for checkpointing.
    pub fn state(&self, params: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for ((name, _), (m, v)) in params.iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("adam.m.{name}"), m.clone()));
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out.push(("adam.step".into(), Tensor::scalar(T::lit(self.step as f64))));
        out
    }

    pub fn load_state(&mut self, params: &ParamStore<T>, named: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |key: &str| {
            named
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Dataset(format!("missing optimizer state {key}")))
        };
        for (i, (name, p)) in params.iter().enumerate() {
            let m = find(&format!("adam.m.{name}"))?;
            let v = find(&format!("adam.v.{name}"))?;
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::shape(format!("optimizer state for {name} has the wrong shape")));
            }
            self.m[i] = m.clone();
            self.v[i] = v.clone();
        }
        self.step = find("adam.step")?.item().as_f64() as u64;
        Ok(())
    }
}
