use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Puts every parameter on `g` as a trainable leaf; index the result with a [`ParamId`].
    pub fn bind(&self, g: &Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Same as [`bind`](Self::bind) but without gradients (inference, frozen networks).
    pub fn bind_frozen(&self, g: &Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Replaces every tensor with the same-named one from `named`, checking shapes.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Dataset(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::shape(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// 2-D convolution with He-normal initialization and zero bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::with_gain(store, name, ci, co, k, stride, pad, 1.0, rng)
    }

    /// Like [`new`](Self::new) with the init standard deviation multiplied by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_gain<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (ci * k * k) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
        let shape = [co, ci, k, k];
        let data = (0..co * ci * k * k).map(|_| T::lit(normal.sample(rng))).collect();
        let w = store.add(format!("{name}.weight"), Tensor::new(shape, data));
        let b = store.add(format!("{name}.bias"), Tensor::zeros([1, co, 1, 1]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv(x, p.var(self.w), Some(p.var(self.b)), self.stride, self.pad)
    }
}
