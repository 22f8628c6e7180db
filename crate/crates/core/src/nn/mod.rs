//! Small CPU neural-network engine: NCHW tensors, reverse-mode autodiff,
//! convolution layers and Adam. Generic over `f32` (training) and `f64`
//! (gradient checking).

mod adam;
mod graph;
mod kernels;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Grads, Graph, Var};
pub use layers::{Bound, Conv2d, ParamId, ParamStore};
pub use tensor::{Real, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for weight init and sampling.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Collects the gradient of every bound parameter, in store order.
pub fn param_grads<T: Real>(grads: &mut Grads<T>, bound: &Bound) -> Vec<Option<Tensor<T>>> {
    bound.vars().iter().map(|&v| grads.take(v)).collect()
}
