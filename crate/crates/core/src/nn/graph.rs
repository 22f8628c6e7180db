//! Tape-based reverse-mode autodiff.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels;
use super::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Rc<Tensor<T>>),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, T, T),
    AvgPool2(Var),
    Upsample(Var, usize),
    Concat(Vec<Var>),
    InstanceNorm(Var, Rc<Vec<T>>),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// A computation recorded for one forward/backward pass.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is wanted without being a parameter (inputs in gradient checks).
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let t = (*self.value(v)).clone();
        self.constant(t)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, self.needs(a))
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise op on mismatched shapes");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(va.shape(), data), op, needs)
    }

    pub fn conv(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = {
            let (vx, vw) = (self.value(x), self.value(w));
            let vb = b.map(|b| self.value(b));
            kernels::conv2d_forward(&vx, &vw, vb.as_deref(), stride, pad)
        };
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(out, Op::Conv { x, w, b, stride, pad }, needs)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&self, a: Var, c: Rc<Tensor<T>>) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), c.shape(), "mul_const on mismatched shapes");
        let data = va.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        self.push(Tensor::new(va.shape(), data), Op::MulConst(a, c), self.needs(a))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Clamp to `[lo, hi]`; gradient is passed only strictly inside the range.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn avg_pool2(&self, a: Var) -> Var {
        let out = kernels::avg_pool2_forward(&self.value(a));
        self.push(out, Op::AvgPool2(a), self.needs(a))
    }

    /// Bilinear upsampling by an integer factor.
    pub fn upsample(&self, a: Var, factor: usize) -> Var {
        if factor == 1 {
            return a;
        }
        let out = kernels::upsample_forward(&self.value(a), factor);
        self.push(out, Op::Upsample(a, factor), self.needs(a))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let [n, _, h, w] = values[0].shape();
        let mut c_total = 0;
        for v in &values {
            let [vn, vc, vh, vw] = v.shape();
            assert_eq!((vn, vh, vw), (n, h, w), "concat on mismatched shapes");
            c_total += vc;
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for ni in 0..n {
            for v in &values {
                let per = v.shape()[1] * h * w;
                data.extend_from_slice(&v.data()[ni * per..(ni + 1) * per]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new([n, c_total, h, w], data), Op::Concat(parts.to_vec()), needs)
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance.
    pub fn instance_norm(&self, a: Var, eps: T) -> Var {
        let va = self.value(a);
        let [n, c, h, w] = va.shape();
        let plane = h * w;
        let count = T::lit(plane as f64);
        let mut out = Tensor::zeros(va.shape());
        let mut inv_stds = Vec::with_capacity(n * c);
        for (src, dst) in va.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_stds.push(inv);
        }
        self.push(out, Op::InstanceNorm(a, Rc::new(inv_stds)), self.needs(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.needs(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().copied().sum::<T>() / T::lit(va.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), self.needs(a))
    }

    /// Sum over C, H, W; result has shape `[N, 1, 1, 1]`.
    pub fn sum_per_sample(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.shape()[0];
        let per = va.numel() / n;
        let data = va.data().chunks_exact(per).map(|c| c.iter().copied().sum()).collect();
        self.push(Tensor::new([n, 1, 1, 1], data), Op::SumPerSample(a), self.needs(a))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |v: Var| Rc::clone(&nodes[v.0].value);
            let wants = |v: Var| nodes[v.0].needs_grad;
            let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, stride, pad } => {
                    let need = (wants(*x), wants(*w), b.is_some_and(&wants));
                    let r = kernels::conv2d_backward(&val(*x), &val(*w), &g, *stride, *pad, need);
                    if let Some(t) = r.x {
                        acc(*x, t);
                    }
                    if let Some(t) = r.w {
                        acc(*w, t);
                    }
                    if let (Some(b), Some(t)) = (b, r.b) {
                        acc(*b, t);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        acc(*a, g.clone());
                    }
                    if wants(*b) {
                        acc(*b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*b) {
                        acc(*b, g.map(|x| -x));
                    }
                    if wants(*a) {
                        acc(*a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, zip(&g, &val(*b), |g, y| g * y));
                    }
                    if wants(*b) {
                        acc(*b, zip(&g, &val(*a), |g, x| g * x));
                    }
                }
                Op::Div(a, b) => {
                    let vb = val(*b);
                    if wants(*a) {
                        acc(*a, zip(&g, &vb, |g, y| g / y));
                    }
                    if wants(*b) {
                        // d(a/b)/db = -out / b
                        let t = zip(&zip(&g, &node.value, |g, o| -g * o), &vb, |t, y| t / y);
                        acc(*b, t);
                    }
                }
                Op::MulConst(a, c) => acc(*a, zip(&g, c, |g, y| g * y)),
                Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => acc(*a, zip(&g, &val(*a), |g, x| if x > T::zero() { g } else { T::zero() })),
                Op::LeakyRelu(a, s) => acc(*a, zip(&g, &val(*a), |g, x| if x > T::zero() { g } else { g * *s })),
                Op::Sigmoid(a) => acc(*a, zip(&g, &node.value, |g, y| g * y * (T::one() - y))),
                Op::Tanh(a) => acc(*a, zip(&g, &node.value, |g, y| g * (T::one() - y * y))),
                Op::Abs(a) => acc(*a, zip(&g, &val(*a), |g, x| g * x.signum_or_zero())),
                Op::Square(a) => acc(*a, zip(&g, &val(*a), |g, x| g * x * T::lit(2.0))),
                Op::Clamp(a, lo, hi) => {
                    acc(*a, zip(&g, &val(*a), |g, x| if x > *lo && x < *hi { g } else { T::zero() }))
                }
                Op::AvgPool2(a) => acc(*a, kernels::avg_pool2_backward(val(*a).shape(), &g)),
                Op::Upsample(a, f) => acc(*a, kernels::upsample_backward(val(*a).shape(), &g, *f)),
                Op::Concat(parts) => {
                    let [n, c_total, h, w] = g.shape();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).shape()[1];
                        if wants(p) {
                            let mut data = Vec::with_capacity(n * pc * h * w);
                            for ni in 0..n {
                                let start = (ni * c_total + offset) * h * w;
                                data.extend_from_slice(&g.data()[start..start + pc * h * w]);
                            }
                            acc(p, Tensor::new([n, pc, h, w], data));
                        }
                        offset += pc;
                    }
                }
                Op::InstanceNorm(a, inv_stds) => {
                    let y = &node.value;
                    let [_, _, h, w] = y.shape();
                    let plane = h * w;
                    let count = T::lit(plane as f64);
                    let mut gx = Tensor::zeros(y.shape());
                    let planes = g.data().chunks_exact(plane).zip(y.data().chunks_exact(plane));
                    for (((gp, yp), dst), &inv) in
                        planes.zip(gx.data_mut().chunks_exact_mut(plane)).zip(inv_stds.iter())
                    {
                        let mg = gp.iter().copied().sum::<T>() / count;
                        let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / count;
                        for ((d, &gv), &yv) in dst.iter_mut().zip(gp).zip(yp) {
                            *d = inv * (gv - mg - yv * mgy);
                        }
                    }
                    acc(*a, gx);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    acc(*a, Tensor::full(val(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let va = val(*a);
                    let s = g.item() / T::lit(va.numel() as f64);
                    acc(*a, Tensor::full(va.shape(), s));
                }
                Op::SumPerSample(a) => {
                    let shape = val(*a).shape();
                    let per = shape[1] * shape[2] * shape[3];
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, per)).collect();
                    acc(*a, Tensor::new(shape, data));
                }
            }
        }
        Grads { grads }
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Real> SignumOrZero for T {
    fn signum_or_zero(self) -> Self {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut s = seed;
        Tensor::new(
            shape,
            (0..n)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) as f64 / (1u64 << 31) as f64) * 2.0 - 1.0
                })
                .collect(),
        )
    }

    /// Central finite differences against the analytic gradient of every input.
    fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&Graph<f64>, &[Var]) -> Var) {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.input(t)).collect();
        let loss = f(&g, &vars);
        let grads = g.backward(loss);
        let eval = |ins: &[Tensor<f64>]| {
            let g = Graph::new();
            let vars: Vec<Var> = ins.iter().cloned().map(|t| g.input(t)).collect();
            g.value(f(&g, &vars)).item()
        };
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for i in 0..t.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = analytic.data()[i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(err < 1e-4, "input {k} element {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            check(vec![tensor([2, 2, 5, 6], 1), tensor([3, 2, 3, 3], 2), tensor([1, 3, 1, 1], 3)], |g, v| {
                let y = g.conv(v[0], v[1], Some(v[2]), stride, pad);
                let y = g.square(y);
                g.mean(y)
            });
        }
    }

    #[test]
    fn elementwise_gradients() {
        let shape = [2, 2, 3, 4];
        check(vec![tensor(shape, 4), tensor(shape, 5)], |g, v| {
            let a = g.tanh(v[0]);
            let b = g.sigmoid(v[1]);
            let m = g.mul(a, b);
            let d = g.div(m, g.add_scalar(g.square(v[1]), 1.5));
            let s = g.sub(d, g.leaky_relu(v[0], 0.2));
            let s = g.add(s, g.scale(g.abs(v[1]), 0.3));
            g.sum(s)
        });
    }

    #[test]
    fn structural_gradients() {
        check(vec![tensor([2, 2, 4, 4], 6), tensor([2, 1, 4, 4], 7)], |g, v| {
            let c = g.concat(&[v[0], v[1]]);
            let n = g.instance_norm(c, 1e-5);
            let p = g.avg_pool2(n);
            let u = g.upsample(p, 2);
            let u = g.mul(u, c);
            let s = g.sum_per_sample(u);
            let s = g.square(s);
            g.mean(s)
        });
    }

    #[test]
    fn detached_values_get_no_gradient() {
        let g = Graph::new();
        let a = g.input(Tensor::full([1, 1, 2, 2], 2.0f64));
        let d = g.detach(a);
        let y = g.mul(a, d);
        let grads = g.backward(g.sum(y));
        assert!(grads.get(d).is_none());
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 2.0));
    }
}
