//! Direct CPU kernels. Convolutions run row-by-row as axpy/dot over contiguous
//! output rows, which vectorizes well for the narrow channel counts used here.

use super::tensor::{Real, Tensor};

#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], wt: [usize; 4], stride: usize, pad: usize) -> Self {
        let [n, ci, h, w] = x;
        let [co, wci, kh, kw] = wt;
        assert_eq!(ci, wci, "conv input has {ci} channels, weight expects {wci}");
        assert_eq!(kh, kw, "square kernels only");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than padded input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Self { n, ci, h, w, co, k: kh, stride, pad, ho, wo }
    }

    fn hp(&self) -> usize {
        self.h + 2 * self.pad
    }

    fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }
}

fn pad_sample<T: Real>(g: &ConvGeom, x: &[T], padded: &mut [T]) {
    let (hp, wp) = (g.hp(), g.wp());
    for c in 0..g.ci {
        for y in 0..g.h {
            let src = &x[(c * g.h + y) * g.w..][..g.w];
            let dst = &mut padded[(c * hp + y + g.pad) * wp + g.pad..][..g.w];
            dst.copy_from_slice(src);
        }
    }
}

/// Source row for output row `yo` at tap (c, ky, kx): a slice for stride 1,
/// otherwise gathered into `scratch`.
#[inline]
fn tap_row<'a, T: Real>(
    g: &ConvGeom,
    padded: &'a [T],
    scratch: &'a mut [T],
    c: usize,
    yo: usize,
    ky: usize,
    kx: usize,
) -> &'a [T] {
    let row = &padded[(c * g.hp() + yo * g.stride + ky) * g.wp()..][..g.wp()];
    if g.stride == 1 {
        &row[kx..kx + g.wo]
    } else {
        for (x, s) in scratch.iter_mut().enumerate() {
            *s = row[kx + x * g.stride];
        }
        scratch
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
    let mut out = Tensor::zeros([g.n, g.co, g.ho, g.wo]);
    let mut padded = vec![T::zero(); g.ci * g.hp() * g.wp()];
    let mut scratch = vec![T::zero(); g.wo];
    let wd = w.data();
    let in_plane = g.ci * g.h * g.w;
    let out_plane = g.co * g.ho * g.wo;
    let kk = g.k * g.k;
    for ni in 0..g.n {
        pad_sample(&g, &x.data()[ni * in_plane..][..in_plane], &mut padded);
        let out_n = &mut out.data_mut()[ni * out_plane..][..out_plane];
        if let Some(b) = b {
            for (o, plane) in out_n.chunks_exact_mut(g.ho * g.wo).enumerate() {
                plane.fill(b.data()[o]);
            }
        }
        for yo in 0..g.ho {
            for c in 0..g.ci {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let src = tap_row(&g, &padded, &mut scratch, c, yo, ky, kx);
                        for o in 0..g.co {
                            let a = wd[(o * g.ci + c) * kk + ky * g.k + kx];
                            axpy(a, src, &mut out_n[(o * g.ho + yo) * g.wo..][..g.wo]);
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
    let (need_x, need_w, need_b) = need;
    let (hp, wp) = (g.hp(), g.wp());
    let kk = g.k * g.k;
    let in_plane = g.ci * g.h * g.w;
    let out_plane = g.co * g.ho * g.wo;
    let wd = w.data();
    let gd = gout.data();

    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut padded = vec![T::zero(); g.ci * hp * wp];
    let mut gpad = vec![T::zero(); if need_x { g.ci * hp * wp } else { 0 }];
    let mut scratch = vec![T::zero(); g.wo];
    let mut tmp = vec![T::zero(); g.wo];

    for ni in 0..g.n {
        let gout_n = &gd[ni * out_plane..][..out_plane];
        if let Some(gw) = gw.as_mut() {
            pad_sample(&g, &x.data()[ni * in_plane..][..in_plane], &mut padded);
            let gwd = gw.data_mut();
            for yo in 0..g.ho {
                for c in 0..g.ci {
                    for ky in 0..g.k {
                        for kx in 0..g.k {
                            let src = tap_row(&g, &padded, &mut scratch, c, yo, ky, kx);
                            for o in 0..g.co {
                                let grow = &gout_n[(o * g.ho + yo) * g.wo..][..g.wo];
                                gwd[(o * g.ci + c) * kk + ky * g.k + kx] += dot(grow, src);
                            }
                        }
                    }
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            gpad.fill(T::zero());
            for yo in 0..g.ho {
                for c in 0..g.ci {
                    for ky in 0..g.k {
                        for kx in 0..g.k {
                            tmp.fill(T::zero());
                            for o in 0..g.co {
                                let a = wd[(o * g.ci + c) * kk + ky * g.k + kx];
                                axpy(a, &gout_n[(o * g.ho + yo) * g.wo..][..g.wo], &mut tmp);
                            }
                            let row = &mut gpad[(c * hp + yo * g.stride + ky) * wp..][..wp];
                            if g.stride == 1 {
                                for (d, &t) in row[kx..kx + g.wo].iter_mut().zip(&tmp) {
                                    *d += t;
                                }
                            } else {
                                for (xo, &t) in tmp.iter().enumerate() {
                                    row[kx + xo * g.stride] += t;
                                }
                            }
                        }
                    }
                }
            }
            let gx_n = &mut gx.data_mut()[ni * in_plane..][..in_plane];
            for c in 0..g.ci {
                for y in 0..g.h {
                    let src = &gpad[(c * hp + y + g.pad) * wp + g.pad..][..g.w];
                    gx_n[(c * g.h + y) * g.w..][..g.w].copy_from_slice(src);
                }
            }
        }
    }
    let gb = need_b.then(|| {
        let mut gb = Tensor::zeros([1, g.co, 1, 1]);
        let plane = g.ho * g.wo;
        for ni in 0..g.n {
            for o in 0..g.co {
                let s: T = gd[ni * out_plane + o * plane..][..plane].iter().copied().sum();
                gb.data_mut()[o] += s;
            }
        }
        gb
    });
    ConvGrads { x: gx, w: gw, b: gb }
}

pub(crate) fn avg_pool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let q = T::lit(0.25);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        for y in 0..ho {
            for xo in 0..wo {
                let i = p * h * w + 2 * y * w + 2 * xo;
                od[(p * ho + y) * wo + xo] = (xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]) * q;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Real>(x_shape: [usize; 4], gout: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x_shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = Tensor::zeros(x_shape);
    let q = T::lit(0.25);
    let gd = gout.data();
    let gxd = gx.data_mut();
    for p in 0..n * c {
        for y in 0..ho {
            for xo in 0..wo {
                let g = gd[(p * ho + y) * wo + xo] * q;
                let i = p * h * w + 2 * y * w + 2 * xo;
                gxd[i] += g;
                gxd[i + 1] += g;
                gxd[i + w] += g;
                gxd[i + w + 1] += g;
            }
        }
    }
    gx
}

/// 1-D linear interpolation taps for upsampling by `factor` (half-pixel centers,
/// edge-clamped).
fn linear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h * factor, w * factor);
    let tx = linear_taps(w, factor);
    let ty = linear_taps(h, factor);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    let mut row = vec![T::zero(); wo];
    let mut rows: Vec<Vec<T>> = vec![vec![T::zero(); wo]; h];
    for p in 0..n * c {
        for (y, r) in rows.iter_mut().enumerate() {
            let src = &xd[(p * h + y) * w..][..w];
            for (v, &(i0, i1, f)) in r.iter_mut().zip(&tx) {
                let f = T::lit(f);
                *v = src[i0] + (src[i1] - src[i0]) * f;
            }
        }
        for (yo, &(i0, i1, f)) in ty.iter().enumerate() {
            let f = T::lit(f);
            for ((v, &a), &b) in row.iter_mut().zip(&rows[i0]).zip(&rows[i1]) {
                *v = a + (b - a) * f;
            }
            od[(p * ho + yo) * wo..][..wo].copy_from_slice(&row);
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(x_shape: [usize; 4], gout: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x_shape;
    let (ho, wo) = (h * factor, w * factor);
    let tx = linear_taps(w, factor);
    let ty = linear_taps(h, factor);
    let mut gx = Tensor::zeros(x_shape);
    let gd = gout.data();
    let gxd = gx.data_mut();
    let mut rows: Vec<Vec<T>> = vec![vec![T::zero(); wo]; h];
    for p in 0..n * c {
        rows.iter_mut().for_each(|r| r.fill(T::zero()));
        for (yo, &(i0, i1, f)) in ty.iter().enumerate() {
            let f = T::lit(f);
            let g = &gd[(p * ho + yo) * wo..][..wo];
            for (xo, &gv) in g.iter().enumerate() {
                rows[i0][xo] += gv * (T::one() - f);
                rows[i1][xo] += gv * f;
            }
        }
        for (y, r) in rows.iter().enumerate() {
            let dst = &mut gxd[(p * h + y) * w..][..w];
            for (xo, &(i0, i1, f)) in tx.iter().enumerate() {
                let f = T::lit(f);
                dst[i0] += r[xo] * (T::one() - f);
                dst[i1] += r[xo] * f;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
        let mut out = Tensor::zeros([g.n, g.co, g.ho, g.wo]);
        for n in 0..g.n {
            for o in 0..g.co {
                for yo in 0..g.ho {
                    for xo in 0..g.wo {
                        let mut s = 0.0;
                        for c in 0..g.ci {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let yi = (yo * stride + ky) as isize - pad as isize;
                                    let xi = (xo * stride + kx) as isize - pad as isize;
                                    if yi < 0 || xi < 0 || yi >= g.h as isize || xi >= g.w as isize {
                                        continue;
                                    }
                                    s += x.data()[((n * g.ci + c) * g.h + yi as usize) * g.w + xi as usize]
                                        * w.data()[((o * g.ci + c) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                        out.data_mut()[((n * g.co + o) * g.ho + yo) * g.wo + xo] = s;
                    }
                }
            }
        }
        out
    }

    fn seq(shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 7919 % 23) as f64 - 11.0) * scale).collect())
    }

    #[test]
    fn conv_matches_naive_reference() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 1, 4), (1, 3, 7)] {
            let x = seq([2, 3, 9, 10], 0.1);
            let w = seq([4, 3, k, k], 0.05);
            let got = conv2d_forward(&x, &w, None, stride, pad);
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = Tensor::<f64>::full([1, 2, 3, 5], 0.7);
        let y = upsample_forward(&x, 2);
        assert_eq!(y.shape(), [1, 2, 6, 10]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        // <up(x), g> == <x, up^T(g)>
        let x = seq([1, 2, 4, 3], 0.3);
        let g = seq([1, 2, 16, 12], 0.2);
        let ux = upsample_forward(&x, 4);
        let utg = upsample_backward(x.shape(), &g, 4);
        let lhs: f64 = ux.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(utg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..13).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), (0..13).map(|i| (i * i) as f64).sum::<f64>());
    }
}
