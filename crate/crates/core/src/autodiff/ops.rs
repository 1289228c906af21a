//! Differentiable operations. Every operation writes a fresh output buffer;
//! nothing aliases.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, ParamId};

use super::graph::{BnUpdate, Graph, Node, Var};

/// Logits are clamped to this range before the logistic function.
pub const SIGMOID_LOGIT_CLAMP: f64 = 30.0;

pub(crate) enum Op<T> {
    Leaf {
        #[allow(dead_code)]
        param: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Square(Var),
    Ln(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    Concat(Vec<Var>),
    GradReverse(Var, T),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
        count: usize,
    },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    PairwiseSqDist(Var, Var),
    PairwiseDiff(Var),
}

impl<T: Scalar> Op<T> {
    pub fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | PairwiseSqDist(a, b) => vec![*a, *b],
            Affine(x, _) | Square(x) | Ln(x) | Exp(x) | Relu(x) | Sigmoid(x) | Clamp(x, _, _)
            | Sum(x) | Mean(x) | MeanRows(x) | Reshape(x) | GradReverse(x, _)
            | GlobalAvgPool(x) | PairwiseDiff(x) => vec![*x],
            SliceRows { x, .. } => vec![*x],
            Concat(xs) => xs.clone(),
            Linear { x, w, b } | Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            BatchNormTrain { x, gamma, beta, .. } | BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }

    /// Propagates `gout` (gradient of the root w.r.t. this node's output)
    /// into the gradient slots of the inputs that require gradient.
    pub fn backward(
        &self,
        nodes: &[Node<T>],
        node: &Node<T>,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        use Op::*;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.as_slice();
        match self {
            Leaf { .. } => {}
            Add(a, b) => {
                if needs(*a) {
                    acc(grads, *a, nodes, |g| add_into(g, gout));
                }
                if needs(*b) {
                    acc(grads, *b, nodes, |g| add_into(g, gout));
                }
            }
            Sub(a, b) => {
                if needs(*a) {
                    acc(grads, *a, nodes, |g| add_into(g, gout));
                }
                if needs(*b) {
                    acc(grads, *b, nodes, |g| g.iter_mut().zip(gout).for_each(|(g, &d)| *g -= d));
                }
            }
            Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b);
                    acc(grads, *a, nodes, |g| {
                        for ((g, &d), &y) in g.iter_mut().zip(gout).zip(bv) {
                            *g += d * y;
                        }
                    });
                }
                if needs(*b) {
                    let av = val(*a);
                    acc(grads, *b, nodes, |g| {
                        for ((g, &d), &x) in g.iter_mut().zip(gout).zip(av) {
                            *g += d * x;
                        }
                    });
                }
            }
            Affine(x, a) => acc(grads, *x, nodes, |g| {
                g.iter_mut().zip(gout).for_each(|(g, &d)| *g += *a * d)
            }),
            Square(x) => {
                let xv = val(*x);
                let two = T::of(2.0);
                acc(grads, *x, nodes, |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gout).zip(xv) {
                        *g += two * x * d;
                    }
                })
            }
            Ln(x) => {
                let xv = val(*x);
                acc(grads, *x, nodes, |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gout).zip(xv) {
                        *g += d / x;
                    }
                })
            }
            Exp(x) => {
                let yv = &node.value;
                acc(grads, *x, nodes, |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gout).zip(yv) {
                        *g += d * y;
                    }
                })
            }
            Relu(x) => {
                let xv = val(*x);
                acc(grads, *x, nodes, |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gout).zip(xv) {
                        if x > T::zero() {
                            *g += d;
                        }
                    }
                })
            }
            Sigmoid(x) => {
                let xv = val(*x);
                let yv = &node.value;
                let lim = T::of(SIGMOID_LOGIT_CLAMP);
                acc(grads, *x, nodes, |g| {
                    for (((g, &d), &x), &y) in g.iter_mut().zip(gout).zip(xv).zip(yv) {
                        if x.abs() <= lim {
                            *g += d * y * (T::one() - y);
                        }
                    }
                })
            }
            Clamp(x, lo, hi) => {
                let xv = val(*x);
                acc(grads, *x, nodes, |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gout).zip(xv) {
                        if x >= *lo && x <= *hi {
                            *g += d;
                        }
                    }
                })
            }
            Sum(x) => acc(grads, *x, nodes, |g| g.iter_mut().for_each(|g| *g += gout[0])),
            Mean(x) => {
                let n = T::of(nodes[x.0].value.len() as f64);
                acc(grads, *x, nodes, |g| g.iter_mut().for_each(|g| *g += gout[0] / n))
            }
            MeanRows(x) => {
                let shape = &nodes[x.0].shape;
                let rows = shape[0];
                let cols = nodes[x.0].value.len() / rows;
                let inv = T::one() / T::of(rows as f64);
                acc(grads, *x, nodes, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[r * cols + c] += gout[c] * inv;
                        }
                    }
                })
            }
            Reshape(x) => acc(grads, *x, nodes, |g| add_into(g, gout)),
            SliceRows { x, start } => {
                let shape = &nodes[x.0].shape;
                let row = numel(&shape[1..]);
                let off = start * row;
                acc(grads, *x, nodes, |g| add_into(&mut g[off..off + gout.len()], gout))
            }
            Concat(xs) => {
                let n = node.shape[0];
                let total_c = node.shape[1];
                let inner = numel(&node.shape[2..]);
                let mut c_off = 0;
                for &x in xs {
                    let c = nodes[x.0].shape[1];
                    if needs(x) {
                        acc(grads, x, nodes, |g| {
                            for s in 0..n {
                                let src = (s * total_c + c_off) * inner;
                                let dst = s * c * inner;
                                add_into(&mut g[dst..dst + c * inner], &gout[src..src + c * inner]);
                            }
                        });
                    }
                    c_off += c;
                }
            }
            GradReverse(x, lambda) => acc(grads, *x, nodes, |g| {
                g.iter_mut().zip(gout).for_each(|(g, &d)| *g -= *lambda * d)
            }),
            GlobalAvgPool(x) => {
                let s = &nodes[x.0].shape;
                let (nc, hw) = (s[0] * s[1], s[2] * s[3]);
                let inv = T::one() / T::of(hw as f64);
                acc(grads, *x, nodes, |g| {
                    for i in 0..nc {
                        let d = gout[i] * inv;
                        g[i * hw..(i + 1) * hw].iter_mut().for_each(|g| *g += d);
                    }
                })
            }
            Linear { x, w, b } => linear_backward(nodes, *x, *w, *b, gout, grads),
            Conv2d { x, w, b, stride, pad } => {
                conv2d_backward(nodes, *x, *w, *b, *stride, *pad, gout, grads)
            }
            BatchNormTrain { x, gamma, beta, xhat, inv_std, count, .. } => {
                let s = &nodes[x.0].shape;
                let (n, c, hw) = (s[0], s[1], numel(&s[2..]));
                let gam = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for k in base..base + hw {
                            dbeta[ci] += gout[k];
                            dgamma[ci] += gout[k] * xhat[k];
                        }
                    }
                }
                if needs(*x) {
                    let m = T::of(*count as f64);
                    acc(grads, *x, nodes, |g| {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                                let k1 = gam[ci] * dbeta[ci];
                                let k2 = gam[ci] * dgamma[ci];
                                let scale = inv_std[ci] / m;
                                for k in base..base + hw {
                                    let dxhat = gout[k] * gam[ci];
                                    g[k] += scale * (m * dxhat - k1 - xhat[k] * k2);
                                }
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    acc(grads, *gamma, nodes, |g| add_into(g, &dgamma));
                }
                if needs(*beta) {
                    acc(grads, *beta, nodes, |g| add_into(g, &dbeta));
                }
            }
            BatchNormEval { x, gamma, beta, xhat, inv_std } => {
                let s = &nodes[x.0].shape;
                let (n, c, hw) = (s[0], s[1], numel(&s[2..]));
                let gam = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for k in base..base + hw {
                            dbeta[ci] += gout[k];
                            dgamma[ci] += gout[k] * xhat[k];
                        }
                    }
                }
                if needs(*x) {
                    acc(grads, *x, nodes, |g| {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let k = gam[ci] * inv_std[ci];
                                for i in base..base + hw {
                                    g[i] += gout[i] * k;
                                }
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    acc(grads, *gamma, nodes, |g| add_into(g, &dgamma));
                }
                if needs(*beta) {
                    acc(grads, *beta, nodes, |g| add_into(g, &dbeta));
                }
            }
            PairwiseSqDist(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let f = nodes[a.0].shape[1];
                let (na, nb) = (nodes[a.0].shape[0], nodes[b.0].shape[0]);
                let two = T::of(2.0);
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for i in 0..na {
                    for j in 0..nb {
                        let d = two * gout[i * nb + j];
                        for k in 0..f {
                            let diff = d * (av[i * f + k] - bv[j * f + k]);
                            ga[i * f + k] += diff;
                            gb[j * f + k] -= diff;
                        }
                    }
                }
                if needs(*a) {
                    acc(grads, *a, nodes, |g| add_into(g, &ga));
                }
                if needs(*b) {
                    acc(grads, *b, nodes, |g| add_into(g, &gb));
                }
            }
            PairwiseDiff(x) => {
                let n = nodes[x.0].value.len();
                acc(grads, *x, nodes, |g| {
                    for i in 0..n {
                        for j in 0..n {
                            let d = gout[i * n + j];
                            g[i] += d;
                            g[j] -= d;
                        }
                    }
                })
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn acc<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    nodes: &[Node<T>],
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(slot);
}

fn linear_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    w: Var,
    b: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (n, inp) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
    let out = nodes[w.0].shape[0];
    if nodes[x.0].requires_grad {
        let wv = &nodes[w.0].value;
        acc(grads, x, nodes, |g| {
            T::gemm(n, out, inp, T::one(), gout, out as isize, 1, wv, inp as isize, 1, T::one(), g, inp as isize, 1)
        });
    }
    if nodes[w.0].requires_grad {
        let xv = &nodes[x.0].value;
        acc(grads, w, nodes, |g| {
            T::gemm(out, n, inp, T::one(), gout, 1, out as isize, xv, inp as isize, 1, T::one(), g, inp as isize, 1)
        });
    }
    if nodes[b.0].requires_grad {
        acc(grads, b, nodes, |g| {
            for r in 0..n {
                add_into(g, &gout[r * out..(r + 1) * out]);
            }
        });
    }
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds `x` into a `(C*kh*kw) x (N*Ho*Wo)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    let mut cols = vec![T::zero(); k * np];
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let out = &mut dst[n * p + oy * g.wo..n * p + (oy + 1) * g.wo];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto an NCHW buffer.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.p();
    let np = g.n * p;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let rowbase = base + iy as usize * g.w;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dx[rowbase + ix as usize] += src[n * p + oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    nodes: &[Node<T>],
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    pad: usize,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let geom = conv_geom(&nodes[x.0].shape, &nodes[w.0].shape, stride, pad).expect("validated in forward");
    let co = nodes[w.0].shape[0];
    let (k, p) = (geom.k(), geom.p());
    let np = geom.n * p;
    // (N, Co, P) -> (Co, N*P)
    let mut dmat = vec![T::zero(); co * np];
    for n in 0..geom.n {
        for c in 0..co {
            let src = &gout[(n * co + c) * p..(n * co + c + 1) * p];
            dmat[c * np + n * p..c * np + (n + 1) * p].copy_from_slice(src);
        }
    }
    if nodes[w.0].requires_grad {
        let cols = im2col(&nodes[x.0].value, &geom);
        acc(grads, w, nodes, |g| {
            T::gemm(co, np, k, T::one(), &dmat, np as isize, 1, &cols, 1, np as isize, T::one(), g, k as isize, 1)
        });
    }
    if nodes[b.0].requires_grad {
        acc(grads, b, nodes, |g| {
            for c in 0..co {
                let mut s = T::zero();
                for &d in &dmat[c * np..(c + 1) * np] {
                    s += d;
                }
                g[c] += s;
            }
        });
    }
    if nodes[x.0].requires_grad {
        let wv = &nodes[w.0].value;
        let mut dcols = vec![T::zero(); k * np];
        T::gemm(k, co, np, T::one(), wv, 1, k as isize, &dmat, np as isize, 1, T::zero(), &mut dcols, np as isize, 1);
        acc(grads, x, nodes, |g| col2im_add(&dcols, &geom, g));
    }
}

pub(crate) fn conv_geom(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(format!("conv2d expects NCHW input and OIHW kernel, got {xs:?} and {ws:?}")));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {} channels, kernel expects {}",
            xs[1], ws[1]
        )));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be positive"));
    }
    let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok(ConvGeom {
        n: xs[0],
        c: xs[1],
        h,
        w,
        kh,
        kw,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.map(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square(x), |v| v * v)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.map(x, Op::Ln(x), |v| v.ln())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), |v| v.exp())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Logistic function of logits clamped to `[-30, 30]`; the output lies
    /// strictly inside (0, 1) in 64-bit arithmetic.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let lim = T::of(SIGMOID_LOGIT_CLAMP);
        self.map(x, Op::Sigmoid(x), |v| {
            let z = v.max(-lim).min(lim);
            T::one() / (T::one() + (-z).exp())
        })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.map(x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        self.push(vec![1], vec![s], Op::Mean(x))
    }

    /// Column means of an `(N, F)` tensor, giving `(1, F)`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::shape(format!("mean_rows expects rank 2, got {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let v = self.value(x);
        let inv = T::one() / T::of(rows as f64);
        let mut out = vec![T::zero(); cols];
        for r in 0..rows {
            add_into(&mut out, &v[r * cols..(r + 1) * cols]);
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(vec![1, cols], out, Op::MeanRows(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape(x))));
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x)))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(Error::shape(format!("slice {start}..{} out of range for {shape:?}", start + len)));
        }
        let row = numel(&shape[1..]);
        let v = self.value(x)[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        Ok(self.push(out_shape, v, Op::SliceRows { x, start }))
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::shape("concat of nothing"))?)
            .to_vec();
        if first.len() < 2 {
            return Err(Error::shape("concat expects rank >= 2"));
        }
        let mut total_c = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape(format!(
                    "concat: non-channel dims differ, {:?} vs {first:?}",
                    s
                )));
            }
            total_c += s[1];
        }
        let n = first[0];
        let inner = numel(&first[2..]);
        let mut out = Vec::with_capacity(n * total_c * inner);
        for s in 0..n {
            for &x in xs {
                let c = self.shape(x)[1];
                out.extend_from_slice(&self.value(x)[s * c * inner..(s + 1) * c * inner]);
            }
        }
        let mut shape = first;
        shape[1] = total_c;
        Ok(self.push(shape, out, Op::Concat(xs.to_vec())))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: T) -> Var {
        let v = self.value(x).to_vec();
        let shape = self.shape(x).to_vec();
        self.push(shape, v, Op::GradReverse(x, lambda))
    }

    /// `(N, C, H, W) -> (N, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool expects NCHW, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::of(hw as f64);
        let out = self
            .value(x)
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(vec![s[0], s[1]], out, Op::GlobalAvgPool(x)))
    }

    /// Affine map `x W^T + b` with `x: (N, in)`, `W: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || numel(bs) != ws[0] {
            return Err(Error::shape(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(self.value(b));
        }
        T::gemm(n, inp, out, T::one(), self.value(x), inp as isize, 1, self.value(w), 1, inp as isize, T::one(), &mut y, out as isize, 1);
        Ok(self.push(vec![n, out], y, Op::Linear { x, w, b }))
    }

    /// 2-D cross-correlation (the kernel is not flipped) with symmetric zero
    /// padding. Output side is `floor((H + 2p - k) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv_geom(self.shape(x), self.shape(w), stride, pad)?;
        let co = self.shape(w)[0];
        if numel(self.shape(b)) != co {
            return Err(Error::shape(format!("conv2d bias {:?} for {co} outputs", self.shape(b))));
        }
        let (k, p) = (geom.k(), geom.p());
        let np = geom.n * p;
        let cols = im2col(self.value(x), &geom);
        let mut mat = vec![T::zero(); co * np];
        T::gemm(co, k, np, T::one(), self.value(w), k as isize, 1, &cols, np as isize, 1, T::zero(), &mut mat, np as isize, 1);
        let bias = self.value(b);
        let mut y = vec![T::zero(); geom.n * co * p];
        for n in 0..geom.n {
            for c in 0..co {
                let dst = &mut y[(n * co + c) * p..(n * co + c + 1) * p];
                let src = &mat[c * np + n * p..c * np + (n + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias[c];
                }
            }
        }
        Ok(self.push(vec![geom.n, co, geom.ho, geom.wo], y, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Training-mode batch normalization over every axis except 1.
    /// Records a running-statistics update when `running` is given.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        running: Option<(ParamId, ParamId)>,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || numel(self.shape(gamma)) != s[1] || numel(self.shape(beta)) != s[1] {
            return Err(Error::shape(format!("batchnorm: input {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], numel(&s[2..]));
        let count = n * hw;
        if count < 2 {
            return Err(Error::shape(format!(
                "batchnorm training needs at least 2 values per channel, got {count}"
            )));
        }
        let xv = self.value(x);
        let m = T::of(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for &v in &xv[base..base + hw] {
                    mean[ci] += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for &v in &xv[base..base + hw] {
                    let d = v - mean[ci];
                    var[ci] += d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    let h = (xv[k] - mean[ci]) * inv_std[ci];
                    xhat[k] = h;
                    y[k] = gv[ci] * h + bv[ci];
                }
            }
        }
        let node = self.push(
            s,
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count,
            },
        );
        if let Some((running_mean, running_var)) = running {
            self.record_bn_update(BnUpdate {
                running_mean,
                running_var,
                node,
            });
        }
        Ok(node)
    }

    /// Evaluation-mode batch normalization with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2
            || numel(self.shape(gamma)) != s[1]
            || numel(self.shape(beta)) != s[1]
            || mean.len() != s[1]
            || var.len() != s[1]
        {
            return Err(Error::shape(format!("batchnorm: input {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], numel(&s[2..]));
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for k in base..base + hw {
                    let h = (xv[k] - mean[ci]) * inv_std[ci];
                    xhat[k] = h;
                    y[k] = gv[ci] * h + bv[ci];
                }
            }
        }
        Ok(self.push(s, y, Op::BatchNormEval { x, gamma, beta, xhat, inv_std }))
    }

    /// Squared Euclidean distances between the rows of `a: (n, F)` and
    /// `b: (m, F)`, giving `(n, m)`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(format!("pairwise_sq_dist: {sa:?} vs {sb:?}")));
        }
        let f = sa[1];
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(sa[0] * sb[0]);
        for i in 0..sa[0] {
            for j in 0..sb[0] {
                let mut d = T::zero();
                for k in 0..f {
                    let t = av[i * f + k] - bv[j * f + k];
                    d += t * t;
                }
                out.push(d);
            }
        }
        Ok(self.push(vec![sa[0], sb[0]], out, Op::PairwiseSqDist(a, b)))
    }

    /// `out[i, j] = x[i] - x[j]` for a vector of `n` elements.
    pub fn pairwise_diff(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(v[i] - v[j]);
            }
        }
        self.push(vec![n, n], out, Op::PairwiseDiff(x))
    }
}
