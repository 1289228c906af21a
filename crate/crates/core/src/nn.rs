//! Layer and optimizer primitives shared by the four networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Params, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Seed derived from `(seed, name, shape)` only, so initial values do not
/// depend on the order in which layers are constructed.
pub fn init_seed(seed: u64, name: &str, shape: &[usize]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    for &d in shape {
        h.update((d as u64).to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(
    seed: u64,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed(seed, name, shape));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape.to_vec(), data)
        .expect("valid shape")
        .with_grad(true)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut Params<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        seed: u64,
    ) -> Self {
        let wname = format!("{name}.weight");
        let shape = [out_c, in_c, k, k];
        let w = glorot_uniform(seed, &wname, &shape, in_c * k * k, out_c * k * k);
        let weight = params.insert(wname, w);
        let bias = params.insert(format!("{name}.bias"), Tensor::zeros(&[out_c]).with_grad(true));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(params: &mut Params<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: params.insert(format!("{name}.gamma"), Tensor::full(&[channels], T::one()).with_grad(true)),
            beta: params.insert(format!("{name}.beta"), Tensor::zeros(&[channels]).with_grad(true)),
            running_mean: params.insert(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: params.insert(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
        }
    }

    /// Training mode normalizes by batch statistics and records a running
    /// statistics update on the graph (see [`Graph::apply_bn_updates`]);
    /// evaluation mode uses the running statistics.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let eps = T::of(BN_EPS);
        match mode {
            Mode::Train => g.batchnorm_train(x, gamma, beta, eps, Some((self.running_mean, self.running_var))),
            Mode::Eval => g.batchnorm_eval(
                x,
                gamma,
                beta,
                p.get(self.running_mean).data(),
                p.get(self.running_var).data(),
                eps,
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(params: &mut Params<T>, name: &str, inp: usize, out: usize, seed: u64) -> Self {
        let wname = format!("{name}.weight");
        let w = glorot_uniform(seed, &wname, &[out, inp], inp, out);
        Linear {
            weight: params.insert(wname, w),
            bias: params.insert(format!("{name}.bias"), Tensor::zeros(&[out]).with_grad(true)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state: one first/second moment buffer per
/// trainable parameter, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<AdamMoments<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub name: String,
    pub id: ParamId,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, config: AdamConfig) -> Self {
        let moments = params
            .iter()
            .filter(|(_, _, t)| t.requires_grad())
            .map(|(id, name, t)| AdamMoments {
                name: name.to_string(),
                id,
                m: vec![T::zero(); t.len()],
                v: vec![T::zero(); t.len()],
            })
            .collect();
        Adam {
            config,
            step: 0,
            moments,
        }
    }

    /// One update of every trainable parameter. Gradients are left as they
    /// are; zeroing them is the caller's job.
    pub fn step(&mut self, params: &mut Params<T>) -> Result<()> {
        for mo in &self.moments {
            if params.get(mo.id).grad().is_none() {
                return Err(Error::MissingGradient(mo.name.clone()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let one = T::one();
        for mo in &mut self.moments {
            let tensor = params.get_mut(mo.id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let gi = grad[i];
                mo.m[i] = b1 * mo.m[i] + (one - b1) * gi;
                mo.v[i] = b2 * mo.v[i] + (one - b2) * gi * gi;
                let mhat = mo.m[i] / bc1;
                let vhat = mo.v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check_shapes, GradCheckConfig, InputDist};
    use rand::Rng;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    /// Six-loop reference cross-correlation.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * co * ho * wo];
        for ni in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b[o];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((ni * co + o) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x), g.input(w), g.input(b));
        let y = g.conv2d(xv, wv, bv, stride, pad)?;
        Ok(g.value(y).to_vec())
    }

    #[test]
    fn identity_kernel_conv() {
        let x = tensor(&[1, 2, 3, 3], &(0..18).map(f64::from).collect::<Vec<_>>());
        let w = tensor(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        let b = tensor(&[2], &[0.0, 0.0]);
        assert_eq!(run_conv(&x, &w, &b, 1, 0).unwrap(), x.data());
    }

    #[test]
    fn sum_filter_conv() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(run_conv(&x, &w, &b, 1, 0).unwrap(), vec![9.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(run_conv(&x, &w, &b, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_nested_loops_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let n = rng.random_range(1..3);
            let c = rng.random_range(1..4);
            let co = rng.random_range(1..4);
            let k = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..3);
            let h = rng.random_range(k.max(2)..9);
            let wd = rng.random_range(k.max(2)..9);
            let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize]| {
                let d: Vec<f64> = (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
                tensor(shape, &d)
            };
            let x = rand_t(&mut rng, &[n, c, h, wd]);
            let w = rand_t(&mut rng, &[co, c, k, k]);
            let b = rand_t(&mut rng, &[co]);
            let got = run_conv(&x, &w, &b, stride, pad).unwrap();
            let want = naive_conv(&x, &w, b.data(), stride, pad);
            assert_eq!(got.len(), want.len(), "case {case}");
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "case {case}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_stride2_pad1_against_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = tensor(&[1, 2, 5, 5], &d);
        let wd: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = tensor(&[1, 2, 3, 3], &wd);
        let b = tensor(&[1], &[0.25]);
        let got = run_conv(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(got.len(), 9);
        let want = naive_conv(&x, &w, b.data(), 2, 1);
        for (a, e) in got.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_constant_channel_is_zero() {
        let mut p = Params::<f64>::new();
        let bn = BatchNorm::new(&mut p, "bn", 2);
        let x = tensor(&[2, 2, 2, 2], &[3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0, 3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0]);
        let mut g = Graph::new();
        let xv = g.input(&x);
        let y = bn.forward(&mut g, &p, xv, Mode::Train).unwrap();
        assert!(g.value(y).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn batchnorm_eval_with_identity_stats_is_affine() {
        let mut p = Params::<f64>::new();
        let bn = BatchNorm::new(&mut p, "bn", 1);
        p.get_mut(bn.gamma).data_mut()[0] = 2.0;
        p.get_mut(bn.beta).data_mut()[0] = 1.0;
        let x = tensor(&[1, 1, 1, 3], &[-1.0, 0.5, 2.0]);
        let mut g = Graph::new();
        let xv = g.input(&x);
        let y = bn.forward(&mut g, &p, xv, Mode::Eval).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (got, &xi) in g.value(y).iter().zip(x.data()) {
            assert!((got - (2.0 * xi * scale + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_matches_scalar_formula_and_updates_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = Params::<f64>::new();
        let bn = BatchNorm::new(&mut p, "bn", 3);
        for i in 0..3 {
            p.get_mut(bn.gamma).data_mut()[i] = rng.random_range(0.5..2.0);
            p.get_mut(bn.beta).data_mut()[i] = rng.random_range(-1.0..1.0);
        }
        let d: Vec<f64> = (0..4 * 3 * 2 * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = tensor(&[4, 3, 2, 2], &d);
        let mut g = Graph::new();
        let xv = g.input(&x);
        let y = bn.forward(&mut g, &p, xv, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..4).map(move |k| (n, k)))
                .map(|(n, k)| d[(n * 3 + c) * 4 + k])
                .collect();
            let mu = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 16.0;
            let (ga, be) = (p.get(bn.gamma).data()[c], p.get(bn.beta).data()[c]);
            for n in 0..4 {
                for k in 0..4 {
                    let i = (n * 3 + c) * 4 + k;
                    let want = (d[i] - mu) / (var + BN_EPS).sqrt() * ga + be;
                    assert!((g.value(y)[i] - want).abs() < 1e-12);
                }
            }
            g.apply_bn_updates(&mut p, BN_MOMENTUM);
            let rm = p.get(bn.running_mean).data()[c];
            let rv = p.get(bn.running_var).data()[c];
            assert!((rm - 0.1 * mu).abs() < 1e-12);
            assert!((rv - (0.9 + 0.1 * var * 16.0 / 15.0)).abs() < 1e-12);
            // undo so the next channel sees a single update
            p.get_mut(bn.running_mean).data_mut().iter_mut().for_each(|v| *v = 0.0);
            p.get_mut(bn.running_var).data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        assert!(!p.get(bn.running_mean).requires_grad());
    }

    #[test]
    fn batchnorm_needs_two_values_per_channel() {
        let mut p = Params::<f64>::new();
        let bn = BatchNorm::new(&mut p, "bn", 2);
        let mut g = Graph::new();
        let xv = g.input(&Tensor::zeros(&[1, 2, 1, 1]));
        assert!(bn.forward(&mut g, &p, xv, Mode::Train).is_err());
        assert!(bn.forward(&mut g, &p, xv, Mode::Eval).is_ok());
    }

    fn check(name: &str, inputs: &[(&str, &[usize], InputDist)], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
        let cfg = GradCheckConfig::default();
        let rep = gradient_check_shapes(name, inputs, f, &cfg).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.skipped, 0, "{rep:?}");
    }

    const U: InputDist = InputDist::Uniform { lo: -1.0, hi: 1.0 };
    const AWAY: InputDist = InputDist::AwayFromZero { margin: 1e-3, hi: 1.0 };

    #[test]
    fn relu_gradient() {
        check("relu", &[("x", &[3, 3], AWAY)], |g, v| Ok(g.relu(v[0])));
    }

    #[test]
    fn conv_gradient() {
        check(
            "conv2d",
            &[("x", &[1, 2, 8, 8], U), ("w", &[3, 2, 3, 3], U), ("b", &[3], U)],
            |g, v| g.conv2d(v[0], v[1], v[2], 1, 1),
        );
        check(
            "conv2d_stride2",
            &[("x", &[2, 2, 7, 7], U), ("w", &[2, 2, 3, 3], U), ("b", &[2], U)],
            |g, v| g.conv2d(v[0], v[1], v[2], 2, 1),
        );
    }

    #[test]
    fn batchnorm_gradient() {
        check(
            "batchnorm",
            &[("x", &[4, 3, 4, 4], U), ("gamma", &[3], U), ("beta", &[3], U)],
            |g, v| g.batchnorm_train(v[0], v[1], v[2], 1e-5, None),
        );
    }

    #[test]
    fn linear_pool_concat_gradients() {
        check("linear", &[("x", &[4, 5], U), ("w", &[3, 5], U), ("b", &[3], U)], |g, v| {
            g.linear(v[0], v[1], v[2])
        });
        check("global_avg_pool", &[("x", &[2, 3, 4, 4], U)], |g, v| g.global_avg_pool(v[0]));
        check("concat", &[("a", &[2, 3], U), ("b", &[2, 4], U)], |g, v| g.concat(&[v[0], v[1]]));
        check("sigmoid", &[("x", &[6], U)], |g, v| Ok(g.sigmoid(v[0])));
    }

    #[test]
    fn elementary_primitives() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
        let img = g.input(&tensor(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.global_avg_pool(img).unwrap();
        assert_eq!(g.value(p), &[2.5]);
        let a = g.input(&Tensor::zeros(&[1, 64]));
        let b = g.input(&Tensor::zeros(&[1, 64]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[1, 128]);
        let bad = g.input(&Tensor::zeros(&[2, 64]));
        assert!(g.concat(&[a, bad]).is_err());
        let big = g.input(&tensor(&[2], &[1000.0, -1000.0]));
        let s = g.sigmoid(big);
        assert!(g.value(s).iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn grad_reverse_semantics() {
        for (lambda, want) in [(1.0, -1.0), (0.0, 0.0), (2.5, -2.5)] {
            let mut p = Params::<f64>::new();
            let id = p.insert("w", tensor(&[3], &[1.0, 2.0, 3.0]).with_grad(true));
            let mut g = Graph::new();
            let w = g.param(&p, id);
            let r = g.grad_reverse(w, lambda);
            assert_eq!(g.value(r), &[1.0, 2.0, 3.0]);
            let s = g.sum(r);
            g.backward(s).unwrap().accumulate_into(&mut p);
            assert_eq!(p.get(id).grad().unwrap(), &[want, want, want]);
        }
    }

    #[test]
    fn init_is_order_independent() {
        let mut a = Params::<f32>::new();
        let c1 = Conv2d::new(&mut a, "c1", 3, 8, 3, 1, 1, 42);
        let c2 = Conv2d::new(&mut a, "c2", 8, 8, 3, 1, 1, 42);
        let mut b = Params::<f32>::new();
        let d2 = Conv2d::new(&mut b, "c2", 8, 8, 3, 1, 1, 42);
        let d1 = Conv2d::new(&mut b, "c1", 3, 8, 3, 1, 1, 42);
        assert_eq!(a.get(c1.weight), b.get(d1.weight));
        assert_eq!(a.get(c2.weight), b.get(d2.weight));
        let limit = (6.0f32 / (27.0 + 72.0)).sqrt();
        assert!(a.get(c1.weight).data().iter().all(|v| v.abs() <= limit));
        assert!(a.get(c1.bias).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_descends_and_matches_scalar_rule() {
        let mut p = Params::<f64>::new();
        let id = p.insert("w", tensor(&[1], &[0.5]).with_grad(true));
        let mut opt = Adam::new(&p, AdamConfig::default());
        // grad of w^2 at each step
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            p.zero_grad();
            let gval = 2.0 * p.get(id).data()[0];
            p.get_mut(id).accumulate_grad(&[gval]);
            let before = p.get(id).data()[0];
            opt.step(&mut p).unwrap();
            assert!(p.get(id).data()[0] < before);
            let gs = 2.0 * w;
            m = 0.9 * m + 0.1 * gs;
            v = 0.999 * v + 0.001 * gs * gs;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 1e-4 * mh / (vh.sqrt() + 1e-8);
            assert!((p.get(id).data()[0] - w).abs() < 1e-12);
        }
        assert_eq!(opt.step, 3);
        assert!(p.get(id).grad().is_some(), "step must not clear gradients");
    }

    #[test]
    fn adam_rejects_missing_gradient() {
        let mut p = Params::<f32>::new();
        p.insert("w", Tensor::zeros(&[2]).with_grad(true));
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p), Err(Error::MissingGradient(n)) if n == "w"));
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = Params::<f32>::new();
            let c = Conv2d::new(&mut p, "c", 1, 2, 3, 1, 1, 9);
            let mut opt = Adam::new(&p, AdamConfig::default());
            for _ in 0..3 {
                p.zero_grad();
                let mut g = Graph::new();
                let x = g.input(&Tensor::full(&[1, 1, 4, 4], 0.5));
                let y = c.forward(&mut g, &p, x).unwrap();
                let s = g.square(y);
                let l = g.mean(s);
                g.backward(l).unwrap().accumulate_into(&mut p);
                opt.step(&mut p).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
