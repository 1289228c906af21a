//! Training objectives built on the autodiff graph.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::srocc;
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-7;
pub const MMD_BANDWIDTH_FLOOR: f64 = 1e-12;
pub const T3_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdKernel {
    Rbf,
    Linear,
}

impl MmdKernel {
    pub fn as_str(self) -> &'static str {
        match self {
            MmdKernel::Rbf => "rbf",
            MmdKernel::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rbf" => Some(MmdKernel::Rbf),
            "linear" => Some(MmdKernel::Linear),
            _ => None,
        }
    }
}

/// Similarity index used by the flag. Only SROCC is supported: the flag's
/// inequality assumes higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    Srocc,
}

impl Similarity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "srocc" => Ok(Similarity::Srocc),
            "rmse" => Err(Error::Config("rmse is lower-is-better and cannot drive the flag; use srocc".into())),
            other => Err(Error::Config(format!("unknown similarity index `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        "srocc"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub epsilon: f64,
    pub similarity: Similarity,
    pub mmd_kernel: MmdKernel,
    pub delta: f64,
    pub t3_tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu1: 1.0,
            mu2: 1.0,
            epsilon: 0.1,
            similarity: Similarity::Srocc,
            mmd_kernel: MmdKernel::Rbf,
            delta: PROB_CLAMP,
            t3_tau: T3_TAU,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.mu1 >= 0.0) || !(self.mu2 >= 0.0) {
            return Err(Error::Config("mu1, mu2 and epsilon must be non-negative".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!("probability clamp {} outside (0, 0.5)", self.delta)));
        }
        if !(self.t3_tau > 0.0) {
            return Err(Error::Config("t3 temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Mean squared error against constant labels.
pub fn loss_regression<T: Scalar>(g: &mut Graph<T>, pred: Var, labels: &[T]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if labels.len() != g.value(pred).len() || labels.is_empty() {
        return Err(Error::shape(format!("{} labels for prediction of shape {shape:?}", labels.len())));
    }
    let y = g.constant(&shape, labels.to_vec())?;
    let diff = g.sub(pred, y)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// Batch flag: 1 iff the mapped path's SROCC beats the unmapped path's by
/// more than `epsilon`; undefined correlations give 0.
pub fn flag_d(mapped: &[f64], unmapped: &[f64], labels: &[f64], epsilon: f64) -> u8 {
    flag_from_similarity(srocc(mapped, labels).ok(), srocc(unmapped, labels).ok(), epsilon)
}

/// Flag from precomputed similarities; `None` marks an undefined value.
pub fn flag_from_similarity(mapped: Option<f64>, unmapped: Option<f64>, epsilon: f64) -> u8 {
    match (mapped, unmapped) {
        (Some(a), Some(b)) if a > b + epsilon => 1,
        _ => 0,
    }
}

/// Conditional cross-entropy: `−mean log|D_src − d| − mean log(1 − D_tgt)`
/// with probabilities clamped to `[δ, 1 − δ]`.
pub fn loss_ccel<T: Scalar>(g: &mut Graph<T>, d_src: Var, d_tgt: Var, d: u8, delta: f64) -> Result<Var> {
    if d > 1 {
        return Err(Error::Train(format!("flag must be 0 or 1, got {d}")));
    }
    let (lo, hi) = (T::of(delta), T::of(1.0 - delta));
    let ps = g.clamp(d_src, lo, hi);
    let src = if d == 0 { ps } else { g.affine(ps, -T::one(), T::one()) };
    let ls = g.ln(src);
    let ms = g.mean(ls);
    let pt = g.clamp(d_tgt, lo, hi);
    let qt = g.affine(pt, -T::one(), T::one());
    let lt = g.ln(qt);
    let mt = g.mean(lt);
    let total = g.add(ms, mt)?;
    Ok(g.scale(total, -T::one()))
}

/// Vanilla adversarial loss; the flag-free special case of [`loss_ccel`].
pub fn loss_adv<T: Scalar>(g: &mut Graph<T>, d_src: Var, d_tgt: Var, delta: f64) -> Result<Var> {
    loss_ccel(g, d_src, d_tgt, 0, delta)
}

/// Half the median squared distance over all distinct pairs of the union
/// batch, floored.
pub fn rbf_bandwidth(union: &[f64], rows: usize, cols: usize) -> f64 {
    let mut d = Vec::with_capacity(rows * (rows.saturating_sub(1)) / 2);
    for i in 0..rows {
        for j in i + 1..rows {
            let s: f64 = (0..cols).map(|k| (union[i * cols + k] - union[j * cols + k]).powi(2)).sum();
            d.push(s);
        }
    }
    if d.is_empty() {
        return MMD_BANDWIDTH_FLOOR;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    (median / 2.0).max(MMD_BANDWIDTH_FLOOR)
}

/// Biased (V-statistic) squared MMD with the bandwidth held constant.
pub fn loss_mmd_with_bandwidth<T: Scalar>(g: &mut Graph<T>, src: Var, tgt: Var, kernel: MmdKernel, sigma2: f64) -> Result<Var> {
    match kernel {
        MmdKernel::Linear => {
            let ms = g.mean_rows(src)?;
            let mt = g.mean_rows(tgt)?;
            let diff = g.sub(ms, mt)?;
            let sq = g.square(diff);
            Ok(g.sum(sq))
        }
        MmdKernel::Rbf => {
            let k = T::of(-1.0 / (2.0 * sigma2));
            let mut term = |a: Var, b: Var| -> Result<Var> {
                let d = g.pairwise_sq_dist(a, b)?;
                let z = g.scale(d, k);
                let e = g.exp(z);
                Ok(g.mean(e))
            };
            let kss = term(src, src)?;
            let ktt = term(tgt, tgt)?;
            let kst = term(src, tgt)?;
            let same = g.add(kss, ktt)?;
            let cross = g.scale(kst, T::of(2.0));
            g.sub(same, cross)
        }
    }
}

pub fn loss_mmd<T: Scalar>(g: &mut Graph<T>, src: Var, tgt: Var, kernel: MmdKernel) -> Result<Var> {
    let (ss, st) = (g.shape(src).to_vec(), g.shape(tgt).to_vec());
    if ss.len() != 2 || st.len() != 2 || ss[1] != st[1] {
        return Err(Error::shape(format!("mmd features {ss:?} vs {st:?}")));
    }
    let sigma2 = if kernel == MmdKernel::Rbf {
        if ss[0] < 2 || st[0] < 2 {
            return Err(Error::shape("rbf bandwidth needs at least two samples per domain"));
        }
        let union: Vec<f64> = g.value(src).iter().chain(g.value(tgt)).map(|v| v.as_f64()).collect();
        rbf_bandwidth(&union, ss[0] + st[0], ss[1])
    } else {
        0.0
    };
    loss_mmd_with_bandwidth(g, src, tgt, kernel, sigma2)
}

/// `μ1 · L_da + μ2 · L_R`.
pub fn loss_all<T: Scalar>(g: &mut Graph<T>, l_da: Var, l_r: Var, mu1: f64, mu2: f64) -> Result<Var> {
    let a = g.scale(l_da, T::of(mu1));
    let b = g.scale(l_r, T::of(mu2));
    g.add(a, b)
}

/// Pairwise soft discordance: mean over label-distinct pairs of
/// `sigmoid(−(p_i − p_j) · sign(y_i − y_j) / τ)`. Tied-label pairs are
/// excluded; with no usable pair the term is a constant zero.
pub fn loss_t3_surrogate<T: Scalar>(g: &mut Graph<T>, pred: Var, labels: &[f64], tau: f64) -> Result<Var> {
    let n = labels.len();
    if g.value(pred).len() != n || n < 3 {
        return Err(Error::shape(format!("rank surrogate needs ≥3 matched samples, got {n}")));
    }
    let mut w = vec![T::zero(); n * n];
    let mut mask = vec![T::zero(); n * n];
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let s = (labels[i] - labels[j]).signum();
            if labels[i] != labels[j] {
                w[i * n + j] = T::of(-s / tau);
                mask[i * n + j] = T::one();
                count += 1;
            }
        }
    }
    if count == 0 {
        return g.constant(&[1], vec![T::zero()]);
    }
    let flat = g.reshape(pred, &[n])?;
    let diff = g.pairwise_diff(flat);
    let wv = g.constant(&[n, n], w)?;
    let z = g.mul(diff, wv)?;
    let s = g.sigmoid(z);
    let mv = g.constant(&[n, n], mask)?;
    let masked = g.mul(s, mv)?;
    let total = g.sum(masked);
    Ok(g.scale(total, T::of(1.0 / count as f64)))
}
