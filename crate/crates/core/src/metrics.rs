//! Correlation metrics and the VQEG logistic mapping.

use std::fmt;

use crate::error::MetricError;

pub type MetricResult<T> = std::result::Result<T, MetricError>;

fn check_pair(x: &[f64], y: &[f64], needed: usize) -> MetricResult<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < needed {
        return Err(MetricError::Insufficient { needed, got: x.len() });
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    doubled_ranks(x).into_iter().map(|r| r as f64 / 2.0).collect()
}

/// Twice the average rank, which is always an integer.
fn doubled_ranks(x: &[f64]) -> Vec<i128> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as i128;
        }
        i = j + 1;
    }
    ranks
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn pearson(x: &[f64], y: &[f64]) -> MetricResult<f64> {
    if is_constant(x) || is_constant(y) {
        return Err(MetricError::Undefined);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks, evaluated in integer arithmetic
/// so that the only rounding is the final division (and square root when
/// the two rank variances differ).
pub fn srocc(x: &[f64], y: &[f64]) -> MetricResult<f64> {
    check_pair(x, y, 3)?;
    let (a, b) = (doubled_ranks(x), doubled_ranks(y));
    let n = a.len() as i128;
    let (sa, sb): (i128, i128) = (a.iter().sum(), b.iter().sum());
    let sab: i128 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let saa: i128 = a.iter().map(|p| p * p).sum();
    let sbb: i128 = b.iter().map(|q| q * q).sum();
    let num = n * sab - sa * sb;
    let (dx, dy) = (n * saa - sa * sa, n * sbb - sb * sb);
    if dx == 0 || dy == 0 {
        return Err(MetricError::Undefined);
    }
    let r = if dx == dy {
        num as f64 / dx as f64
    } else {
        num as f64 / ((dx as f64) * (dy as f64)).sqrt()
    };
    Ok(r.clamp(-1.0, 1.0))
}

pub fn plcc(x: &[f64], y: &[f64]) -> MetricResult<f64> {
    check_pair(x, y, 3)?;
    pearson(x, y)
}

pub fn rmse(x: &[f64], y: &[f64]) -> MetricResult<f64> {
    check_pair(x, y, 1)?;
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / x.len() as f64).sqrt())
}

pub const VQEG_MAX_ITER: usize = 2000;
pub const VQEG_MIN_N: usize = 5;
pub const BETA4_FLOOR: f64 = 1e-6;

/// `(β1 − β2) / (1 + exp(−(x − β3) / |β4|)) + β2`.
pub fn logistic4(beta: &[f64; 4], x: f64) -> f64 {
    let s = beta[3].abs().max(BETA4_FLOOR);
    (beta[0] - beta[1]) / (1.0 + (-(x - beta[2]) / s).exp()) + beta[1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqegFit {
    pub mapped: Vec<f64>,
    pub beta: [f64; 4],
    pub iterations: usize,
    /// Sum of squared residuals of the returned mapping.
    pub residual: f64,
    /// True when the logistic fit did not beat a linear fit and the
    /// objective scores were passed through unchanged.
    pub fallback: bool,
}

fn nelder_mead<const D: usize>(f: impl Fn(&[f64; D]) -> f64, start: [f64; D], steps: [f64; D], max_iter: usize) -> ([f64; D], f64, usize) {
    let mut simplex: Vec<([f64; D], f64)> = Vec::with_capacity(D + 1);
    simplex.push((start, f(&start)));
    for i in 0..D {
        let mut p = start;
        p[i] += steps[i];
        simplex.push((p, f(&p)));
    }
    let mut iter = 0;
    while iter < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[D].1);
        if (worst - best).abs() <= 1e-15 * (best.abs() + 1e-300) && iter > 0 {
            break;
        }
        iter += 1;
        let mut centroid = [0.0; D];
        for (p, _) in &simplex[..D] {
            for k in 0..D {
                centroid[k] += p[k] / D as f64;
            }
        }
        let along = |t: f64| {
            let mut q = [0.0; D];
            for k in 0..D {
                q[k] = centroid[k] + t * (simplex[D].0[k] - centroid[k]);
            }
            q
        };
        let refl = along(-1.0);
        let fr = f(&refl);
        if fr < simplex[0].1 {
            let exp = along(-2.0);
            let fe = f(&exp);
            simplex[D] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[D - 1].1 {
            simplex[D] = (refl, fr);
        } else {
            let (con, fc) = if fr < simplex[D].1 {
                let c = along(-0.5);
                (c, f(&c))
            } else {
                let c = along(0.5);
                (c, f(&c))
            };
            if fc < fr.min(simplex[D].1) {
                simplex[D] = (con, fc);
            } else {
                let b = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    for k in 0..D {
                        s.0[k] = b[k] + 0.5 * (s.0[k] - b[k]);
                    }
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, iter)
}

fn linear_fit_sse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter().zip(y).map(|(a, b)| (b - (my + slope * (a - mx))).powi(2)).sum()
}

/// Least-squares fit of the 4-parameter logistic by simplex descent.
pub fn vqeg_map(objective: &[f64], subjective: &[f64]) -> MetricResult<VqegFit> {
    check_pair(objective, subjective, VQEG_MIN_N)?;
    let n = objective.len() as f64;
    let ymax = subjective.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ymin = subjective.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = objective.iter().sum::<f64>() / n;
    let sx = (objective.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt();
    let start = [ymax, ymin, mx, (sx / 4.0).max(BETA4_FLOOR)];
    let yr = (ymax - ymin).max(1e-3);
    let xs = sx.max(1e-3);
    let steps = [0.1 * yr, 0.1 * yr, 0.5 * xs, 0.25 * start[3].max(1e-3)];
    let sse = |b: &[f64; 4]| -> f64 {
        objective
            .iter()
            .zip(subjective)
            .map(|(&x, &y)| (logistic4(b, x) - y).powi(2))
            .sum()
    };
    let (mut beta, residual, iterations) = nelder_mead(sse, start, steps, VQEG_MAX_ITER);
    beta[3] = beta[3].abs().max(BETA4_FLOOR);
    let linear = linear_fit_sse(objective, subjective);
    if residual.is_finite() && residual < linear {
        Ok(VqegFit {
            mapped: objective.iter().map(|&x| logistic4(&beta, x)).collect(),
            beta,
            iterations,
            residual,
            fallback: false,
        })
    } else {
        let identity: f64 = objective.iter().zip(subjective).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(VqegFit {
            mapped: objective.to_vec(),
            beta,
            iterations,
            residual: identity,
            fallback: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    /// `None` when undefined (a constant vector).
    pub srocc: Option<f64>,
    pub plcc_raw: Option<f64>,
    pub plcc_mapped: Option<f64>,
    pub rmse_mapped: f64,
    pub beta: [f64; 4],
    pub iterations: usize,
    pub residual: f64,
    pub fallback: bool,
}

pub const REPORT_CSV_HEADER: &str = "n,srocc,plcc_raw,plcc_mapped,rmse_mapped,beta1,beta2,beta3,beta4,iterations,residual,fallback";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

fn defined(r: MetricResult<f64>) -> MetricResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::Undefined) => Ok(None),
        Err(e) => Err(e),
    }
}

impl EvalReport {
    pub fn compute(predictions: &[f64], labels: &[f64]) -> MetricResult<EvalReport> {
        check_pair(predictions, labels, VQEG_MIN_N)?;
        let fit = vqeg_map(predictions, labels)?;
        Ok(EvalReport {
            n: predictions.len(),
            srocc: defined(srocc(predictions, labels))?,
            plcc_raw: defined(plcc(predictions, labels))?,
            plcc_mapped: defined(plcc(&fit.mapped, labels))?,
            rmse_mapped: rmse(&fit.mapped, labels)?,
            beta: fit.beta,
            iterations: fit.iterations,
            residual: fit.residual,
            fallback: fit.fallback,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            opt(self.srocc),
            opt(self.plcc_raw),
            opt(self.plcc_mapped),
            self.rmse_mapped,
            self.beta[0],
            self.beta[1],
            self.beta[2],
            self.beta[3],
            self.iterations,
            self.residual,
            self.fallback
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "samples      {}", self.n)?;
        writeln!(f, "SROCC        {}", show(self.srocc))?;
        writeln!(f, "PLCC (raw)   {}", show(self.plcc_raw))?;
        writeln!(f, "PLCC (VQEG)  {}", show(self.plcc_mapped))?;
        writeln!(f, "RMSE (VQEG)  {:.4}", self.rmse_mapped)?;
        write!(
            f,
            "logistic     b=({:.4}, {:.4}, {:.4}, {:.4}) iterations={} residual={:.3e}{}",
            self.beta[0],
            self.beta[1],
            self.beta[2],
            self.beta[3],
            self.iterations,
            self.residual,
            if self.fallback { " (identity fallback)" } else { "" }
        )
    }
}
