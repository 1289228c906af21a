//! Central finite-difference verification of analytic gradients (64-bit).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{numel, ParamId, Params, Tensor};

use super::graph::{Graph, Var};

/// Distribution of randomized gradient-check inputs.
#[derive(Debug, Clone, Copy)]
pub enum InputDist {
    Uniform { lo: f64, hi: f64 },
    /// Uniform magnitude in `[margin, hi]` with a random sign; keeps inputs
    /// away from the kinks of ReLU and |x|.
    AwayFromZero { margin: f64, hi: f64 },
}

impl InputDist {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            InputDist::Uniform { lo, hi } => rng.random_range(lo..hi),
            InputDist::AwayFromZero { margin, hi } => {
                let m = rng.random_range(margin..hi);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step relative to the input scale
    /// `max(1, max |x|)` of each tensor.
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on checked elements per tensor; `None` checks all.
    pub max_checks_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-5,
            max_checks_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Max relative error per checked input tensor.
    pub per_input: Vec<(String, f64)>,
    pub checked: usize,
    /// Elements whose perturbation crossed a non-smooth point at every
    /// attempted step size.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_input.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance && self.checked > 0
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Evaluation {
    value: f64,
    kinks: Vec<bool>,
}

fn evaluate<F>(f: &F, params: &Params<f64>, proj: &mut Option<Vec<f64>>, seed: u64) -> Result<(Graph<f64>, Var)>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let n = g.value(out).len();
    if n == 1 {
        return Ok((g, out));
    }
    let weights = proj.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e57);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    });
    let shape = g.shape(out).to_vec();
    let r = g.constant(&shape, weights.clone())?;
    let prod = g.mul(out, r)?;
    let root = g.sum(prod);
    Ok((g, root))
}

fn probe<F>(f: &F, params: &Params<f64>, proj: &mut Option<Vec<f64>>, seed: u64) -> Result<Evaluation>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let (g, root) = evaluate(f, params, proj, seed)?;
    Ok(Evaluation {
        value: g.scalar_value(root),
        kinks: g.kink_pattern(),
    })
}

/// Compares the analytic gradient of `f` with respect to every trainable
/// tensor in `params` against central finite differences. Non-scalar outputs
/// are reduced with a fixed random projection.
pub fn gradient_check<F>(
    name: &str,
    params: &mut Params<f64>,
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let mut proj = None;
    let (mut g, root) = evaluate(&f, params, &mut proj, cfg.seed)?;
    let base_kinks = g.kink_pattern();
    let grads = g.backward(root)?;
    let ids: Vec<ParamId> = params.ids().filter(|&id| params.get(id).requires_grad()).collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            grads
                .param(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; params.get(id).len()])
        })
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        per_input: Vec::new(),
        checked: 0,
        skipped: 0,
        tolerance: cfg.tolerance,
    };
    for (slot, &id) in ids.iter().enumerate() {
        let len = params.get(id).len();
        let indices: Vec<usize> = match cfg.max_checks_per_input {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let scale = params
            .get(id)
            .data()
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for &i in &indices {
            let orig = params.get(id).data()[i];
            let mut numeric = None;
            let mut h = cfg.step * scale;
            for _ in 0..3 {
                params.get_mut(id).data_mut()[i] = orig + h;
                let plus = probe(&f, params, &mut proj, cfg.seed)?;
                params.get_mut(id).data_mut()[i] = orig - h;
                let minus = probe(&f, params, &mut proj, cfg.seed)?;
                params.get_mut(id).data_mut()[i] = orig;
                if plus.kinks == base_kinks && minus.kinks == base_kinks {
                    numeric = Some((plus.value - minus.value) / (2.0 * h));
                    break;
                }
                h *= 0.1;
            }
            match numeric {
                Some(n) => {
                    worst = worst.max(relative_error(analytic[slot][i], n));
                    report.checked += 1;
                }
                None => report.skipped += 1,
            }
        }
        report.per_input.push((params.name(id).to_string(), worst));
    }
    Ok(report)
}

/// Gradient check of an operation on freshly randomized inputs of the given
/// shapes. The closure receives one [`Var`] per input, in order.
pub fn gradient_check_shapes<F>(
    name: &str,
    inputs: &[(&str, &[usize], InputDist)],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut params = Params::new();
    let mut ids = Vec::new();
    for (n, shape, dist) in inputs {
        let data = (0..numel(shape)).map(|_| dist.draw(&mut rng)).collect();
        let t = Tensor::new(shape.to_vec(), data)?.with_grad(true);
        ids.push(params.insert(*n, t));
    }
    gradient_check(
        name,
        &mut params,
        |g, p| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(p, id)).collect();
            f(g, &vars)
        },
        cfg,
    )
}
