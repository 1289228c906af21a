//! The standard gradient-check battery: every graph operation, every loss,
//! and the full pipeline objective, all in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradient_check, gradient_check_shapes, GradCheckConfig, GradCheckReport, Graph, InputDist, Var};
use crate::error::Result;
use crate::losses::{loss_adv, loss_all, loss_ccel, loss_mmd_with_bandwidth, loss_regression, loss_t3_surrogate, MmdKernel, PROB_CLAMP, T3_TAU};
use crate::models::{ModelConfig, Networks, MIN_INPUT};
use crate::nn::{Mode, BN_EPS};
use crate::tensor::Tensor;

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const PIPELINE_TOLERANCE: f64 = 1e-4;
/// Sampled elements per parameter tensor in the pipeline checks.
pub const PIPELINE_CHECKS_PER_TENSOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckGroup {
    Layer,
    Loss,
    Pipeline,
}

impl CheckGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckGroup::Layer => "layer",
            CheckGroup::Loss => "loss",
            CheckGroup::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub group: CheckGroup,
    pub report: GradCheckReport,
}

const U: InputDist = InputDist::Uniform { lo: -1.0, hi: 1.0 };
const AWAY: InputDist = InputDist::AwayFromZero { margin: 1e-3, hi: 1.0 };
const POS: InputDist = InputDist::Uniform { lo: 0.5, hi: 2.0 };
const PROB: InputDist = InputDist::Uniform { lo: 0.05, hi: 0.95 };

type ShapeCheck<'a> = (&'a str, CheckGroup, Vec<(&'a str, Vec<usize>, InputDist)>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn shape_checks() -> Vec<ShapeCheck<'static>> {
    use CheckGroup::{Layer, Loss};
    let labels4 = [0.1, 0.7, 0.4, 0.9];
    vec![
        ("add", Layer, vec![("a", vec![2, 3], U), ("b", vec![2, 3], U)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", Layer, vec![("a", vec![2, 3], U), ("b", vec![2, 3], U)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", Layer, vec![("a", vec![2, 3], U), ("b", vec![2, 3], U)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("affine", Layer, vec![("x", vec![5], U)], Box::new(|g, v| Ok(g.affine(v[0], -1.5, 0.25)))),
        ("square", Layer, vec![("x", vec![5], U)], Box::new(|g, v| Ok(g.square(v[0])))),
        ("ln", Layer, vec![("x", vec![5], POS)], Box::new(|g, v| Ok(g.ln(v[0])))),
        ("exp", Layer, vec![("x", vec![5], U)], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("relu", Layer, vec![("x", vec![3, 4], AWAY)], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("sigmoid", Layer, vec![("x", vec![6], U)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("clamp", Layer, vec![("x", vec![6], U)], Box::new(|g, v| Ok(g.clamp(v[0], -2.0, 2.0)))),
        ("sum", Layer, vec![("x", vec![2, 3], U)], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean", Layer, vec![("x", vec![2, 3], U)], Box::new(|g, v| Ok(g.mean(v[0])))),
        ("mean_rows", Layer, vec![("x", vec![4, 3], U)], Box::new(|g, v| g.mean_rows(v[0]))),
        ("reshape", Layer, vec![("x", vec![2, 6], U)], Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        ("slice_rows", Layer, vec![("x", vec![5, 3], U)], Box::new(|g, v| g.slice_rows(v[0], 1, 3))),
        ("concat", Layer, vec![("a", vec![2, 3], U), ("b", vec![2, 4], U)], Box::new(|g, v| g.concat(&[v[0], v[1]]))),
        // reversal is not a true derivative; two reversals with reciprocal
        // strengths compose to the identity
        (
            "grad_reverse",
            Layer,
            vec![("x", vec![4], U)],
            Box::new(|g, v| {
                let r = g.grad_reverse(v[0], 0.75);
                Ok(g.grad_reverse(r, 1.0 / 0.75))
            }),
        ),
        ("global_avg_pool", Layer, vec![("x", vec![2, 3, 4, 4], U)], Box::new(|g, v| g.global_avg_pool(v[0]))),
        ("linear", Layer, vec![("x", vec![4, 5], U), ("w", vec![3, 5], U), ("b", vec![3], U)], Box::new(|g, v| g.linear(v[0], v[1], v[2]))),
        (
            "conv2d",
            Layer,
            vec![("x", vec![1, 2, 8, 8], U), ("w", vec![3, 2, 3, 3], U), ("b", vec![3], U)],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
        ),
        (
            "conv2d_stride2",
            Layer,
            vec![("x", vec![2, 2, 7, 7], U), ("w", vec![2, 2, 3, 3], U), ("b", vec![2], U)],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
        ),
        (
            "batchnorm_train",
            Layer,
            vec![("x", vec![4, 3, 4, 4], U), ("gamma", vec![3], U), ("beta", vec![3], U)],
            Box::new(|g, v| g.batchnorm_train(v[0], v[1], v[2], BN_EPS, None)),
        ),
        (
            "batchnorm_eval",
            Layer,
            vec![("x", vec![2, 3, 2, 2], U), ("gamma", vec![3], U), ("beta", vec![3], U)],
            Box::new(|g, v| g.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], BN_EPS)),
        ),
        ("pairwise_sq_dist", Layer, vec![("a", vec![3, 4], U), ("b", vec![2, 4], U)], Box::new(|g, v| g.pairwise_sq_dist(v[0], v[1]))),
        ("pairwise_diff", Layer, vec![("x", vec![4], U)], Box::new(|g, v| Ok(g.pairwise_diff(v[0])))),
        ("loss_regression", Loss, vec![("pred", vec![4, 1], U)], Box::new(move |g, v| loss_regression(g, v[0], &labels4))),
        ("loss_ccel_d0", Loss, vec![("ds", vec![3, 1], PROB), ("dt", vec![3, 1], PROB)], Box::new(|g, v| loss_ccel(g, v[0], v[1], 0, PROB_CLAMP))),
        ("loss_ccel_d1", Loss, vec![("ds", vec![3, 1], PROB), ("dt", vec![3, 1], PROB)], Box::new(|g, v| loss_ccel(g, v[0], v[1], 1, PROB_CLAMP))),
        ("loss_adv", Loss, vec![("ds", vec![3, 1], PROB), ("dt", vec![3, 1], PROB)], Box::new(|g, v| loss_adv(g, v[0], v[1], PROB_CLAMP))),
        (
            "loss_mmd_rbf",
            Loss,
            vec![("s", vec![4, 3], U), ("t", vec![3, 3], U)],
            Box::new(|g, v| loss_mmd_with_bandwidth(g, v[0], v[1], MmdKernel::Rbf, 0.8)),
        ),
        (
            "loss_mmd_linear",
            Loss,
            vec![("s", vec![4, 3], U), ("t", vec![3, 3], U)],
            Box::new(|g, v| loss_mmd_with_bandwidth(g, v[0], v[1], MmdKernel::Linear, 1.0)),
        ),
        ("loss_t3_surrogate", Loss, vec![("pred", vec![4, 1], U)], Box::new(move |g, v| loss_t3_surrogate(g, v[0], &labels4, T3_TAU))),
        (
            "loss_all",
            Loss,
            vec![("l_da", vec![1], POS), ("l_r", vec![1], POS)],
            Box::new(|g, v| {
                let a = g.reshape(v[0], &[])?;
                let b = g.reshape(v[1], &[])?;
                loss_all(g, a, b, 0.7, 1.3)
            }),
        ),
    ]
}

/// Conv biases feeding batch normalization have an identically zero
/// gradient, so a relative comparison measures only rounding noise.
fn freeze_pre_bn_biases(nets: &mut Networks<f64>) {
    let ids: Vec<_> = nets.encoder.blocks.iter().map(|b| b.conv.bias).collect();
    for id in ids {
        let t = nets.params.get(id).clone().with_grad(false);
        *nets.params.get_mut(id) = t;
    }
}

/// Largest analytic gradient magnitude over the pre-BN conv biases.
pub fn pre_bn_bias_gradient(seed: u64) -> Result<f64> {
    let nets = Networks::<f64>::new(ModelConfig::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = MIN_INPUT;
    let x = Tensor::new(vec![4, 3, s, s], (0..4 * 3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let mut g = Graph::new();
    let xv = g.input(&x);
    let pv = nets.forward_both(&mut g, xv, Mode::Train)?;
    let l = loss_regression(&mut g, pv.scores, &[0.1, 0.4, 0.6, 0.9])?;
    let grads = g.backward(l)?;
    let mut worst = 0.0f64;
    for b in &nets.encoder.blocks {
        if let Some(gr) = grads.param(b.conv.bias) {
            worst = gr.iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    Ok(worst)
}

/// Pipeline objectives: `(name, use adversarial branch, flag d, use MMD)`.
const PIPELINES: [(&str, bool, u8, bool); 4] = [
    ("pipeline_r_only", false, 0, false),
    ("pipeline_all_d0", true, 0, false),
    ("pipeline_all_d1", true, 1, false),
    ("pipeline_t1_mmd", false, 0, true),
];

fn pipeline_checks(seed: u64) -> Result<Vec<SuiteEntry>> {
    let b = 2;
    let s = MIN_INPUT;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let x = Tensor::new(vec![2 * b, 3, s, s], (0..2 * b * 3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let labels: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut out = Vec::new();
    for (name, adversarial, d, mmd) in PIPELINES {
        let mut nets = Networks::<f64>::new(ModelConfig::default(), seed);
        freeze_pre_bn_biases(&mut nets);
        let cfg = GradCheckConfig {
            tolerance: PIPELINE_TOLERANCE,
            max_checks_per_input: Some(PIPELINE_CHECKS_PER_TENSOR),
            seed,
            ..Default::default()
        };
        let (enc, map, disc, reg) = (&nets.encoder, &nets.mapper, &nets.discriminator, &nets.regressor);
        let report = gradient_check(
            name,
            &mut nets.params,
            |g, p| {
                let xv = g.input(&x);
                let gf = enc.forward(g, p, xv, Mode::Train)?;
                let mf = map.forward(g, p, gf)?;
                let scores = reg.forward(g, p, mf)?;
                let ss = g.slice_rows(scores, 0, b)?;
                let l_r = loss_regression(g, ss, &labels)?;
                if adversarial {
                    // negative strength makes the reversal an identity, so
                    // the analytic result is the true derivative
                    let rev = g.grad_reverse(mf, -1.0);
                    let logit = disc.forward(g, p, rev)?;
                    let prob = g.sigmoid(logit);
                    let ds = g.slice_rows(prob, 0, b)?;
                    let dt = g.slice_rows(prob, b, b)?;
                    let ccel = loss_ccel(g, ds, dt, d, PROB_CLAMP)?;
                    loss_all(g, ccel, l_r, 1.0, 1.0)
                } else if mmd {
                    let fs = g.slice_rows(gf, 0, b)?;
                    let ft = g.slice_rows(gf, b, b)?;
                    let m = loss_mmd_with_bandwidth(g, fs, ft, MmdKernel::Rbf, 1.0)?;
                    loss_all(g, m, l_r, 1.0, 1.0)
                } else {
                    Ok(l_r)
                }
            },
            &cfg,
        )?;
        out.push(SuiteEntry {
            group: CheckGroup::Pipeline,
            report,
        });
    }
    Ok(out)
}

/// Runs the whole battery with inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let cfg = GradCheckConfig {
        tolerance: LAYER_TOLERANCE,
        seed,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (name, group, inputs, f) in shape_checks() {
        let inputs: Vec<(&str, &[usize], InputDist)> = inputs.iter().map(|(n, s, d)| (*n, s.as_slice(), *d)).collect();
        let report = gradient_check_shapes(name, &inputs, |g, v| f(g, v), &cfg)?;
        out.push(SuiteEntry { group, report });
    }
    out.extend(pipeline_checks(seed)?);
    Ok(out)
}
