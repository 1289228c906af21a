use itpcqa::autodiff::{Graph, Var};
use itpcqa::tensor::{Params, Tensor};
use itpcqa::Error;
use proptest::prelude::*;

fn leaf(params: &mut Params<f64>, name: &str, shape: &[usize], data: &[f64]) -> itpcqa::tensor::ParamId {
    params.insert(name, Tensor::from_f64(shape, data).unwrap().with_grad(true))
}

#[test]
fn squared_weight_gradient() {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[1], &[3.0]);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let sq = g.mul(wv, wv).unwrap();
    let root = g.sum(sq);
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.param(w).unwrap(), &[6.0]);
}

#[test]
fn sum_of_ones_gradient_is_ones() {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[2, 2], &[1.0; 4]);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let root = g.sum(wv);
    assert_eq!(g.backward(root).unwrap().param(w).unwrap(), &[1.0; 4]);
}

#[test]
fn mean_squared_error_gradient() {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[2], &[1.0, 2.0]);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let t = g.input(&Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
    let d = g.sub(wv, t).unwrap();
    let sq = g.square(d);
    let root = g.mean(sq);
    assert_eq!(g.backward(root).unwrap().param(w).unwrap(), &[1.0, 2.0]);
}

#[test]
fn second_backward_is_rejected() {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[1], &[1.0]);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let root = g.sum(wv);
    g.backward(root).unwrap();
    assert!(matches!(g.backward(root), Err(Error::GraphConsumed)));
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[2, 3], &[0.5; 6]);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let err = g.backward(wv).unwrap_err();
    assert!(matches!(err, Error::NonScalarRoot(ref s) if s == &vec![2, 3]), "{err}");
}

fn grad_of(data: &[f64], build: impl Fn(&mut Graph<f64>, Var) -> Var) -> Vec<f64> {
    let mut p = Params::new();
    let w = leaf(&mut p, "w", &[data.len()], data);
    let mut g = Graph::new();
    let wv = g.param(&p, w);
    let root = build(&mut g, wv);
    g.backward(root).unwrap().param(w).unwrap().to_vec()
}

proptest! {
    #[test]
    fn gradients_from_every_path_are_summed(w in prop::collection::vec(-4.0f64..4.0, 1..12)) {
        // root = sum(w*w) + sum(3w) + sum(w); each path contributes once
        let got = grad_of(&w, |g, v| {
            let a = g.mul(v, v).unwrap();
            let b = g.affine(v, 3.0, 0.0);
            let sa = g.sum(a);
            let sb = g.sum(b);
            let sc = g.sum(v);
            let ab = g.add(sa, sb).unwrap();
            g.add(ab, sc).unwrap()
        });
        for (gi, wi) in got.iter().zip(&w) {
            prop_assert!((gi - (2.0 * wi + 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_subgraphs_add(w in prop::collection::vec(-2.0f64..2.0, 2..10)) {
        let first = |g: &mut Graph<f64>, v: Var| {
            let e = g.exp(v);
            g.sum(e)
        };
        let second = |g: &mut Graph<f64>, v: Var| {
            let s = g.sigmoid(v);
            let sq = g.square(s);
            g.mean(sq)
        };
        let a = grad_of(&w, first);
        let b = grad_of(&w, second);
        let both = grad_of(&w, |g, v| {
            let x = first(g, v);
            let y = second(g, v);
            g.add(x, y).unwrap()
        });
        for i in 0..w.len() {
            prop_assert!((both[i] - (a[i] + b[i])).abs() <= 1e-12 * (1.0 + both[i].abs()));
        }
    }

    #[test]
    fn reversal_flips_and_scales(w in prop::collection::vec(-2.0f64..2.0, 1..8), lambda in 0.0f64..3.0) {
        let plain = grad_of(&w, |g, v| {
            let s = g.square(v);
            g.sum(s)
        });
        let reversed = grad_of(&w, |g, v| {
            let r = g.grad_reverse(v, lambda);
            let s = g.square(r);
            g.sum(s)
        });
        for (p, r) in plain.iter().zip(&reversed) {
            prop_assert!((r + lambda * p).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(x in prop::collection::vec(-3.0f64..3.0, 8)) {
        let run = || {
            let mut p = Params::new();
            let w = leaf(&mut p, "w", &[2, 4], &x);
            let b = leaf(&mut p, "b", &[2], &[0.1, -0.2]);
            let mut g = Graph::new();
            let inp = g.input(&Tensor::from_f64(&[3, 4], &[0.5, -1.0, 2.0, 0.25, 1.0, 1.0, -0.5, 0.0, 3.0, -2.0, 0.1, 0.7]).unwrap());
            let (wv, bv) = (g.param(&p, w), g.param(&p, b));
            let y = g.linear(inp, wv, bv).unwrap();
            let r = g.relu(y);
            let root = g.mean(r);
            let out = g.scalar_value(root);
            let grads = g.backward(root).unwrap();
            (out.to_bits(), grads.param(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
