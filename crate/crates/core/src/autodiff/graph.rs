use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, ParamId, Params, Tensor};

use super::ops::Op;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Pending running-statistics update emitted by a training-mode batchnorm.
#[derive(Debug, Clone, Copy)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub node: Var,
}

/// Ordered record of executed differentiable operations.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
    inference: bool,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            bn_updates: Vec::new(),
            inference: false,
            consumed: false,
        }
    }

    /// A graph in which no leaf requires gradient; used for frozen forward
    /// passes and for the no-grad evaluations of the training loop.
    pub fn inference() -> Self {
        Graph {
            inference: true,
            ..Self::new()
        }
    }

    pub fn is_inference(&self) -> bool {
        self.inference
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = !self.inference && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, t: &Tensor<T>, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf { param },
            requires_grad: !self.inference && t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf holding a copy of `t`. Gradient flows to it only if
    /// `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t, None)
    }

    /// Leaf that never requires gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "constant of shape {shape:?} with {} values",
                data.len()
            )));
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: data,
            op: Op::Leaf { param: None },
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf bound to a parameter. Repeated calls for the same id within one
    /// graph return the same node.
    pub fn param(&mut self, params: &Params<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push_leaf(params.get(id), Some(id));
        self.param_leaves.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub(crate) fn record_bn_update(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    /// Applies the running-statistics updates recorded by training-mode
    /// batchnorm nodes: `running = (1 - momentum) * running + momentum * batch`,
    /// with the unbiased batch variance.
    pub fn apply_bn_updates(&self, params: &mut Params<T>, momentum: T) {
        for u in &self.bn_updates {
            let Op::BatchNormTrain { batch_mean, batch_var, count, .. } = &self.nodes[u.node.0].op else {
                continue;
            };
            let m = T::of(*count as f64);
            let unbias = if *count > 1 { m / (m - T::one()) } else { T::one() };
            let keep = T::one() - momentum;
            let rm = params.get_mut(u.running_mean).data_mut();
            for (r, &b) in rm.iter_mut().zip(batch_mean) {
                *r = keep * *r + momentum * b;
            }
            let rv = params.get_mut(u.running_var).data_mut();
            for (r, &b) in rv.iter_mut().zip(batch_var) {
                *r = keep * *r + momentum * b * unbias;
            }
        }
    }

    /// Activity pattern of every non-smooth operation (ReLU sign, clamp and
    /// sigmoid saturation ranges). Two evaluations with equal patterns lie on
    /// the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => bits.extend(self.nodes[x.0].value.iter().map(|&v| v > T::zero())),
                Op::Clamp(x, lo, hi) => bits.extend(
                    self.nodes[x.0].value.iter().map(|&v| v >= *lo && v <= *hi),
                ),
                Op::Sigmoid(x) => {
                    let lim = T::of(super::ops::SIGMOID_LOGIT_CLAMP);
                    bits.extend(self.nodes[x.0].value.iter().map(|&v| v.abs() <= lim))
                }
                _ => {}
            }
        }
        bits
    }

    /// Reverse pass from a one-element root. The graph is consumed: a second
    /// call fails with [`Error::GraphConsumed`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root_shape = &self.nodes[root.0].shape;
        if numel(root_shape) != 1 {
            return Err(Error::NonScalarRoot(root_shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf { .. } = node.op {
                grads[i] = Some(gout);
                continue;
            }
            node.op.backward(&self.nodes, node, &gout, &mut grads);
        }
        let mut param_grads: Vec<(ParamId, Var)> = self
            .param_leaves
            .iter()
            .map(|(&p, &v)| (p, v))
            .collect();
        param_grads.sort();
        Ok(Gradients {
            grads,
            param_leaves: param_grads,
        })
    }
}

/// Output of [`Graph::backward`]: gradients of the root with respect to
/// every leaf that requires gradient.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_leaves: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_leaves
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Adds every parameter gradient into its tensor's `grad` buffer.
    pub fn accumulate_into(&self, params: &mut Params<T>) {
        for &(id, v) in &self.param_leaves {
            if let Some(g) = self.get(v) {
                params.get_mut(id).accumulate_grad(g);
            }
        }
    }
}
