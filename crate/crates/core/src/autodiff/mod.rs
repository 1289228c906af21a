//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every executed operation in creation order, which is
//! a topological order by construction. [`Graph::backward`] walks the record
//! once in reverse and returns a [`Gradients`] table that can be folded into
//! a [`Params`](crate::tensor::Params) store.

mod graph;
mod gradcheck;
mod ops;

pub use graph::{BnUpdate, Gradients, Graph, Var};
pub use gradcheck::{
    gradient_check, gradient_check_shapes, GradCheckConfig, GradCheckReport, InputDist,
};
