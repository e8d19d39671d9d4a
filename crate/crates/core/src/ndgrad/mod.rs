//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every training step. Nodes are appended in
//! evaluation order, so insertion order is a topological order and the graph
//! is acyclic by construction. [`Graph::backward`] walks the nodes once in
//! reverse and returns a [`Gradients`] table; the graph itself is left intact
//! and may be differentiated again from another root.

mod graph;
mod tensor;

pub use graph::{soft_clamp, soft_clamp_grad, Gradients, Graph, Var};
pub use tensor::Tensor;
