//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations are recorded on a [`Graph`] tape with eagerly cached forward
//! values. [`Graph::backward`] walks the tape in reverse and builds each
//! adjoint *as new tape nodes*, so with `retain_higher_order` set the returned
//! gradients are themselves differentiable — a second backward pass through
//! them yields exact second-order gradients (gradients of gradients), which
//! the meta-update needs. Without the flag the adjoint nodes are evaluated and
//! then dropped from the tape, so repeated first-order backward calls do not
//! grow the graph.
//!
//! The model-facing primitive set is closed: matmul, add, multiply, subtract,
//! scale (by constant), tanh, relu, mean over an axis, embedding gather,
//! softmax cross-entropy, and sum. Any model is a composition of these.
//! Non-finite values are rejected at node creation, never propagated.

mod backward;
mod graph;
mod oracle;
mod tensor;

pub use graph::{Graph, NodeId, Op};
pub use oracle::{finite_difference, max_relative_error, relative_error};
pub use tensor::Tensor;

use std::collections::BTreeMap;

/// Errors from graph construction, evaluation and differentiation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: operand shapes {lhs:?} and {rhs:?} do not conform")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: operand shape {shape:?} rejected: {expected}")]
    InvalidOperand {
        op: &'static str,
        shape: Vec<usize>,
        expected: String,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node id {id} does not exist in this graph")]
    UnknownNode { id: usize },
    #[error("invalid tensor: {reason}")]
    InvalidTensor { reason: String },
    #[error("finite differences require epsilon > 0, got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("loss function returned a non-finite value at probe {probe}")]
    NonFiniteLoss { probe: usize },
}

/// Gradients of one scalar loss with respect to a set of parameter nodes.
///
/// Immutable once returned; entries are keyed by the parameter's node id.
/// When the backward pass ran with `retain_higher_order`, each entry also
/// carries the graph node holding that gradient, eligible as input to further
/// operations (including another backward pass).
#[derive(Debug, Clone)]
pub struct GradientMap {
    entries: BTreeMap<NodeId, (Tensor, Option<NodeId>)>,
}

impl GradientMap {
    pub(crate) fn new(entries: BTreeMap<NodeId, (Tensor, Option<NodeId>)>) -> Self {
        Self { entries }
    }

    /// Gradient value for parameter `id`, if it was requested.
    pub fn tensor(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.get(&id).map(|(t, _)| t)
    }

    /// Graph node holding the gradient for `id`; present only when the
    /// backward pass retained higher-order nodes.
    pub fn node(&self, id: NodeId) -> Option<NodeId> {
        self.entries.get(&id).and_then(|(_, n)| *n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending node-id order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.entries.iter().map(|(id, (t, _))| (*id, t))
    }
}
