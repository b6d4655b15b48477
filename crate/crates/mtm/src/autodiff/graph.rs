//! Computation-graph tape: node records with eagerly cached forward values.

use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind of a graph node.
///
/// The model-facing primitive set is the eleven variants from `Matmul` through
/// `Sum` (plus `Input` leaves). The remaining variants are adjoint-support
/// operations emitted by the backward pass; they have forward kernels and
/// adjoints of their own so that gradient nodes stay differentiable.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Leaf holding a constant or parameter tensor.
    Input,
    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    Matmul,
    /// Elementwise sum of two same-shape tensors.
    Add,
    /// Elementwise (Hadamard) product.
    Multiply,
    /// Elementwise difference.
    Subtract,
    /// Multiply every element by a fixed finite constant.
    Scale { factor: f64 },
    Tanh,
    Relu,
    /// Mean along `axis`, keeping the axis with size 1.
    MeanAxis { axis: usize },
    /// Row lookup: input `[v,d]`, output `[ids.len(), d]`.
    Gather { ids: Vec<usize> },
    /// Mean softmax cross-entropy of logit rows against target classes.
    /// Input `[n,c]` (or `[c]` for a single row), output scalar `[1]`.
    SoftmaxCrossEntropy { targets: Vec<usize> },
    /// Sum of all elements, output scalar `[1]`.
    Sum,

    // -- adjoint-support kinds (emitted by backward) --
    /// `[m,n] -> [n,m]`.
    Transpose,
    /// Row-wise softmax, shape preserved.
    SoftmaxRows,
    /// Multiply a tensor by a single-element tensor (inputs: x, s).
    MulScalar,
    /// Sum along `axis`, keeping the axis with size 1.
    SumAxis { axis: usize },
    /// Broadcast a size-1 axis to `len` by repetition.
    RepeatAxis { axis: usize, len: usize },
    /// Row scatter-add: input `[n,d]` accumulated into `[rows,d]` at `ids`.
    ScatterAddRows { ids: Vec<usize>, rows: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Matmul => "matmul",
            Op::Add => "add",
            Op::Multiply => "multiply",
            Op::Subtract => "subtract",
            Op::Scale { .. } => "scale",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::MeanAxis { .. } => "mean-over-axis",
            Op::Gather { .. } => "embedding-gather",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::Sum => "sum",
            Op::Transpose => "transpose",
            Op::SoftmaxRows => "softmax-rows",
            Op::MulScalar => "mul-scalar",
            Op::SumAxis { .. } => "sum-over-axis",
            Op::RepeatAxis { .. } => "repeat-axis",
            Op::ScatterAddRows { .. } => "scatter-add-rows",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub needs_grad: bool,
}

/// Append-only tape of operations with cached forward values.
///
/// Single-writer: building and differentiating require `&mut`. Distinct
/// graphs are independent and may live on distinct threads.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn node(&self, id: NodeId) -> Result<&Node, AutodiffError> {
        self.nodes.get(id.0).ok_or(AutodiffError::UnknownNode { id: id.0 })
    }

    /// Shape of a node's cached value.
    pub fn shape_of(&self, id: NodeId) -> Result<&[usize], AutodiffError> {
        Ok(&self.node(id)?.shape)
    }

    /// Cached forward values of a node.
    pub fn values_of(&self, id: NodeId) -> Result<&[f64], AutodiffError> {
        Ok(&self.node(id)?.values)
    }

    /// Cached forward value as an owned tensor.
    pub fn tensor_of(&self, id: NodeId) -> Result<Tensor, AutodiffError> {
        let n = self.node(id)?;
        Tensor::new(n.shape.clone(), n.values.clone())
    }

    /// Leaf node that never receives a gradient (data, masks, selectors).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, false)
    }

    /// Leaf node eligible as a `wrt` target of [`Graph::backward`].
    pub fn parameter(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, t: Tensor, needs_grad: bool) -> NodeId {
        let shape = t.shape().to_vec();
        let values = t.into_values();
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Input,
            inputs: Vec::new(),
            shape,
            values,
            needs_grad,
        });
        id
    }

    // -- model-facing primitives ------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Matmul, vec![a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn multiply(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Multiply, vec![a, b])
    }

    pub fn subtract(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Subtract, vec![a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        if !factor.is_finite() {
            return Err(AutodiffError::InvalidTensor {
                reason: format!("scale factor {factor} is not finite"),
            });
        }
        self.push(Op::Scale { factor }, vec![a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Tanh, vec![a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Relu, vec![a])
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        self.push(Op::MeanAxis { axis }, vec![a])
    }

    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId, AutodiffError> {
        self.push(Op::Gather { ids }, vec![table])
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Vec<usize>,
    ) -> Result<NodeId, AutodiffError> {
        self.push(Op::SoftmaxCrossEntropy { targets }, vec![logits])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Sum, vec![a])
    }

    // -- adjoint-support operations ----------------------------------------

    pub(crate) fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Transpose, vec![a])
    }

    pub(crate) fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::SoftmaxRows, vec![a])
    }

    pub(crate) fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::MulScalar, vec![a, s])
    }

    pub(crate) fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        self.push(Op::SumAxis { axis }, vec![a])
    }

    pub(crate) fn repeat_axis(
        &mut self,
        a: NodeId,
        axis: usize,
        len: usize,
    ) -> Result<NodeId, AutodiffError> {
        self.push(Op::RepeatAxis { axis, len }, vec![a])
    }

    pub(crate) fn scatter_add_rows(
        &mut self,
        src: NodeId,
        ids: Vec<usize>,
        rows: usize,
    ) -> Result<NodeId, AutodiffError> {
        self.push(Op::ScatterAddRows { ids, rows }, vec![src])
    }

    // -- recording ----------------------------------------------------------

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId, AutodiffError> {
        for &i in &inputs {
            if i.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode { id: i.0 });
            }
        }
        let (shape, values) = self.eval(&op, &inputs)?;
        let id = NodeId(self.nodes.len());
        if let Some(_bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: id.0,
            });
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            values,
            needs_grad,
        });
        Ok(id)
    }

    fn binary_shapes(
        &self,
        op: &'static str,
        inputs: &[NodeId],
    ) -> Result<(&Node, &Node), AutodiffError> {
        let a = &self.nodes[inputs[0].0];
        let b = &self.nodes[inputs[1].0];
        if a.shape != b.shape {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        Ok((a, b))
    }

    fn eval(&self, op: &Op, inputs: &[NodeId]) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
        match op {
            Op::Input => unreachable!("leaves are pushed directly"),
            Op::Matmul => {
                let a = &self.nodes[inputs[0].0];
                let b = &self.nodes[inputs[1].0];
                if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "matmul",
                        lhs: a.shape.clone(),
                        rhs: b.shape.clone(),
                    });
                }
                let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = a.values[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        let brow = &b.values[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += a_ip * bv;
                        }
                    }
                }
                Ok((vec![m, n], out))
            }
            Op::Add => {
                let (a, b) = self.binary_shapes("add", inputs)?;
                let out = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
                Ok((a.shape.clone(), out))
            }
            Op::Multiply => {
                let (a, b) = self.binary_shapes("multiply", inputs)?;
                let out = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
                Ok((a.shape.clone(), out))
            }
            Op::Subtract => {
                let (a, b) = self.binary_shapes("subtract", inputs)?;
                let out = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
                Ok((a.shape.clone(), out))
            }
            Op::Scale { factor } => {
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().map(|x| x * factor).collect();
                Ok((a.shape.clone(), out))
            }
            Op::Tanh => {
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().map(|x| x.tanh()).collect();
                Ok((a.shape.clone(), out))
            }
            Op::Relu => {
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().map(|x| x.max(0.0)).collect();
                Ok((a.shape.clone(), out))
            }
            Op::MeanAxis { axis } => {
                let a = &self.nodes[inputs[0].0];
                let (shape, sums) = axis_sum(&a.shape, &a.values, *axis)?;
                let l = a.shape[*axis] as f64;
                Ok((shape, sums.into_iter().map(|s| s / l).collect()))
            }
            Op::SumAxis { axis } => {
                let a = &self.nodes[inputs[0].0];
                axis_sum(&a.shape, &a.values, *axis)
            }
            Op::RepeatAxis { axis, len } => {
                let a = &self.nodes[inputs[0].0];
                if *axis >= a.shape.len() || a.shape[*axis] != 1 {
                    return Err(AutodiffError::InvalidOperand {
                        op: "repeat-axis",
                        shape: a.shape.clone(),
                        expected: format!("axis {axis} must exist with size 1"),
                    });
                }
                if *len == 0 {
                    return Err(AutodiffError::InvalidOperand {
                        op: "repeat-axis",
                        shape: a.shape.clone(),
                        expected: "repeat length must be positive".into(),
                    });
                }
                let outer: usize = a.shape[..*axis].iter().product();
                let inner: usize = a.shape[*axis + 1..].iter().product();
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &a.values[o * inner..(o + 1) * inner];
                    for t in 0..*len {
                        let dst = &mut out[(o * len + t) * inner..(o * len + t + 1) * inner];
                        dst.copy_from_slice(src);
                    }
                }
                let mut shape = a.shape.clone();
                shape[*axis] = *len;
                Ok((shape, out))
            }
            Op::Gather { ids } => {
                let t = &self.nodes[inputs[0].0];
                if t.shape.len() != 2 {
                    return Err(AutodiffError::InvalidOperand {
                        op: "embedding-gather",
                        shape: t.shape.clone(),
                        expected: "rank-2 lookup table".into(),
                    });
                }
                if ids.is_empty() {
                    return Err(AutodiffError::InvalidOperand {
                        op: "embedding-gather",
                        shape: t.shape.clone(),
                        expected: "at least one row index".into(),
                    });
                }
                let (v, d) = (t.shape[0], t.shape[1]);
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    if id >= v {
                        return Err(AutodiffError::IndexOutOfBounds {
                            op: "embedding-gather",
                            index: id,
                            bound: v,
                        });
                    }
                    out.extend_from_slice(&t.values[id * d..(id + 1) * d]);
                }
                Ok((vec![ids.len(), d], out))
            }
            Op::ScatterAddRows { ids, rows } => {
                let s = &self.nodes[inputs[0].0];
                if s.shape.len() != 2 || s.shape[0] != ids.len() {
                    return Err(AutodiffError::InvalidOperand {
                        op: "scatter-add-rows",
                        shape: s.shape.clone(),
                        expected: format!("rank-2 with {} rows", ids.len()),
                    });
                }
                let d = s.shape[1];
                let mut out = vec![0.0; rows * d];
                for (r, &id) in ids.iter().enumerate() {
                    if id >= *rows {
                        return Err(AutodiffError::IndexOutOfBounds {
                            op: "scatter-add-rows",
                            index: id,
                            bound: *rows,
                        });
                    }
                    let src = &s.values[r * d..(r + 1) * d];
                    let dst = &mut out[id * d..(id + 1) * d];
                    for (o, &x) in dst.iter_mut().zip(src) {
                        *o += x;
                    }
                }
                Ok((vec![*rows, d], out))
            }
            Op::SoftmaxCrossEntropy { targets } => {
                let l = &self.nodes[inputs[0].0];
                let (n, c) = logit_rows("softmax-cross-entropy", &l.shape)?;
                if targets.len() != n {
                    return Err(AutodiffError::InvalidOperand {
                        op: "softmax-cross-entropy",
                        shape: l.shape.clone(),
                        expected: format!("{} targets for {n} rows", targets.len()),
                    });
                }
                let mut total = 0.0;
                for (row, &y) in targets.iter().enumerate() {
                    if y >= c {
                        return Err(AutodiffError::IndexOutOfBounds {
                            op: "softmax-cross-entropy",
                            index: y,
                            bound: c,
                        });
                    }
                    let logits = &l.values[row * c..(row + 1) * c];
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = logits.iter().map(|x| (x - max).exp()).sum();
                    total += max + sum_exp.ln() - logits[y];
                }
                Ok((vec![1], vec![total / n as f64]))
            }
            Op::Sum => {
                let a = &self.nodes[inputs[0].0];
                Ok((vec![1], vec![a.values.iter().sum()]))
            }
            Op::Transpose => {
                let a = &self.nodes[inputs[0].0];
                if a.shape.len() != 2 {
                    return Err(AutodiffError::InvalidOperand {
                        op: "transpose",
                        shape: a.shape.clone(),
                        expected: "rank-2 tensor".into(),
                    });
                }
                let (m, n) = (a.shape[0], a.shape[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = a.values[i * n + j];
                    }
                }
                Ok((vec![n, m], out))
            }
            Op::SoftmaxRows => {
                let a = &self.nodes[inputs[0].0];
                let (n, c) = logit_rows("softmax-rows", &a.shape)?;
                let mut out = vec![0.0; n * c];
                for row in 0..n {
                    let src = &a.values[row * c..(row + 1) * c];
                    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let dst = &mut out[row * c..(row + 1) * c];
                    let mut sum = 0.0;
                    for (o, &x) in dst.iter_mut().zip(src) {
                        *o = (x - max).exp();
                        sum += *o;
                    }
                    for o in dst.iter_mut() {
                        *o /= sum;
                    }
                }
                Ok((a.shape.clone(), out))
            }
            Op::MulScalar => {
                let a = &self.nodes[inputs[0].0];
                let s = &self.nodes[inputs[1].0];
                if s.values.len() != 1 {
                    return Err(AutodiffError::InvalidOperand {
                        op: "mul-scalar",
                        shape: s.shape.clone(),
                        expected: "single-element scalar tensor".into(),
                    });
                }
                let f = s.values[0];
                let out = a.values.iter().map(|x| x * f).collect();
                Ok((a.shape.clone(), out))
            }
        }
    }
}

/// Keep-axis sum used by both `MeanAxis` and `SumAxis`.
fn axis_sum(
    shape: &[usize],
    values: &[f64],
    axis: usize,
) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
    if axis >= shape.len() {
        return Err(AutodiffError::InvalidOperand {
            op: "mean-over-axis",
            shape: shape.to_vec(),
            expected: format!("axis {axis} to exist"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let l = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for t in 0..l {
            let src = &values[(o * l + t) * inner..(o * l + t + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, &x) in dst.iter_mut().zip(src) {
                *d += x;
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    Ok((out_shape, out))
}

/// Interpret a shape as logit rows: `[c]` is one row, `[n,c]` is `n` rows.
fn logit_rows(op: &'static str, shape: &[usize]) -> Result<(usize, usize), AutodiffError> {
    match shape.len() {
        1 => Ok((1, shape[0])),
        2 => Ok((shape[0], shape[1])),
        _ => Err(AutodiffError::InvalidOperand {
            op,
            shape: shape.to_vec(),
            expected: "rank-1 or rank-2 logits".into(),
        }),
    }
}
