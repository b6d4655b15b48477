//! Reverse sweep: builds adjoints as tape nodes.

use std::collections::BTreeMap;

use super::graph::{Graph, NodeId, Op};
use super::{AutodiffError, GradientMap, Tensor};

impl Graph {
    /// Gradients of the scalar node `loss` with respect to each node in `wrt`.
    ///
    /// Adjoints are constructed as graph nodes. With `retain_higher_order`
    /// they stay on the tape and every returned gradient carries its node id,
    /// so a later backward pass can differentiate through them. Without the
    /// flag the adjoint nodes are dropped after their values are extracted
    /// and the graph is left exactly as it was.
    ///
    /// A `wrt` node that does not influence the loss gets an exactly-zero
    /// gradient. Requesting an id the graph never issued is an error, as is a
    /// non-scalar loss.
    pub fn backward(
        &mut self,
        loss: NodeId,
        wrt: &[NodeId],
        retain_higher_order: bool,
    ) -> Result<GradientMap, AutodiffError> {
        let checkpoint = self.nodes.len();
        match self.backward_inner(loss, wrt, retain_higher_order) {
            Ok(map) => {
                if !retain_higher_order {
                    self.nodes.truncate(checkpoint);
                }
                Ok(map)
            }
            Err(e) => {
                self.nodes.truncate(checkpoint);
                Err(e)
            }
        }
    }

    fn backward_inner(
        &mut self,
        loss: NodeId,
        wrt: &[NodeId],
        retain: bool,
    ) -> Result<GradientMap, AutodiffError> {
        let loss_node = self.node(loss)?;
        if loss_node.values.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: loss_node.shape.clone(),
            });
        }
        for &p in wrt {
            self.node(p)?;
        }

        // Adjoint of every node at index <= loss, as a node id; None means an
        // exactly-zero adjoint. Nodes recorded after `loss` cannot feed it.
        let mut adjoint: Vec<Option<NodeId>> = vec![None; loss.0 + 1];
        let seed_shape = self.nodes[loss.0].shape.clone();
        let seed = self.constant(Tensor::filled(seed_shape, 1.0)?);
        adjoint[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoint[idx] else { continue };
            if self.nodes[idx].inputs.is_empty() {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let inputs = self.nodes[idx].inputs.clone();
            self.emit_adjoints(NodeId(idx), &op, &inputs, g, &mut adjoint)?;
        }

        let mut entries = BTreeMap::new();
        for &p in wrt {
            let existing = adjoint.get(p.0).copied().flatten();
            let (tensor, node) = match existing {
                Some(gid) => (self.tensor_of(gid)?, Some(gid)),
                None => {
                    let z = Tensor::zeros(self.nodes[p.0].shape.clone());
                    let nid = retain.then(|| self.constant(z.clone()));
                    (z, nid)
                }
            };
            entries.insert(p, (tensor, if retain { node } else { None }));
        }
        Ok(GradientMap::new(entries))
    }

    /// Add `contrib` into the running adjoint of `input`.
    fn accumulate(
        &mut self,
        adjoint: &mut [Option<NodeId>],
        input: NodeId,
        contrib: NodeId,
    ) -> Result<(), AutodiffError> {
        adjoint[input.0] = Some(match adjoint[input.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Emit the vector-Jacobian product of one node into its inputs.
    ///
    /// `out` is the node being differentiated, `g` its accumulated adjoint
    /// (same shape as `out`). Inputs that cannot depend on any parameter are
    /// skipped, keeping constant subgraphs adjoint-free.
    fn emit_adjoints(
        &mut self,
        out: NodeId,
        op: &Op,
        inputs: &[NodeId],
        g: NodeId,
        adjoint: &mut [Option<NodeId>],
    ) -> Result<(), AutodiffError> {
        match op {
            Op::Input => {}
            Op::Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.needs_grad(a) {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(g, bt)?;
                    self.accumulate(adjoint, a, da)?;
                }
                if self.needs_grad(b) {
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, g)?;
                    self.accumulate(adjoint, b, db)?;
                }
            }
            Op::Add => {
                for &i in inputs {
                    if self.needs_grad(i) {
                        self.accumulate(adjoint, i, g)?;
                    }
                }
            }
            Op::Subtract => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.needs_grad(a) {
                    self.accumulate(adjoint, a, g)?;
                }
                if self.needs_grad(b) {
                    let neg = self.scale(g, -1.0)?;
                    self.accumulate(adjoint, b, neg)?;
                }
            }
            Op::Multiply => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.needs_grad(a) {
                    let da = self.multiply(g, b)?;
                    self.accumulate(adjoint, a, da)?;
                }
                if self.needs_grad(b) {
                    let db = self.multiply(g, a)?;
                    self.accumulate(adjoint, b, db)?;
                }
            }
            Op::Scale { factor } => {
                if self.needs_grad(inputs[0]) {
                    let d = self.scale(g, *factor)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::Tanh => {
                if self.needs_grad(inputs[0]) {
                    // d tanh = 1 - y^2, built from the cached output node so
                    // the expression stays differentiable.
                    let yy = self.multiply(out, out)?;
                    let ones = {
                        let shape = self.nodes[out.0].shape.clone();
                        self.constant(Tensor::filled(shape, 1.0)?)
                    };
                    let one_minus = self.subtract(ones, yy)?;
                    let d = self.multiply(g, one_minus)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::Relu => {
                if self.needs_grad(inputs[0]) {
                    // Subgradient mask captured as a constant: zero almost
                    // everywhere in the second derivative, matching relu.
                    let src = &self.nodes[inputs[0].0];
                    let mask_vals: Vec<f64> =
                        src.values.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
                    let mask_t = Tensor::new(src.shape.clone(), mask_vals)?;
                    let mask = self.constant(mask_t);
                    let d = self.multiply(g, mask)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::MeanAxis { axis } => {
                if self.needs_grad(inputs[0]) {
                    let len = self.nodes[inputs[0].0].shape[*axis];
                    let rep = self.repeat_axis(g, *axis, len)?;
                    let d = self.scale(rep, 1.0 / len as f64)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::SumAxis { axis } => {
                if self.needs_grad(inputs[0]) {
                    let len = self.nodes[inputs[0].0].shape[*axis];
                    let d = self.repeat_axis(g, *axis, len)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::RepeatAxis { axis, .. } => {
                if self.needs_grad(inputs[0]) {
                    let d = self.sum_axis(g, *axis)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::Gather { ids } => {
                if self.needs_grad(inputs[0]) {
                    let rows = self.nodes[inputs[0].0].shape[0];
                    let d = self.scatter_add_rows(g, ids.clone(), rows)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::ScatterAddRows { ids, .. } => {
                if self.needs_grad(inputs[0]) {
                    let d = self.gather(g, ids.clone())?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::SoftmaxCrossEntropy { targets } => {
                if self.needs_grad(inputs[0]) {
                    // d logits = (softmax(logits) - onehot) * g / n
                    let shape = self.nodes[inputs[0].0].shape.clone();
                    let cols = *shape.last().expect("validated rank >= 1");
                    let n = targets.len();
                    let mut onehot_vals = vec![0.0; shape.iter().product()];
                    for (row, &y) in targets.iter().enumerate() {
                        onehot_vals[row * cols + y] = 1.0;
                    }
                    let onehot = self.constant(Tensor::new(shape, onehot_vals)?);
                    let sm = self.softmax_rows(inputs[0])?;
                    let diff = self.subtract(sm, onehot)?;
                    let weighted = self.mul_scalar(diff, g)?;
                    let d = self.scale(weighted, 1.0 / n as f64)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::Sum => {
                if self.needs_grad(inputs[0]) {
                    let ones = {
                        let shape = self.nodes[inputs[0].0].shape.clone();
                        self.constant(Tensor::filled(shape, 1.0)?)
                    };
                    let d = self.mul_scalar(ones, g)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::Transpose => {
                if self.needs_grad(inputs[0]) {
                    let d = self.transpose(g)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::SoftmaxRows => {
                if self.needs_grad(inputs[0]) {
                    // d x = y * (g - rowsum(g * y))
                    let shape = self.nodes[out.0].shape.clone();
                    let last = shape.len() - 1;
                    let cols = shape[last];
                    let gy = self.multiply(g, out)?;
                    let row_sums = self.sum_axis(gy, last)?;
                    let rep = self.repeat_axis(row_sums, last, cols)?;
                    let centered = self.subtract(g, rep)?;
                    let d = self.multiply(out, centered)?;
                    self.accumulate(adjoint, inputs[0], d)?;
                }
            }
            Op::MulScalar => {
                let (x, s) = (inputs[0], inputs[1]);
                if self.needs_grad(x) {
                    let d = self.mul_scalar(g, s)?;
                    self.accumulate(adjoint, x, d)?;
                }
                if self.needs_grad(s) {
                    let gx = self.multiply(g, x)?;
                    let d = self.sum(gx)?;
                    debug_assert_eq!(self.nodes[s.0].shape, vec![1]);
                    self.accumulate(adjoint, s, d)?;
                }
            }
        }
        Ok(())
    }
}
