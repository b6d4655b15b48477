//! Encoder parameters and the differentiable classifier forward pass.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::seeds;

use super::{TextModelError, TokenSeq};

/// Widths of the encoder. `classes_max` is the shared head width; a task
/// with `C` classes uses its first `C` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub classes_max: usize,
}

/// The classifier parameters theta: embedding table, tanh hidden layer, and
/// the shared output head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub embedding: Tensor,
    pub w_hidden: Tensor,
    pub b_hidden: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Graph leaves holding one set of encoder parameters, in canonical order.
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub embedding: NodeId,
    pub w_hidden: NodeId,
    pub b_hidden: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl ParamNodes {
    pub fn list(&self) -> [NodeId; 5] {
        [self.embedding, self.w_hidden, self.b_hidden, self.w_out, self.b_out]
    }

    pub fn from_list(ids: [NodeId; 5]) -> Self {
        Self {
            embedding: ids[0],
            w_hidden: ids[1],
            b_hidden: ids[2],
            w_out: ids[3],
            b_out: ids[4],
        }
    }
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, values).expect("uniform init is finite")
}

impl EncoderParams {
    /// Seeded random initialization: embeddings uniform in [-0.1, 0.1],
    /// weight matrices uniform within 1/sqrt(fan_in), biases zero.
    pub fn init(dims: EncoderDims, seed: u64) -> Self {
        let mut r_emb = seeds::stream(seed, "init/embedding", 0);
        let mut r_hid = seeds::stream(seed, "init/hidden", 0);
        let mut r_out = seeds::stream(seed, "init/head", 0);
        Self {
            dims,
            embedding: uniform(&mut r_emb, vec![dims.vocab, dims.embed], 0.1),
            w_hidden: uniform(&mut r_hid, vec![dims.embed, dims.hidden], 1.0 / (dims.embed as f64).sqrt()),
            b_hidden: Tensor::zeros(vec![1, dims.hidden]),
            w_out: uniform(&mut r_out, vec![dims.hidden, dims.classes_max], 1.0 / (dims.hidden as f64).sqrt()),
            b_out: Tensor::zeros(vec![1, dims.classes_max]),
        }
    }

    /// Canonical `(name, tensor)` view, the order used everywhere a parameter
    /// list is expected (graph leaves, gradient reductions, checkpoints).
    pub fn tensors(&self) -> [(&'static str, &Tensor); 5] {
        [
            ("embedding", &self.embedding),
            ("w_hidden", &self.w_hidden),
            ("b_hidden", &self.b_hidden),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 5] {
        [
            ("embedding", &mut self.embedding),
            ("w_hidden", &mut self.w_hidden),
            ("b_hidden", &mut self.b_hidden),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
        ]
    }

    /// Rebuild from named tensors, validating shape consistency.
    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self, TextModelError> {
        let get = |name: &str| -> Result<&Tensor, TextModelError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| TextModelError::InvalidParams {
                    reason: format!("missing tensor {name}"),
                })
        };
        let embedding = get("embedding")?.clone();
        let w_hidden = get("w_hidden")?.clone();
        let b_hidden = get("b_hidden")?.clone();
        let w_out = get("w_out")?.clone();
        let b_out = get("b_out")?.clone();
        let bad = |reason: String| TextModelError::InvalidParams { reason };
        if embedding.rank() != 2 || w_hidden.rank() != 2 || w_out.rank() != 2 {
            return Err(bad("embedding/w_hidden/w_out must be rank 2".into()));
        }
        let dims = EncoderDims {
            vocab: embedding.shape()[0],
            embed: embedding.shape()[1],
            hidden: w_hidden.shape()[1],
            classes_max: w_out.shape()[1],
        };
        if w_hidden.shape()[0] != dims.embed {
            return Err(bad(format!(
                "w_hidden rows {} != embedding width {}",
                w_hidden.shape()[0],
                dims.embed
            )));
        }
        if b_hidden.shape() != [1, dims.hidden] {
            return Err(bad(format!("b_hidden shape {:?}", b_hidden.shape())));
        }
        if w_out.shape()[0] != dims.hidden {
            return Err(bad(format!(
                "w_out rows {} != hidden width {}",
                w_out.shape()[0],
                dims.hidden
            )));
        }
        if b_out.shape() != [1, dims.classes_max] {
            return Err(bad(format!("b_out shape {:?}", b_out.shape())));
        }
        Ok(Self { dims, embedding, w_hidden, b_hidden, w_out, b_out })
    }

    /// Load all five tensors into a graph as differentiable parameter leaves.
    pub fn into_graph(&self, g: &mut Graph) -> ParamNodes {
        ParamNodes {
            embedding: g.parameter(self.embedding.clone()),
            w_hidden: g.parameter(self.w_hidden.clone()),
            b_hidden: g.parameter(self.b_hidden.clone()),
            w_out: g.parameter(self.w_out.clone()),
            b_out: g.parameter(self.b_out.clone()),
        }
    }

    /// In-place gradient-descent update over the canonical parameter order.
    pub fn descend(&mut self, grads: &[Tensor; 5], lr: f64) -> Result<(), TextModelError> {
        for ((_, p), g) in self.tensors_mut().into_iter().zip(grads.iter()) {
            p.axpy(-lr, g)?;
        }
        Ok(())
    }
}

/// Broadcast a `[1, w]` row to `rows` rows via a ones-column matmul, keeping
/// the whole expression differentiable.
fn broadcast_rows(g: &mut Graph, row: NodeId, rows: usize) -> Result<NodeId, TextModelError> {
    let ones = g.constant(Tensor::filled(vec![rows, 1], 1.0)?);
    Ok(g.matmul(ones, row)?)
}

/// Mean-pool token embeddings per row and apply the tanh hidden layer.
///
/// Each entry of `rows` is the list of token ids pooled (uniformly) for that
/// output row. Returns the `[rows.len(), hidden]` activation node.
pub fn pooled_hidden(
    g: &mut Graph,
    embedding: NodeId,
    w_hidden: NodeId,
    b_hidden: NodeId,
    rows: &[&[u32]],
) -> Result<NodeId, TextModelError> {
    if rows.is_empty() {
        return Err(TextModelError::EmptyBatch);
    }
    let mut flat_ids = Vec::new();
    let mut offsets = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.is_empty() {
            return Err(TextModelError::EmptySequence { index: i });
        }
        offsets.push(flat_ids.len());
        flat_ids.extend(row.iter().map(|&id| id as usize));
    }
    let gathered = g.gather(embedding, flat_ids.clone())?;

    // Constant pooling matrix: row i averages its own token positions.
    let n = flat_ids.len();
    let mut pool = vec![0.0; rows.len() * n];
    for (i, row) in rows.iter().enumerate() {
        let w = 1.0 / row.len() as f64;
        for j in 0..row.len() {
            pool[i * n + offsets[i] + j] = w;
        }
    }
    let pool_node = g.constant(Tensor::new(vec![rows.len(), n], pool)?);
    let pooled = g.matmul(pool_node, gathered)?;

    let pre = g.matmul(pooled, w_hidden)?;
    let bias = broadcast_rows(g, b_hidden, rows.len())?;
    let summed = g.add(pre, bias)?;
    Ok(g.tanh(summed)?)
}

/// Forward pass of the classifier: logits node of shape
/// `[batch.len(), num_classes]`, fully recorded for differentiation.
///
/// Pooling covers only non-PAD positions; a zero-length sequence is
/// rejected. `num_classes` selects the first columns of the shared head.
pub fn classify_forward(
    g: &mut Graph,
    params: &ParamNodes,
    batch: &[TokenSeq],
    num_classes: usize,
) -> Result<NodeId, TextModelError> {
    if batch.is_empty() {
        return Err(TextModelError::EmptyBatch);
    }
    let classes_max = g.shape_of(params.w_out)?[1];
    if num_classes > classes_max {
        return Err(TextModelError::TooManyClasses {
            requested: num_classes,
            available: classes_max,
        });
    }
    let rows: Vec<&[u32]> = batch.iter().map(|s| s.active()).collect();
    let hidden = pooled_hidden(g, params.embedding, params.w_hidden, params.b_hidden, &rows)?;
    let pre = g.matmul(hidden, params.w_out)?;
    let bias = broadcast_rows(g, params.b_out, batch.len())?;
    let full = g.add(pre, bias)?;
    if num_classes == classes_max {
        return Ok(full);
    }
    // Column selector keeps gradients flowing back into the full head.
    let mut sel = vec![0.0; classes_max * num_classes];
    for c in 0..num_classes {
        sel[c * num_classes + c] = 1.0;
    }
    let sel_node = g.constant(Tensor::new(vec![classes_max, num_classes], sel)?);
    Ok(g.matmul(full, sel_node)?)
}
