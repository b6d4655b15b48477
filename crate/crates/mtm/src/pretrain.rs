//! Stage 1: unsupervised masked-token pretraining.
//!
//! Raw token sequences only — no labels enter this module's signatures.
//! Random non-PAD positions are replaced by MASK and the original ids are
//! predicted from the masked sentence's pooled hidden representation through
//! a dedicated vocabulary-wide head. The head exists only inside
//! [`pretrain_run`]; the returned parameters are the task-agnostic encoder
//! initialization handed to meta-learning.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::seeds;
use crate::textmodel::{pooled_hidden, EncoderParams, ParamNodes, TextModelError, TokenSeq, MASK_ID};

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("mask rate must lie in (0, 1], got {rate}")]
    InvalidRate { rate: f64 },
    #[error("batch has no non-PAD tokens to mask")]
    NoMaskableTokens,
    #[error("masked batch carries no targets")]
    NoTargets,
    #[error("masked target id {id} is outside the {vocab}-word vocabulary")]
    TargetOutOfVocab { id: u32, vocab: usize },
    #[error("pretraining corpus is empty")]
    EmptyCorpus,
    #[error("pretraining diverged at step {step}: non-finite loss")]
    Diverged { step: u64 },
    #[error(transparent)]
    TextModel(#[from] TextModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One masked-position prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskTarget {
    pub seq: usize,
    pub pos: usize,
    pub original: u32,
}

/// A batch with MASK substituted at the target positions.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub seqs: Vec<TokenSeq>,
    pub targets: Vec<MaskTarget>,
    pub rate: f64,
}

/// Select each non-PAD position independently with probability `rate`,
/// replace it with MASK, and record the original id. If sampling selects
/// nothing, the first non-PAD position of the first nonempty sequence is
/// forced so every batch has at least one target.
pub fn mask_tokens(
    batch: &[TokenSeq],
    rate: f64,
    rng_seed: u64,
) -> Result<MaskedBatch, PretrainError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PretrainError::InvalidRate { rate });
    }
    if batch.iter().all(|s| s.len == 0) {
        return Err(PretrainError::NoMaskableTokens);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seqs = batch.to_vec();
    let mut targets = Vec::new();
    for (si, seq) in seqs.iter_mut().enumerate() {
        for pos in 0..seq.len {
            if rng.random::<f64>() < rate {
                targets.push(MaskTarget { seq: si, pos, original: seq.ids[pos] });
                seq.ids[pos] = MASK_ID;
            }
        }
    }
    if targets.is_empty() {
        let si = seqs.iter().position(|s| s.len > 0).expect("checked above");
        let seq = &mut seqs[si];
        targets.push(MaskTarget { seq: si, pos: 0, original: seq.ids[0] });
        seq.ids[0] = MASK_ID;
    }
    Ok(MaskedBatch { seqs, targets, rate })
}

/// Graph leaves for the vocabulary-wide pretraining head.
#[derive(Debug, Clone, Copy)]
pub struct MlmHeadNodes {
    pub w: NodeId,
    pub b: NodeId,
}

/// The pretraining prediction head, `hidden -> |V|` logits. Zero-initialized:
/// the first loss of an untrained run is exactly the uniform ln|V|.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub w: Tensor,
    pub b: Tensor,
}

impl MlmHead {
    pub fn new(hidden: usize, vocab: usize) -> Self {
        Self { w: Tensor::zeros(vec![hidden, vocab]), b: Tensor::zeros(vec![1, vocab]) }
    }

    pub fn into_graph(&self, g: &mut Graph) -> MlmHeadNodes {
        MlmHeadNodes { w: g.parameter(self.w.clone()), b: g.parameter(self.b.clone()) }
    }
}

/// Mean cross-entropy of predicting every masked target's original id from
/// its sequence's pooled hidden representation.
pub fn mlm_loss(
    g: &mut Graph,
    encoder: &ParamNodes,
    head: &MlmHeadNodes,
    masked: &MaskedBatch,
) -> Result<NodeId, PretrainError> {
    if masked.targets.is_empty() {
        return Err(PretrainError::NoTargets);
    }
    let vocab = g.shape_of(head.w)?[1];
    for t in &masked.targets {
        if t.original as usize >= vocab {
            return Err(PretrainError::TargetOutOfVocab { id: t.original, vocab });
        }
    }
    // One pooled row per target: the masked sentence it came from.
    let rows: Vec<&[u32]> =
        masked.targets.iter().map(|t| masked.seqs[t.seq].active()).collect();
    let hidden = pooled_hidden(g, encoder.embedding, encoder.w_hidden, encoder.b_hidden, &rows)?;
    let pre = g.matmul(hidden, head.w)?;
    let ones = g.constant(Tensor::filled(vec![masked.targets.len(), 1], 1.0)?);
    let bias = g.matmul(ones, head.b)?;
    let logits = g.add(pre, bias)?;
    let targets: Vec<usize> = masked.targets.iter().map(|t| t.original as usize).collect();
    Ok(g.softmax_cross_entropy(logits, targets)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

/// Plain gradient descent on [`mlm_loss`] over uniformly sampled batches.
///
/// Descends the embedding table and the prediction head; the encoder's
/// hidden layer stays at its initialization. Everything transferable then
/// lives in the embeddings, and the head that absorbed the corpus marginals
/// is dropped. (Letting the hidden layer drift under this objective was
/// measured to bury the pooled signal under a large hidden bias, which made
/// the pretrained model adapt worse than a random one.)
///
/// Returns the updated encoder (the prediction head is dropped) and the loss
/// trace, one `(step, loss)` entry per step. `steps = 0` returns the input
/// parameters unchanged. Bit-reproducible for a fixed config.
pub fn pretrain_run(
    corpus: &[TokenSeq],
    params: EncoderParams,
    cfg: &PretrainConfig,
) -> Result<(EncoderParams, Vec<(u64, f64)>), PretrainError> {
    if corpus.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return Err(PretrainError::InvalidRate { rate: cfg.mask_rate });
    }
    let mut params = params;
    let mut head = MlmHead::new(params.dims.hidden, params.dims.vocab);
    let mut trace = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let mut batch_rng = seeds::stream(cfg.seed, "pretrain/batch", step);
        let batch: Vec<TokenSeq> = (0..cfg.batch_size.max(1))
            .map(|_| corpus[batch_rng.random_range(0..corpus.len())].clone())
            .collect();
        let masked = mask_tokens(&batch, cfg.mask_rate, seeds::child_seed(cfg.seed, "pretrain/mask", step))?;

        let diverged = |e: PretrainError| match e {
            PretrainError::Autodiff(AutodiffError::NonFinite { .. })
            | PretrainError::TextModel(TextModelError::Autodiff(
                AutodiffError::NonFinite { .. },
            )) => PretrainError::Diverged { step },
            other => other,
        };

        let mut g = Graph::new();
        let enc_nodes = params.into_graph(&mut g);
        let head_nodes = head.into_graph(&mut g);
        let loss = mlm_loss(&mut g, &enc_nodes, &head_nodes, &masked).map_err(diverged)?;
        trace.push((step, g.values_of(loss)?[0]));

        let wrt = [enc_nodes.embedding, head_nodes.w, head_nodes.b];
        let grads = g.backward(loss, &wrt, false).map_err(|e| diverged(e.into()))?;
        let lr = cfg.learning_rate;
        // Any failure while applying the update means the parameters left the
        // finite range: that is a divergence, not a usage error.
        let step_err = |_: AutodiffError| PretrainError::Diverged { step };
        params
            .embedding
            .axpy(-lr, grads.tensor(enc_nodes.embedding).expect("requested"))
            .map_err(step_err)?;
        head.w.axpy(-lr, grads.tensor(head_nodes.w).expect("requested")).map_err(step_err)?;
        head.b.axpy(-lr, grads.tensor(head_nodes.b).expect("requested")).map_err(step_err)?;
    }
    Ok((params, trace))
}
