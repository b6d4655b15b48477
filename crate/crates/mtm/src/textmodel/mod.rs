//! Tokenizer, vocabulary, and the bag-of-words classifier.
//!
//! The classifier is deliberately small: token embeddings are mean-pooled
//! over non-PAD positions, passed through one tanh hidden layer, and projected
//! by a shared output head whose first `C` columns serve a `C`-way task. Its
//! whole forward pass is recorded on an autodiff [`Graph`](crate::autodiff::Graph),
//! so the same code path serves plain training, adaptation, and second-order
//! meta-gradients.

mod encoder;
#[cfg(test)]
mod tests;
mod vocab;

pub use encoder::{classify_forward, pooled_hidden, EncoderDims, EncoderParams, ParamNodes};
pub use vocab::{encode, tokenize, TokenSeq, Vocab, MASK_ID, MASK_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum TextModelError {
    #[error("vocabulary requires a nonempty corpus")]
    EmptyCorpus,
    #[error("encode requires max_len >= 1")]
    ZeroMaxLen,
    #[error("classifier batch must be nonempty")]
    EmptyBatch,
    #[error("sequence {index} in batch has no non-PAD tokens to pool")]
    EmptySequence { index: usize },
    #[error("task uses {requested} classes but the head has {available}")]
    TooManyClasses { requested: usize, available: usize },
    #[error("invalid encoder parameters: {reason}")]
    InvalidParams { reason: String },
    #[error("vocab file {path}: line {line}: {reason}")]
    VocabFile {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
