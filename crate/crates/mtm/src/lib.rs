//! Meta-pretraining then meta-learning (MTM) for few-shot text classification.
//!
//! The pipeline has two training stages on top of a small bag-of-words text
//! encoder: unsupervised masked-token pretraining on a raw corpus, followed by
//! episodic MAML-style meta-learning over a distribution of binary
//! classification tasks. Evaluation adapts the meta-learned parameters on a
//! fixed few-shot support set per held-out task and reports mean query
//! accuracy, with a paired t-test for comparing model/baseline runs.
//!
//! Everything runs on a from-scratch reverse-mode autodiff tape ([`autodiff`])
//! that can differentiate through gradient steps, which is what the
//! second-order meta-update requires.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metalearn;
pub mod pipeline;
pub mod pretrain;
pub mod seeds;
pub mod tasks;
pub mod textmodel;
