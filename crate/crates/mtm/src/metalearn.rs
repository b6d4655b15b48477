//! Stage 2: episodic meta-learning (MAML).
//!
//! Each meta-iteration samples a batch of training tasks, adapts the shared
//! parameters theta on every episode's support set with plain gradient steps
//! (the inner loop), sums the adapted models' query losses, and descends
//! theta on that sum (the outer loop). By default the outer gradient flows
//! through the inner gradient step — the true second-order meta-gradient;
//! `first_order` treats the adapted parameters' dependence on theta as the
//! identity instead.

use std::collections::HashMap;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::seeds;
use crate::tasks::{sample_episode_with, Episode, TaskError, TaskSpec};
use crate::textmodel::{
    classify_forward, encode, EncoderParams, ParamNodes, TextModelError, TokenSeq, Vocab,
};

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("invalid hyperparameters: {reason}")]
    InvalidHyper { reason: String },
    #[error("loss requires a nonempty example set")]
    EmptyExamples,
    #[error("label {label} outside the episode's {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("episode from test task {task} must never reach the meta-update")]
    TestTaskEpisode { task: String },
    #[error("non-finite loss during inner adaptation step {step}")]
    NonFiniteInnerLoss { step: usize },
    #[error("meta-training diverged at iteration {iteration}")]
    Diverged { iteration: u64 },
    #[error("meta-training requires at least one training task")]
    NoTasks,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    TextModel(#[from] TextModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Meta-learning hyperparameters. `alpha` is the inner (adaptation) step
/// size, `beta` the outer step size applied to the summed query losses.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub task_batch_size: usize,
    pub meta_iterations: u64,
    pub first_order: bool,
    /// Stop early once the 100-iteration moving average of the meta-loss
    /// improves by no more than 1e-4 between consecutive windows.
    pub early_stop: bool,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), MetaError> {
        let reject = |reason: &str| Err(MetaError::InvalidHyper { reason: reason.to_owned() });
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return reject("alpha must be finite and >= 0");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return reject("beta must be finite and > 0");
        }
        if self.inner_steps < 1 {
            return reject("inner_steps must be >= 1");
        }
        if self.task_batch_size < 1 {
            return reject("task_batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Meta-training state: current theta plus bookkeeping.
#[derive(Debug, Clone)]
pub struct MetaState {
    pub params: EncoderParams,
    pub iteration: u64,
    /// `(iteration, summed query loss)` per meta-step.
    pub loss_trace: Vec<(u64, f64)>,
    episode_counters: HashMap<String, u64>,
}

impl MetaState {
    pub fn new(params: EncoderParams) -> Self {
        Self { params, iteration: 0, loss_trace: Vec::new(), episode_counters: HashMap::new() }
    }

    /// Per-task episode counter, incremented on every draw; episode RNG
    /// streams are keyed by `(task id, this counter)`.
    fn next_episode_index(&mut self, task_id: &str) -> u64 {
        let c = self.episode_counters.entry(task_id.to_owned()).or_insert(0);
        let current = *c;
        *c += 1;
        current
    }
}

/// Token sequences plus class labels, ready for the classifier.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub seqs: Vec<TokenSeq>,
    pub labels: Vec<usize>,
}

/// Does this error mean a value left the finite range (divergence), at any
/// wrapping depth?
fn is_non_finite(e: &MetaError) -> bool {
    matches!(
        e,
        MetaError::Autodiff(AutodiffError::NonFinite { .. })
            | MetaError::TextModel(TextModelError::Autodiff(AutodiffError::NonFinite { .. }))
    )
}

pub fn encode_examples(
    examples: &[crate::tasks::LabeledExample],
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncodedSet, MetaError> {
    let mut seqs = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        seqs.push(encode(&ex.text, vocab, max_len)?);
        labels.push(ex.class);
    }
    Ok(EncodedSet { seqs, labels })
}

/// Mean softmax cross-entropy of the classifier on a labeled set.
pub fn task_loss(
    g: &mut Graph,
    params: &ParamNodes,
    set: &EncodedSet,
    num_classes: usize,
) -> Result<NodeId, MetaError> {
    if set.seqs.is_empty() {
        return Err(MetaError::EmptyExamples);
    }
    for &l in &set.labels {
        if l >= num_classes {
            return Err(MetaError::LabelOutOfRange { label: l, classes: num_classes });
        }
    }
    let logits = classify_forward(g, params, &set.seqs, num_classes)?;
    Ok(g.softmax_cross_entropy(logits, set.labels.clone())?)
}

/// One gradient-descent step on arbitrary parameter nodes, expressed in the
/// graph: returns `p - alpha * dloss/dp` for every `p`.
///
/// With `track` the gradients stay differentiable graph nodes (second-order
/// path); without it their values re-enter as constants, so downstream
/// differentiation treats the step direction as fixed (first-order path).
pub fn gradient_step_nodes(
    g: &mut Graph,
    params: &[NodeId],
    loss: NodeId,
    alpha: f64,
    track: bool,
) -> Result<Vec<NodeId>, AutodiffError> {
    let grads = g.backward(loss, params, track)?;
    let mut updated = Vec::with_capacity(params.len());
    for &p in params {
        let grad_node = match grads.node(p) {
            Some(n) => n,
            None => g.constant(grads.tensor(p).expect("requested parameter").clone()),
        };
        let scaled = g.scale(grad_node, alpha)?;
        updated.push(g.subtract(p, scaled)?);
    }
    Ok(updated)
}

/// Inner-loop adaptation: `inner_steps` gradient steps on the support loss,
/// returning adapted parameters as graph nodes. The caller's theta tensors
/// are never touched; with `track_for_meta` the adapted parameters remain
/// differentiable with respect to theta.
pub fn inner_adapt(
    g: &mut Graph,
    theta: &ParamNodes,
    support: &EncodedSet,
    alpha: f64,
    inner_steps: usize,
    num_classes: usize,
    track_for_meta: bool,
) -> Result<ParamNodes, MetaError> {
    if support.seqs.is_empty() {
        return Err(MetaError::EmptyExamples);
    }
    let mut current = *theta;
    for step in 0..inner_steps {
        let non_finite = |e: MetaError| {
            if is_non_finite(&e) {
                MetaError::NonFiniteInnerLoss { step }
            } else {
                e
            }
        };
        let loss = task_loss(g, &current, support, num_classes).map_err(non_finite)?;
        let stepped = gradient_step_nodes(g, &current.list(), loss, alpha, track_for_meta)
            .map_err(|e| non_finite(e.into()))?;
        current = ParamNodes::from_list([stepped[0], stepped[1], stepped[2], stepped[3], stepped[4]]);
    }
    Ok(current)
}

/// One meta-update over a batch of episodes: adapt on every support set,
/// sum the adapted query losses, and descend theta on the sum. Returns the
/// summed meta-loss. Episodes from test tasks are rejected outright.
pub fn meta_step(
    state: &mut MetaState,
    episodes: &[Episode],
    hp: &HyperParams,
    vocab: &Vocab,
    max_len: usize,
) -> Result<f64, MetaError> {
    hp.validate()?;
    if episodes.is_empty() {
        return Err(MetaError::EmptyExamples);
    }
    for e in episodes {
        if e.from_test_split {
            return Err(MetaError::TestTaskEpisode { task: e.task_id.clone() });
        }
    }
    let iteration = state.iteration;
    let diverged = |e: MetaError| {
        if is_non_finite(&e) || matches!(e, MetaError::NonFiniteInnerLoss { .. }) {
            MetaError::Diverged { iteration }
        } else {
            e
        }
    };

    let mut g = Graph::new();
    let theta = state.params.into_graph(&mut g);
    let mut total: Option<NodeId> = None;
    for episode in episodes {
        let classes = episode.class_count();
        let support = encode_examples(&episode.support, vocab, max_len)?;
        let query = encode_examples(&episode.query, vocab, max_len)?;
        let adapted = inner_adapt(
            &mut g,
            &theta,
            &support,
            hp.alpha,
            hp.inner_steps,
            classes,
            !hp.first_order,
        )
        .map_err(diverged)?;
        let loss = task_loss(&mut g, &adapted, &query, classes).map_err(diverged)?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss).map_err(|e| diverged(e.into()))?,
        });
    }
    let total = total.expect("nonempty batch");
    let meta_loss = g.values_of(total)?[0];

    let grads = g.backward(total, &theta.list(), false).map_err(|e| diverged(e.into()))?;
    let grad_tensors: [Tensor; 5] = theta
        .list()
        .map(|id| grads.tensor(id).expect("requested parameter").clone());
    state
        .params
        .descend(&grad_tensors, hp.beta)
        .map_err(|_| MetaError::Diverged { iteration })?;
    state.iteration += 1;
    state.loss_trace.push((iteration, meta_loss));
    Ok(meta_loss)
}

/// Settings for episode construction during meta-training.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSettings {
    pub k: usize,
    pub q: usize,
    pub max_len: usize,
    pub shuffle_classes: bool,
}

/// The full meta-training loop: `meta_iterations` task-batch samples and
/// meta-steps from the given initialization. Deterministic per seed; the
/// loss trace is one entry per iteration.
pub fn meta_train(
    theta0: EncoderParams,
    tasks: &[TaskSpec],
    hp: &HyperParams,
    vocab: &Vocab,
    episode_cfg: &EpisodeSettings,
) -> Result<MetaState, MetaError> {
    hp.validate()?;
    if tasks.is_empty() {
        return Err(MetaError::NoTasks);
    }
    if let Some(t) = tasks.iter().find(|t| t.is_test) {
        return Err(MetaError::TestTaskEpisode { task: t.id.clone() });
    }
    if episode_cfg.q == 0 {
        return Err(MetaError::InvalidHyper {
            reason: "meta-training needs at least one query example per class".into(),
        });
    }

    let mut state = MetaState::new(theta0);
    let mut window_sum = 0.0;
    let mut prev_window: Option<f64> = None;
    for iteration in 0..hp.meta_iterations {
        let mut batch_rng = seeds::stream(hp.seed, "meta/task-batch", iteration);
        let mut episodes = Vec::with_capacity(hp.task_batch_size);
        for _ in 0..hp.task_batch_size {
            use rand::Rng;
            let task = &tasks[batch_rng.random_range(0..tasks.len())];
            let index = state.next_episode_index(&task.id);
            let seed = seeds::child_seed(hp.seed, &format!("meta/episode/{}", task.id), index);
            episodes.push(sample_episode_with(
                task,
                episode_cfg.k,
                episode_cfg.q,
                seed,
                episode_cfg.shuffle_classes,
            )?);
        }
        let loss = meta_step(&mut state, &episodes, hp, vocab, episode_cfg.max_len)?;

        window_sum += loss;
        if hp.early_stop && (iteration + 1) % 100 == 0 {
            let window = window_sum / 100.0;
            window_sum = 0.0;
            if let Some(prev) = prev_window {
                if prev - window <= 1e-4 {
                    break;
                }
            }
            prev_window = Some(window);
        }
    }
    Ok(state)
}
