//! Few-shot evaluation: adapt on each test task's fixed support set, score
//! its full test split once, aggregate the unweighted mean accuracy, and
//! compare paired runs with a Student t-test.

mod ttest;

pub use ttest::{paired_t_test, TTestResult};

use std::fmt::Write as _;

use crate::autodiff::{AutodiffError, Graph};
use crate::metalearn::{encode_examples, inner_adapt, MetaError};
use crate::tasks::{fixed_test_episode, Episode, TaskError, TaskSpec};
use crate::textmodel::{classify_forward, EncoderParams, TextModelError, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("episode of task {task} is not from the test split")]
    NotTestEpisode { task: String },
    #[error("task {task} has an empty query set")]
    EmptyQuery { task: String },
    #[error("evaluation of task {task} failed: {source}")]
    TaskFailed {
        task: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("paired t-test input rejected: {reason}")]
    TTestInput { reason: String },
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    TextModel(#[from] TextModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Adapt theta on the episode's fixed support set (no higher-order tracking)
/// and return the fraction of query examples whose argmax logit matches the
/// label. Ties resolve to the lowest class index. Theta itself is untouched.
pub fn evaluate_task(
    theta: &EncoderParams,
    episode: &Episode,
    alpha: f64,
    inner_steps: usize,
    vocab: &Vocab,
    max_len: usize,
) -> Result<f64, EvalError> {
    if !episode.from_test_split {
        return Err(EvalError::NotTestEpisode { task: episode.task_id.clone() });
    }
    if episode.query.is_empty() {
        return Err(EvalError::EmptyQuery { task: episode.task_id.clone() });
    }
    let classes = episode.class_count();
    let support = encode_examples(&episode.support, vocab, max_len)?;
    let query = encode_examples(&episode.query, vocab, max_len)?;

    let mut g = Graph::new();
    let nodes = theta.into_graph(&mut g);
    let adapted = inner_adapt(&mut g, &nodes, &support, alpha, inner_steps, classes, false)?;
    let logits = classify_forward(&mut g, &adapted, &query.seqs, classes)?;
    let values = g.values_of(logits)?;

    let mut correct = 0usize;
    for (row, &label) in query.labels.iter().enumerate() {
        let row_logits = &values[row * classes..(row + 1) * classes];
        let mut best = 0usize;
        for (c, &v) in row_logits.iter().enumerate() {
            if v > row_logits[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / query.labels.len() as f64)
}

/// One evaluated test task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub task_id: String,
    pub domain: String,
    pub accuracy: f64,
    pub n_query: usize,
}

/// Per-task accuracies plus their unweighted mean and the producing
/// configuration's fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<TaskEval>,
    pub mean_accuracy: f64,
    pub fingerprint: String,
}

impl EvalReport {
    /// Assemble a report: rows are ordered by task id and the mean is the
    /// unweighted average over tasks.
    pub fn from_rows(mut rows: Vec<TaskEval>, fingerprint: String) -> Self {
        rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let mean_accuracy = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64
        };
        Self { rows, mean_accuracy, fingerprint }
    }

    /// Serialization: fingerprint header, one TSV row per task, mean footer.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# fingerprint\t{}", self.fingerprint).expect("string write");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}\t{}", r.task_id, r.domain, r.accuracy, r.n_query)
                .expect("string write");
        }
        writeln!(out, "mean\t{}", self.mean_accuracy).expect("string write");
        out
    }
}

/// Evaluate every test task exactly once on its fixed episode.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_suite(
    theta: &EncoderParams,
    test_tasks: &[TaskSpec],
    k: usize,
    alpha: f64,
    inner_steps: usize,
    vocab: &Vocab,
    max_len: usize,
    fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::with_capacity(test_tasks.len());
    for task in test_tasks {
        let fail = |source: EvalError| EvalError::TaskFailed {
            task: task.id.clone(),
            source: Box::new(source),
        };
        let episode = fixed_test_episode(task, k).map_err(|e| fail(e.into()))?;
        let accuracy =
            evaluate_task(theta, &episode, alpha, inner_steps, vocab, max_len).map_err(fail)?;
        rows.push(TaskEval {
            task_id: task.id.clone(),
            domain: task.domain.clone(),
            accuracy,
            n_query: episode.query.len(),
        });
    }
    Ok(EvalReport::from_rows(rows, fingerprint.to_owned()))
}
