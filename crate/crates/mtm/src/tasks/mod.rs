//! Tasks, splits, and episodic sampling.
//!
//! A task is one binary (in general C-way) classification problem: a domain,
//! an ordered label set, and labeled examples. Tasks are partitioned into a
//! meta-training split and a disjoint test split; test tasks carry a fixed
//! few-shot support set and are evaluated on their full test file, each
//! exactly once.

mod arsc;
mod episode;
mod synthetic;
#[cfg(test)]
mod tests;

pub use arsc::{load_arsc_layout, write_layout};
pub use episode::{fixed_test_episode, sample_episode, sample_episode_with, Episode};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("train/test task splits overlap on {task}")]
    SplitOverlap { task: String },
    #[error("test task {task} has no support file")]
    MissingSupport { task: String },
    #[error("train task {task} has no train file")]
    MissingTrain { task: String },
    #[error("{file}: line {line}: {reason}")]
    MalformedLine {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("task {task}, class {class}: needs {required} examples, only {available} available")]
    InsufficientExamples {
        task: String,
        class: usize,
        required: usize,
        available: usize,
    },
    #[error("task {task} is not in the test split")]
    NotTestTask { task: String },
    #[error("task {task}: support file has {actual} examples for label {label}, expected {expected}")]
    SupportCountMismatch {
        task: String,
        label: String,
        expected: usize,
        actual: usize,
    },
    #[error("task {task}: support example also appears in the query set: {text:?}")]
    SupportQueryOverlap { task: String, text: String },
    #[error("synthetic generator config rejected: {reason}")]
    DegenerateConfig { reason: String },
    #[error("episode invariant violated for task {task}: {reason}")]
    EpisodeInvariant { task: String, reason: String },
}

/// One labeled example; `class` indexes the owning task's label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub class: usize,
}

/// A classification task: domain, ordered labels, and its example pools.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    /// `{domain}.{threshold}`, unique across the dataset.
    pub id: String,
    pub domain: String,
    /// Ordered label strings; an example's `class` indexes this list.
    pub labels: Vec<String>,
    pub is_test: bool,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Fixed support set; present for test tasks.
    pub support: Option<Vec<LabeledExample>>,
}

impl TaskSpec {
    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    /// Indices into `train`, bucketed by class.
    pub fn train_indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); self.labels.len()];
        for (i, ex) in self.train.iter().enumerate() {
            buckets[ex.class].push(i);
        }
        buckets
    }
}

/// The disjoint partition of task ids into meta-training and test tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    train: Vec<String>,
    test: Vec<String>,
}

impl SplitSpec {
    /// Build and validate disjointness.
    pub fn new(train: Vec<String>, test: Vec<String>) -> Result<Self, TaskError> {
        for t in &train {
            if test.contains(t) {
                return Err(TaskError::SplitOverlap { task: t.clone() });
            }
        }
        Ok(Self { train, test })
    }

    pub fn train_ids(&self) -> &[String] {
        &self.train
    }

    pub fn test_ids(&self) -> &[String] {
        &self.test
    }
}
