//! Episode construction: sampled training episodes and fixed test episodes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{LabeledExample, TaskError, TaskSpec};

/// One task instance: a support set with exactly K examples per class and a
/// query set disjoint from it (by example identity).
///
/// Example classes are episode-local: class `c` of this episode corresponds
/// to task class `class_map[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_id: String,
    pub from_test_split: bool,
    pub class_map: Vec<usize>,
    pub support: Vec<LabeledExample>,
    pub query: Vec<LabeledExample>,
}

impl Episode {
    pub fn class_count(&self) -> usize {
        self.class_map.len()
    }

    /// Check the episode invariants: per-class support count, valid labels,
    /// support/query disjointness.
    pub fn validate(&self, k: usize) -> Result<(), TaskError> {
        let classes = self.class_map.len();
        let fail = |reason: String| TaskError::EpisodeInvariant {
            task: self.task_id.clone(),
            reason,
        };
        let mut per_class = vec![0usize; classes];
        for ex in &self.support {
            if ex.class >= classes {
                return Err(fail(format!("support class {} out of range", ex.class)));
            }
            per_class[ex.class] += 1;
        }
        for (c, &n) in per_class.iter().enumerate() {
            if n != k {
                return Err(fail(format!("class {c} has {n} support examples, expected {k}")));
            }
        }
        for ex in &self.query {
            if ex.class >= classes {
                return Err(fail(format!("query class {} out of range", ex.class)));
            }
        }
        for s in &self.support {
            if self.query.iter().any(|q| q == s) {
                return Err(fail(format!("support/query overlap on {:?}", s.text)));
            }
        }
        Ok(())
    }
}

/// Draw K+Q distinct indices from `pool` with a partial Fisher-Yates shuffle.
fn draw_without_replacement(rng: &mut ChaCha8Rng, pool: &[usize], take: usize) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(take);
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

/// Uniformly sample a C-way-K-shot episode with Q queries per class, without
/// replacement within the task's training pool. Class ids keep the task's
/// label order.
pub fn sample_episode(
    task: &TaskSpec,
    k: usize,
    q: usize,
    rng_seed: u64,
) -> Result<Episode, TaskError> {
    sample_episode_with(task, k, q, rng_seed, false)
}

/// [`sample_episode`] with an optional class-order shuffle (ablation flag).
pub fn sample_episode_with(
    task: &TaskSpec,
    k: usize,
    q: usize,
    rng_seed: u64,
    shuffle_classes: bool,
) -> Result<Episode, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let buckets = task.train_indices_by_class();

    let mut class_map: Vec<usize> = (0..task.class_count()).collect();
    if shuffle_classes {
        for i in (1..class_map.len()).rev() {
            let j = rng.random_range(0..=i);
            class_map.swap(i, j);
        }
    }
    // task class -> episode class
    let mut inverse = vec![0usize; class_map.len()];
    for (episode_class, &task_class) in class_map.iter().enumerate() {
        inverse[task_class] = episode_class;
    }

    let mut support = Vec::with_capacity(k * class_map.len());
    let mut query = Vec::with_capacity(q * class_map.len());
    for (task_class, bucket) in buckets.iter().enumerate() {
        if bucket.len() < k + q {
            return Err(TaskError::InsufficientExamples {
                task: task.id.clone(),
                class: task_class,
                required: k + q,
                available: bucket.len(),
            });
        }
        let picks = draw_without_replacement(&mut rng, bucket, k + q);
        for (i, &idx) in picks.iter().enumerate() {
            let ex = LabeledExample {
                text: task.train[idx].text.clone(),
                class: inverse[task_class],
            };
            if i < k {
                support.push(ex);
            } else {
                query.push(ex);
            }
        }
    }
    Ok(Episode {
        task_id: task.id.clone(),
        from_test_split: task.is_test,
        class_map,
        support,
        query,
    })
}

/// The one fixed evaluation episode of a test task: support is exactly the
/// task's support file, query is its full test split.
pub fn fixed_test_episode(task: &TaskSpec, k: usize) -> Result<Episode, TaskError> {
    if !task.is_test {
        return Err(TaskError::NotTestTask { task: task.id.clone() });
    }
    let support = task
        .support
        .as_ref()
        .ok_or_else(|| TaskError::MissingSupport { task: task.id.clone() })?;

    for (class, label) in task.labels.iter().enumerate() {
        let actual = support.iter().filter(|ex| ex.class == class).count();
        if actual != k {
            return Err(TaskError::SupportCountMismatch {
                task: task.id.clone(),
                label: label.clone(),
                expected: k,
                actual,
            });
        }
    }
    for s in support {
        if task.test.iter().any(|t| t == s) {
            return Err(TaskError::SupportQueryOverlap {
                task: task.id.clone(),
                text: s.text.clone(),
            });
        }
    }
    Ok(Episode {
        task_id: task.id.clone(),
        from_test_split: true,
        class_map: (0..task.class_count()).collect(),
        support: support.clone(),
        query: task.test.clone(),
    })
}
