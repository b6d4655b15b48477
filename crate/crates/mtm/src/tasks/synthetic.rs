//! Synthetic multi-domain sentiment benchmark.
//!
//! Every example is a shuffled bag of domain topic words, exactly five words
//! from a sentiment lexicon shared across all domains, and filler words. The
//! label is the majority sentiment polarity (the five-word count makes a tie
//! impossible), flipped with probability `noise_rate`. Domains differ only in
//! their topic words, so polarity knowledge transfers to held-out domains.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seeds;

use super::{LabeledExample, SplitSpec, TaskError, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Total domains; the last `num_test_domains` of them form the test split.
    pub num_domains: usize,
    pub tasks_per_domain: usize,
    pub num_test_domains: usize,
    /// Training examples per label in every task's train file.
    pub examples_per_label: usize,
    /// Examples per label in every task's test file.
    pub test_examples_per_label: usize,
    /// Fixed support examples per label written for test tasks.
    pub support_per_label: usize,
    /// Number of filler (sentiment-neutral) vocabulary words.
    pub filler_vocab: usize,
    /// Words per polarity in the shared sentiment lexicon.
    pub lexicon_size: usize,
    pub topic_words_per_domain: usize,
    /// Probability that an example's label disagrees with its majority
    /// polarity.
    pub noise_rate: f64,
    pub seed: u64,
}

/// Generator output: the unlabeled pretraining corpus plus the labeled tasks.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Raw texts of all training-split train files, in task order. This is
    /// the pretraining corpus; it carries no labels and no test-domain text.
    pub corpus: Vec<String>,
    pub tasks: Vec<TaskSpec>,
    pub split: SplitSpec,
    pub positive_lexicon: Vec<String>,
    pub negative_lexicon: Vec<String>,
}

fn domain_name(i: usize) -> String {
    format!("d{i:02}")
}

struct WordLists {
    positive: Vec<String>,
    negative: Vec<String>,
    filler: Vec<String>,
    topics: Vec<Vec<String>>,
}

fn build_word_lists(cfg: &SyntheticConfig) -> WordLists {
    WordLists {
        positive: (0..cfg.lexicon_size).map(|i| format!("pos{i:02}")).collect(),
        negative: (0..cfg.lexicon_size).map(|i| format!("neg{i:02}")).collect(),
        filler: (0..cfg.filler_vocab).map(|i| format!("f{i:03}")).collect(),
        topics: (0..cfg.num_domains)
            .map(|d| {
                (0..cfg.topic_words_per_domain)
                    .map(|i| format!("{}w{i}", domain_name(d)))
                    .collect()
            })
            .collect(),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    &words[rng.random_range(0..words.len())]
}

/// Generate one example whose final label is `class` (0 negative, 1
/// positive). With probability `noise_rate` the text's majority polarity is
/// the opposite of the label.
fn gen_example(
    rng: &mut ChaCha8Rng,
    class: usize,
    cfg: &SyntheticConfig,
    words: &WordLists,
    domain: usize,
) -> LabeledExample {
    let mislabeled = rng.random::<f64>() < cfg.noise_rate;
    let majority_positive = (class == 1) != mislabeled;
    // Three sentiment words per sentence; 2 or 3 carry the majority
    // polarity. The odd count keeps the majority well-defined while the
    // frequent 2-1 mixes keep the per-example margin small, so label-only
    // learning stays hard relative to the distributional co-occurrence
    // signal the raw corpus carries.
    let n_major = if rng.random_range(0..10u32) < 6 { 2 } else { 3 };
    let (major, minor) = if majority_positive {
        (&words.positive, &words.negative)
    } else {
        (&words.negative, &words.positive)
    };
    let mut bag: Vec<&str> = Vec::new();
    for _ in 0..n_major {
        bag.push(pick(rng, major));
    }
    for _ in 0..3 - n_major {
        bag.push(pick(rng, minor));
    }
    // Dilution comes mostly from topic words rather than fillers: topic
    // tokens are label-irrelevant (hard for label-only learning) yet
    // predictable from context (so the unsupervised objective keeps signal).
    let n_topic = rng.random_range(4..=6usize);
    for _ in 0..n_topic {
        bag.push(pick(rng, &words.topics[domain]));
    }
    let n_filler = rng.random_range(1..=2usize);
    for _ in 0..n_filler {
        bag.push(pick(rng, &words.filler));
    }
    for i in (1..bag.len()).rev() {
        let j = rng.random_range(0..=i);
        bag.swap(i, j);
    }
    LabeledExample { text: bag.join(" "), class }
}

fn gen_block(
    rng: &mut ChaCha8Rng,
    per_label: usize,
    cfg: &SyntheticConfig,
    words: &WordLists,
    domain: usize,
) -> Vec<LabeledExample> {
    let mut out = Vec::with_capacity(per_label * 2);
    for class in 0..2 {
        for _ in 0..per_label {
            out.push(gen_example(rng, class, cfg, words, domain));
        }
    }
    out
}

fn validate(cfg: &SyntheticConfig) -> Result<(), TaskError> {
    let reject = |reason: &str| Err(TaskError::DegenerateConfig { reason: reason.to_owned() });
    if cfg.lexicon_size == 0 {
        return reject("sentiment lexicon is empty");
    }
    if cfg.filler_vocab == 0 {
        return reject("filler vocabulary is empty");
    }
    if cfg.topic_words_per_domain == 0 {
        return reject("no topic words per domain");
    }
    if cfg.num_domains == 0 || cfg.tasks_per_domain == 0 {
        return reject("need at least one domain and one task per domain");
    }
    if cfg.num_domains < cfg.num_test_domains + 1 {
        return reject("num_domains must exceed num_test_domains");
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return reject("noise_rate must lie in [0, 1]");
    }
    if cfg.examples_per_label == 0 {
        return reject("examples_per_label must be positive");
    }
    Ok(())
}

/// Generate the full benchmark: labeled tasks in the ARSC layout shape, the
/// train/test split, and the unlabeled pretraining corpus. Deterministic per
/// seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData, TaskError> {
    validate(cfg)?;
    let words = build_word_lists(cfg);
    let first_test_domain = cfg.num_domains - cfg.num_test_domains;

    let mut tasks = Vec::new();
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    let mut corpus = Vec::new();

    for d in 0..cfg.num_domains {
        let domain = domain_name(d);
        let is_test = d >= first_test_domain;
        for t in 0..cfg.tasks_per_domain {
            let id = format!("{domain}.t{t}");
            let mut rng_train = seeds::stream(cfg.seed, &format!("synthetic/{id}/train"), 0);
            let train = gen_block(&mut rng_train, cfg.examples_per_label, cfg, &words, d);
            let mut rng_test = seeds::stream(cfg.seed, &format!("synthetic/{id}/test"), 0);
            let test = gen_block(&mut rng_test, cfg.test_examples_per_label, cfg, &words, d);

            let support = if is_test {
                let mut rng_sup = seeds::stream(cfg.seed, &format!("synthetic/{id}/support"), 0);
                let mut taken: Vec<String> = test.iter().map(|e| e.text.clone()).collect();
                let mut support = Vec::with_capacity(cfg.support_per_label * 2);
                for class in 0..2 {
                    for _ in 0..cfg.support_per_label {
                        // Resample on text collision so the fixed support
                        // stays disjoint from the query file.
                        let ex = loop {
                            let candidate = gen_example(&mut rng_sup, class, cfg, &words, d);
                            if !taken.contains(&candidate.text) {
                                break candidate;
                            }
                        };
                        taken.push(ex.text.clone());
                        support.push(ex);
                    }
                }
                Some(support)
            } else {
                corpus.extend(train.iter().map(|e| e.text.clone()));
                None
            };

            if is_test {
                test_ids.push(id.clone());
            } else {
                train_ids.push(id.clone());
            }
            tasks.push(TaskSpec {
                id,
                domain: domain.clone(),
                labels: vec!["-1".to_owned(), "1".to_owned()],
                is_test,
                train,
                test,
                support,
            });
        }
    }
    let split = SplitSpec::new(train_ids, test_ids)?;
    Ok(SyntheticData {
        corpus,
        tasks,
        split,
        positive_lexicon: words.positive,
        negative_lexicon: words.negative,
    })
}
