//! Declarative experiment configuration.
//!
//! One UTF-8 key-value file (`key = value` lines, `#` comments) drives the
//! whole pipeline; command-line flags override individual keys. Every field
//! is validated against its consumer's preconditions before a command takes
//! any side effect, and the semantic fields (everything except filesystem
//! paths) are hashed into a stable fingerprint recorded in artifacts.

use crate::pretrain::PretrainConfig;
use crate::metalearn::HyperParams;
use crate::tasks::SyntheticConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: cannot parse {value:?} as {kind}")]
    BadValue { key: String, value: String, kind: &'static str },
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Filesystem (excluded from the fingerprint).
    pub data_root: String,
    pub out_dir: String,

    // Seeding.
    pub seed: u64,

    // Encoder.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub c_max: usize,
    pub max_len: usize,
    pub min_count: usize,

    // Pretraining.
    pub pretrain_steps: u64,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub mask_rate: f64,

    // Meta-learning.
    pub alpha: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub task_batch_size: usize,
    pub meta_iterations: u64,
    pub first_order: bool,
    pub early_stop: bool,

    // Episodes.
    pub k_shot: usize,
    pub q_query: usize,
    pub shuffle_episode_classes: bool,

    // Evaluation-time adaptation; empty means "reuse training values".
    pub eval_alpha: Option<f64>,
    pub eval_inner_steps: Option<usize>,

    // Synthetic benchmark generator.
    pub num_domains: usize,
    pub tasks_per_domain: usize,
    pub num_test_domains: usize,
    pub examples_per_label: usize,
    pub test_examples_per_label: usize,
    pub vocab_size: usize,
    pub lexicon_size: usize,
    pub topic_words_per_domain: usize,
    pub noise_rate: f64,

    // Explicit test-domain list; empty means "derive from the synthetic
    // generator layout" (the last `num_test_domains` domains).
    pub test_domains: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            out_dir: "out".into(),
            seed: 42,
            embed_dim: 16,
            hidden_dim: 32,
            c_max: 2,
            max_len: 16,
            min_count: 1,
            pretrain_steps: 10000,
            pretrain_batch: 32,
            pretrain_lr: 1.0,
            mask_rate: 0.15,
            alpha: 0.3,
            beta: 0.2,
            inner_steps: 1,
            task_batch_size: 4,
            meta_iterations: 50,
            first_order: false,
            early_stop: false,
            k_shot: 5,
            q_query: 5,
            shuffle_episode_classes: false,
            eval_alpha: None,
            eval_inner_steps: None,
            num_domains: 10,
            tasks_per_domain: 3,
            num_test_domains: 2,
            examples_per_label: 40,
            test_examples_per_label: 50,
            vocab_size: 200,
            lexicon_size: 12,
            topic_words_per_domain: 6,
            noise_rate: 0.05,
            test_domains: Vec::new(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: v.into(), kind: "bool" }),
    }
}

macro_rules! parse_num {
    ($key:expr, $v:expr, $ty:ty) => {
        $v.parse::<$ty>().map_err(|_| ConfigError::BadValue {
            key: $key.into(),
            value: $v.into(),
            kind: stringify!($ty),
        })
    };
}

impl Config {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "data_root" => self.data_root = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "seed" => self.seed = parse_num!(key, v, u64)?,
            "embed_dim" => self.embed_dim = parse_num!(key, v, usize)?,
            "hidden_dim" => self.hidden_dim = parse_num!(key, v, usize)?,
            "c_max" => self.c_max = parse_num!(key, v, usize)?,
            "max_len" => self.max_len = parse_num!(key, v, usize)?,
            "min_count" => self.min_count = parse_num!(key, v, usize)?,
            "pretrain_steps" => self.pretrain_steps = parse_num!(key, v, u64)?,
            "pretrain_batch" => self.pretrain_batch = parse_num!(key, v, usize)?,
            "pretrain_lr" => self.pretrain_lr = parse_num!(key, v, f64)?,
            "mask_rate" => self.mask_rate = parse_num!(key, v, f64)?,
            "alpha" => self.alpha = parse_num!(key, v, f64)?,
            "beta" => self.beta = parse_num!(key, v, f64)?,
            "inner_steps" => self.inner_steps = parse_num!(key, v, usize)?,
            "task_batch_size" => self.task_batch_size = parse_num!(key, v, usize)?,
            "meta_iterations" => self.meta_iterations = parse_num!(key, v, u64)?,
            "first_order" => self.first_order = parse_bool(key, v)?,
            "early_stop" => self.early_stop = parse_bool(key, v)?,
            "k_shot" => self.k_shot = parse_num!(key, v, usize)?,
            "q_query" => self.q_query = parse_num!(key, v, usize)?,
            "shuffle_episode_classes" => self.shuffle_episode_classes = parse_bool(key, v)?,
            "eval_alpha" => {
                self.eval_alpha = if v.is_empty() { None } else { Some(parse_num!(key, v, f64)?) }
            }
            "eval_inner_steps" => {
                self.eval_inner_steps =
                    if v.is_empty() { None } else { Some(parse_num!(key, v, usize)?) }
            }
            "num_domains" => self.num_domains = parse_num!(key, v, usize)?,
            "tasks_per_domain" => self.tasks_per_domain = parse_num!(key, v, usize)?,
            "num_test_domains" => self.num_test_domains = parse_num!(key, v, usize)?,
            "examples_per_label" => self.examples_per_label = parse_num!(key, v, usize)?,
            "test_examples_per_label" => {
                self.test_examples_per_label = parse_num!(key, v, usize)?
            }
            "vocab_size" => self.vocab_size = parse_num!(key, v, usize)?,
            "lexicon_size" => self.lexicon_size = parse_num!(key, v, usize)?,
            "topic_words_per_domain" => {
                self.topic_words_per_domain = parse_num!(key, v, usize)?
            }
            "noise_rate" => self.noise_rate = parse_num!(key, v, f64)?,
            "test_domains" => {
                self.test_domains = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.trim().to_owned()).collect()
                }
            }
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    /// Every field as `(key, value)` strings, fingerprint-relevant first.
    /// The two path fields sit at the end and are excluded from hashing.
    fn entries(&self) -> Vec<(&'static str, String)> {
        let opt_f64 = |o: &Option<f64>| o.map(|x| x.to_string()).unwrap_or_default();
        let opt_usize = |o: &Option<usize>| o.map(|x| x.to_string()).unwrap_or_default();
        vec![
            ("seed", self.seed.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("c_max", self.c_max.to_string()),
            ("max_len", self.max_len.to_string()),
            ("min_count", self.min_count.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("pretrain_batch", self.pretrain_batch.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("inner_steps", self.inner_steps.to_string()),
            ("task_batch_size", self.task_batch_size.to_string()),
            ("meta_iterations", self.meta_iterations.to_string()),
            ("first_order", self.first_order.to_string()),
            ("early_stop", self.early_stop.to_string()),
            ("k_shot", self.k_shot.to_string()),
            ("q_query", self.q_query.to_string()),
            ("shuffle_episode_classes", self.shuffle_episode_classes.to_string()),
            ("eval_alpha", opt_f64(&self.eval_alpha)),
            ("eval_inner_steps", opt_usize(&self.eval_inner_steps)),
            ("num_domains", self.num_domains.to_string()),
            ("tasks_per_domain", self.tasks_per_domain.to_string()),
            ("num_test_domains", self.num_test_domains.to_string()),
            ("examples_per_label", self.examples_per_label.to_string()),
            ("test_examples_per_label", self.test_examples_per_label.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("lexicon_size", self.lexicon_size.to_string()),
            ("topic_words_per_domain", self.topic_words_per_domain.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
            ("test_domains", self.test_domains.join(",")),
            ("data_root", self.data_root.clone()),
            ("out_dir", self.out_dir.clone()),
        ]
    }

    /// Render as a config file (all fields).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    pub fn parse(raw: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                path: origin.to_owned(),
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// FNV-1a hash of the semantic fields, rendered as 16 hex digits. Paths
    /// are excluded so runs into different directories stay comparable.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, v) in self.entries() {
            if k == "data_root" || k == "out_dir" {
                continue;
            }
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        format!("{h:016x}")
    }

    /// The effective test-domain list: explicit when configured, otherwise
    /// the last `num_test_domains` synthetic domain names.
    pub fn effective_test_domains(&self) -> Vec<String> {
        if !self.test_domains.is_empty() {
            return self.test_domains.clone();
        }
        (self.num_domains - self.num_test_domains..self.num_domains)
            .map(|i| format!("d{i:02}"))
            .collect()
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_domains: self.num_domains,
            tasks_per_domain: self.tasks_per_domain,
            num_test_domains: self.num_test_domains,
            examples_per_label: self.examples_per_label,
            test_examples_per_label: self.test_examples_per_label,
            support_per_label: self.k_shot,
            filler_vocab: self.vocab_size,
            lexicon_size: self.lexicon_size,
            topic_words_per_domain: self.topic_words_per_domain,
            noise_rate: self.noise_rate,
            seed: crate::seeds::child_seed(self.seed, "gen-data", 0),
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch,
            learning_rate: self.pretrain_lr,
            mask_rate: self.mask_rate,
            seed: crate::seeds::child_seed(self.seed, "pretrain", 0),
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            inner_steps: self.inner_steps,
            task_batch_size: self.task_batch_size,
            meta_iterations: self.meta_iterations,
            first_order: self.first_order,
            early_stop: self.early_stop,
            seed: crate::seeds::child_seed(self.seed, "metatrain", 0),
        }
    }

    /// Validate every field against its consumer's preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let reject = |reason: String| Err(ConfigError::Invalid { reason });
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return reject("embed_dim and hidden_dim must be positive".into());
        }
        if self.c_max < 2 {
            return reject("c_max must be at least 2".into());
        }
        if self.max_len == 0 {
            return reject("max_len must be at least 1".into());
        }
        if self.min_count == 0 {
            return reject("min_count must be at least 1".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return reject(format!("mask_rate must lie in (0, 1], got {}", self.mask_rate));
        }
        if !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return reject("pretrain_lr must be finite and positive".into());
        }
        if self.pretrain_batch == 0 {
            return reject("pretrain_batch must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return reject("alpha must be finite and >= 0".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return reject("beta must be finite and > 0".into());
        }
        if self.inner_steps == 0 {
            return reject("inner_steps must be at least 1".into());
        }
        if self.task_batch_size == 0 {
            return reject("task_batch_size must be at least 1".into());
        }
        if self.k_shot == 0 {
            return reject("k_shot must be at least 1".into());
        }
        if self.q_query == 0 {
            return reject("q_query must be at least 1".into());
        }
        if let Some(a) = self.eval_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return reject("eval_alpha must be finite and >= 0".into());
            }
        }
        if self.eval_inner_steps == Some(0) {
            return reject("eval_inner_steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return reject(format!("noise_rate must lie in [0, 1], got {}", self.noise_rate));
        }
        if self.num_domains == 0 || self.tasks_per_domain == 0 {
            return reject("need at least one domain and one task per domain".into());
        }
        if self.num_domains < self.num_test_domains + 1 {
            return reject("num_domains must exceed num_test_domains".into());
        }
        if self.vocab_size == 0 || self.lexicon_size == 0 || self.topic_words_per_domain == 0 {
            return reject("vocab_size, lexicon_size, topic_words_per_domain must be positive".into());
        }
        if self.examples_per_label < self.k_shot + self.q_query {
            return reject(format!(
                "examples_per_label ({}) must cover k_shot + q_query ({})",
                self.examples_per_label,
                self.k_shot + self.q_query
            ));
        }
        if self.test_examples_per_label == 0 {
            return reject("test_examples_per_label must be positive".into());
        }
        Ok(())
    }
}
