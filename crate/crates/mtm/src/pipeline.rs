//! The four pipeline commands behind the CLI: gen-data, pretrain, metatrain,
//! eval. Each validates the full configuration before touching the
//! filesystem; errors are classified as validation (exit code 1) or runtime
//! (exit code 2).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, Checkpoint, Stage};
use crate::config::Config;
use crate::eval::{evaluate_suite, paired_t_test, EvalReport, TTestResult};
use crate::metalearn::{meta_train, EpisodeSettings, MetaError};
use crate::pretrain::{pretrain_run, PretrainError};
use crate::seeds;
use crate::tasks::{generate_synthetic, load_arsc_layout, write_layout, TaskSpec};
use crate::textmodel::{encode, EncoderDims, EncoderParams, TokenSeq, Vocab};

/// Command failure, carrying the process exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

const CORPUS_FILE: &str = "corpus.txt";

pub fn pretrained_checkpoint_path(cfg: &Config) -> PathBuf {
    Path::new(&cfg.out_dir).join("pretrained.ckpt")
}

pub fn metatrained_checkpoint_path(cfg: &Config) -> PathBuf {
    Path::new(&cfg.out_dir).join("metatrained.ckpt")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

fn ensure_out_dir(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn render_trace(trace: &[(u64, f64)]) -> String {
    let mut out = String::new();
    for (step, loss) in trace {
        writeln!(out, "{step}\t{loss}").expect("string write");
    }
    out
}

/// Summary of a generated dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSummary {
    pub root: PathBuf,
    pub tasks: usize,
    pub test_tasks: usize,
    pub corpus_lines: usize,
}

/// Generate the synthetic benchmark into `data_root` (ARSC layout plus the
/// raw `corpus.txt`). Refuses a nonempty target unless `force` is set; the
/// config is fully validated before anything is written.
pub fn command_gen_data(cfg: &Config, force: bool) -> Result<GenDataSummary, CliError> {
    cfg.validate().map_err(validation)?;
    let root = PathBuf::from(&cfg.data_root);
    if root.exists() {
        let occupied = std::fs::read_dir(&root)
            .map_err(|e| runtime(format!("reading {}: {e}", root.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(validation(format!(
                "output directory {} is not empty (use --force to overwrite)",
                root.display()
            )));
        }
    }
    let data = generate_synthetic(&cfg.synthetic()).map_err(validation)?;

    std::fs::create_dir_all(&root)
        .map_err(|e| runtime(format!("creating {}: {e}", root.display())))?;
    write_layout(&root, &data.tasks).map_err(runtime)?;
    let mut corpus_text = data.corpus.join("\n");
    corpus_text.push('\n');
    write_file(&root.join(CORPUS_FILE), corpus_text)?;

    Ok(GenDataSummary {
        root,
        tasks: data.tasks.len(),
        test_tasks: data.split.test_ids().len(),
        corpus_lines: data.corpus.len(),
    })
}

/// Read the raw pretraining corpus. This is the only dataset file the
/// pretraining command touches: labels never enter stage 1.
fn read_corpus(cfg: &Config) -> Result<Vec<String>, CliError> {
    let path = Path::new(&cfg.data_root).join(CORPUS_FILE);
    let raw = std::fs::read_to_string(&path).map_err(|e| {
        validation(format!("cannot read corpus {}: {e} (run gen-data first?)", path.display()))
    })?;
    Ok(raw.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}

fn build_vocab(cfg: &Config) -> Result<(Vec<String>, Vocab), CliError> {
    let corpus = read_corpus(cfg)?;
    let vocab = Vocab::build(&corpus, cfg.min_count).map_err(validation)?;
    Ok((corpus, vocab))
}

fn dims_for(cfg: &Config, vocab: &Vocab) -> EncoderDims {
    EncoderDims {
        vocab: vocab.size(),
        embed: cfg.embed_dim,
        hidden: cfg.hidden_dim,
        classes_max: cfg.c_max,
    }
}

/// The seeded random initialization shared by `pretrain` and
/// `metatrain --init random`, so the pretraining ablation compares two paths
/// from the same starting point.
fn random_init(cfg: &Config, dims: EncoderDims) -> EncoderParams {
    EncoderParams::init(dims, seeds::child_seed(cfg.seed, "init", 0))
}

/// Stage 1: build the vocabulary, pretrain on the raw corpus, and save the
/// checkpoint plus its loss trace and vocabulary file.
pub fn command_pretrain(cfg: &Config) -> Result<PathBuf, CliError> {
    cfg.validate().map_err(validation)?;
    let (corpus, vocab) = build_vocab(cfg)?;
    let encoded: Vec<TokenSeq> = corpus
        .iter()
        .map(|t| encode(t, &vocab, cfg.max_len))
        .collect::<Result<_, _>>()
        .map_err(validation)?;
    let dims = dims_for(cfg, &vocab);
    let params = random_init(cfg, dims);

    let (trained, trace) = pretrain_run(&encoded, params, &cfg.pretrain()).map_err(|e| match e {
        PretrainError::Diverged { .. } => runtime(e),
        PretrainError::EmptyCorpus | PretrainError::InvalidRate { .. } => validation(e),
        other => runtime(other),
    })?;

    let out = ensure_out_dir(cfg)?;
    let ckpt = Checkpoint::from_params(
        vocab.clone(),
        &trained,
        Stage::Pretrained,
        cfg.fingerprint(),
        cfg.pretrain_steps,
    );
    let path = pretrained_checkpoint_path(cfg);
    checkpoint::save(&ckpt, &path).map_err(runtime)?;
    write_file(&out.join("pretrain_trace.tsv"), render_trace(&trace))?;
    vocab.save(&out.join("vocab.tsv")).map_err(runtime)?;
    Ok(path)
}

/// Initialization source for meta-training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitSource {
    /// Seeded random parameters: the scratch-MAML ablation.
    Random,
    /// A pretrained checkpoint: the full pipeline.
    Checkpoint(PathBuf),
}

impl InitSource {
    /// `"random"` or a checkpoint path.
    pub fn parse(s: &str) -> Self {
        if s == "random" {
            InitSource::Random
        } else {
            InitSource::Checkpoint(PathBuf::from(s))
        }
    }
}

fn load_dataset(cfg: &Config) -> Result<(Vec<TaskSpec>, Vocab), CliError> {
    let (_, vocab) = build_vocab(cfg)?;
    let (tasks, _split) =
        load_arsc_layout(Path::new(&cfg.data_root), &cfg.effective_test_domains())
            .map_err(validation)?;
    Ok((tasks, vocab))
}

fn check_checkpoint_compat(
    cfg: &Config,
    ckpt: &Checkpoint,
    vocab: &Vocab,
    params: &EncoderParams,
) -> Result<(), CliError> {
    if ckpt.vocab != *vocab {
        return Err(validation(format!(
            "checkpoint vocabulary ({} entries, fingerprint {}) does not match the dataset \
             vocabulary ({} entries, config fingerprint {})",
            ckpt.vocab.size(),
            ckpt.fingerprint,
            vocab.size(),
            cfg.fingerprint()
        )));
    }
    let d = params.dims;
    if d.embed != cfg.embed_dim || d.hidden != cfg.hidden_dim || d.classes_max != cfg.c_max {
        return Err(validation(format!(
            "checkpoint dims (embed {}, hidden {}, c_max {}; fingerprint {}) do not match the \
             config (embed {}, hidden {}, c_max {}; fingerprint {})",
            d.embed,
            d.hidden,
            d.classes_max,
            ckpt.fingerprint,
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.c_max,
            cfg.fingerprint()
        )));
    }
    Ok(())
}

/// Stage 2: meta-train from a pretrained checkpoint or from the seeded
/// random initialization, and save the meta-trained checkpoint plus trace.
pub fn command_metatrain(cfg: &Config, init: &InitSource) -> Result<PathBuf, CliError> {
    cfg.validate().map_err(validation)?;
    let (tasks, vocab) = load_dataset(cfg)?;
    let dims = dims_for(cfg, &vocab);

    let theta0 = match init {
        InitSource::Random => random_init(cfg, dims),
        InitSource::Checkpoint(path) => {
            let ckpt = checkpoint::load(path).map_err(validation)?;
            let params = ckpt.to_params().map_err(validation)?;
            check_checkpoint_compat(cfg, &ckpt, &vocab, &params)?;
            params
        }
    };

    let train_tasks: Vec<TaskSpec> = tasks.into_iter().filter(|t| !t.is_test).collect();
    // Episode budget must hold for every training task before work starts.
    for task in &train_tasks {
        for (class, bucket) in task.train_indices_by_class().iter().enumerate() {
            if bucket.len() < cfg.k_shot + cfg.q_query {
                return Err(validation(format!(
                    "task {} class {class} has {} examples, episodes need k+q = {}",
                    task.id,
                    bucket.len(),
                    cfg.k_shot + cfg.q_query
                )));
            }
        }
    }

    let episode_cfg = EpisodeSettings {
        k: cfg.k_shot,
        q: cfg.q_query,
        max_len: cfg.max_len,
        shuffle_classes: cfg.shuffle_episode_classes,
    };
    let state = meta_train(theta0, &train_tasks, &cfg.hyper(), &vocab, &episode_cfg).map_err(
        |e| match e {
            MetaError::Diverged { .. } | MetaError::NonFiniteInnerLoss { .. } => runtime(e),
            other => validation(other),
        },
    )?;

    let out = ensure_out_dir(cfg)?;
    let ckpt = Checkpoint::from_params(
        vocab,
        &state.params,
        Stage::MetaTrained,
        cfg.fingerprint(),
        state.iteration,
    );
    let path = metatrained_checkpoint_path(cfg);
    checkpoint::save(&ckpt, &path).map_err(runtime)?;
    write_file(&out.join("meta_trace.tsv"), render_trace(&state.loss_trace))?;
    Ok(path)
}

/// Everything `command_eval` produces.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub model_reports: Vec<EvalReport>,
    pub baseline_reports: Vec<EvalReport>,
    pub ttest: Option<TTestResult>,
}

fn evaluate_checkpoint(
    cfg: &Config,
    path: &Path,
    test_tasks: &[TaskSpec],
    vocab: &Vocab,
) -> Result<EvalReport, CliError> {
    let ckpt = checkpoint::load(path).map_err(validation)?;
    let params = ckpt.to_params().map_err(validation)?;
    check_checkpoint_compat(cfg, &ckpt, vocab, &params)?;
    let alpha = cfg.eval_alpha.unwrap_or(cfg.alpha);
    let inner_steps = cfg.eval_inner_steps.unwrap_or(cfg.inner_steps);
    let fingerprint = format!(
        "config={} checkpoint={} stage={:?} iteration={}",
        cfg.fingerprint(),
        ckpt.fingerprint,
        ckpt.stage,
        ckpt.iteration
    );
    evaluate_suite(
        &params,
        test_tasks,
        cfg.k_shot,
        alpha,
        inner_steps,
        vocab,
        cfg.max_len,
        &fingerprint,
    )
    .map_err(validation)
}

/// Evaluate model checkpoints on every test task's fixed episode; with an
/// equally long baseline list, additionally run the paired t-test over the
/// per-checkpoint mean accuracies.
pub fn command_eval(
    cfg: &Config,
    models: &[PathBuf],
    baselines: &[PathBuf],
) -> Result<EvalOutcome, CliError> {
    cfg.validate().map_err(validation)?;
    if models.is_empty() {
        return Err(validation("eval needs at least one --model checkpoint".to_owned()));
    }
    if !baselines.is_empty() && baselines.len() != models.len() {
        return Err(validation(format!(
            "paired evaluation needs equally many models and baselines, got {} vs {}",
            models.len(),
            baselines.len()
        )));
    }
    let (tasks, vocab) = load_dataset(cfg)?;
    let test_tasks: Vec<TaskSpec> = tasks.into_iter().filter(|t| t.is_test).collect();
    if test_tasks.is_empty() {
        return Err(validation("dataset has no test tasks to evaluate".to_owned()));
    }

    let model_reports: Vec<EvalReport> = models
        .iter()
        .map(|p| evaluate_checkpoint(cfg, p, &test_tasks, &vocab))
        .collect::<Result<_, _>>()?;
    let baseline_reports: Vec<EvalReport> = baselines
        .iter()
        .map(|p| evaluate_checkpoint(cfg, p, &test_tasks, &vocab))
        .collect::<Result<_, _>>()?;

    let ttest = if baseline_reports.len() >= 2 {
        let a: Vec<f64> = model_reports.iter().map(|r| r.mean_accuracy).collect();
        let b: Vec<f64> = baseline_reports.iter().map(|r| r.mean_accuracy).collect();
        Some(paired_t_test(&a, &b).map_err(validation)?)
    } else {
        None
    };

    let out = ensure_out_dir(cfg)?;
    if model_reports.len() == 1 && baseline_reports.is_empty() {
        write_file(&out.join("eval_report.tsv"), model_reports[0].to_text())?;
    } else {
        for (i, r) in model_reports.iter().enumerate() {
            write_file(&out.join(format!("eval_model_{i}.tsv")), r.to_text())?;
        }
        for (i, r) in baseline_reports.iter().enumerate() {
            write_file(&out.join(format!("eval_baseline_{i}.tsv")), r.to_text())?;
        }
    }
    if let Some(t) = &ttest {
        let text = format!(
            "t\t{}\np\t{}\nn\t{}\ndegenerate_variance\t{}\n",
            t.t, t.p, t.n, t.degenerate_variance
        );
        write_file(&out.join("ttest.tsv"), text)?;
    }
    Ok(EvalOutcome { model_reports, baseline_reports, ttest })
}
