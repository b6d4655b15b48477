//! `mtm` command line: gen-data, pretrain, metatrain, eval.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtm::config::Config;
use mtm::pipeline::{
    command_eval, command_gen_data, command_metatrain, command_pretrain, CliError, InitSource,
};

#[derive(Parser)]
#[command(
    name = "mtm",
    about = "Meta-pretraining then meta-learning for few-shot text classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Configuration file (key = value lines); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the command's output directory (gen-data: the dataset
    /// directory, otherwise the artifact directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Override any config key, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark dataset (ARSC-style layout + corpus).
    GenData(Common),
    /// Unsupervised masked-token pretraining on the raw corpus.
    Pretrain(Common),
    /// Episodic meta-training from a pretrained checkpoint or from scratch.
    Metatrain {
        #[command(flatten)]
        common: Common,
        /// "random" or the path of a pretrained checkpoint.
        #[arg(long, value_name = "PATH|random")]
        init: String,
    },
    /// Few-shot evaluation of checkpoints on the fixed test episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint(s); repeat for seed-fold runs.
        #[arg(long = "model", value_name = "PATH", required = true)]
        models: Vec<PathBuf>,
        /// Baseline checkpoint(s) paired with the models for the t-test.
        #[arg(long = "baseline", value_name = "PATH")]
        baselines: Vec<PathBuf>,
    },
}

fn build_config(common: &Common, out_overrides_data_root: bool) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path).map_err(|e| CliError::Validation(e.to_string()))?,
        None => Config::default(),
    };
    for pair in &common.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("--set expects KEY=VALUE, got {pair:?}"))
        })?;
        cfg.set(key.trim(), value.trim()).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        let dir = out.display().to_string();
        if out_overrides_data_root {
            cfg.data_root = dir;
        } else {
            cfg.out_dir = dir;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(common) => {
            let cfg = build_config(common, true)?;
            let summary = command_gen_data(&cfg, common.force)?;
            println!(
                "wrote {} tasks ({} test) and a {}-line corpus to {}",
                summary.tasks,
                summary.test_tasks,
                summary.corpus_lines,
                summary.root.display()
            );
        }
        Command::Pretrain(common) => {
            let cfg = build_config(common, false)?;
            let path = command_pretrain(&cfg)?;
            println!("pretrained checkpoint: {}", path.display());
        }
        Command::Metatrain { common, init } => {
            let cfg = build_config(common, false)?;
            let path = command_metatrain(&cfg, &InitSource::parse(init))?;
            println!("meta-trained checkpoint: {}", path.display());
        }
        Command::Eval { common, models, baselines } => {
            let cfg = build_config(common, false)?;
            let outcome = command_eval(&cfg, models, baselines)?;
            for (i, r) in outcome.model_reports.iter().enumerate() {
                println!("model {i}: mean accuracy {:.4} over {} tasks", r.mean_accuracy, r.rows.len());
            }
            for (i, r) in outcome.baseline_reports.iter().enumerate() {
                println!(
                    "baseline {i}: mean accuracy {:.4} over {} tasks",
                    r.mean_accuracy,
                    r.rows.len()
                );
            }
            if let Some(t) = &outcome.ttest {
                println!(
                    "paired t-test: t = {:.4}, p = {:.6}, n = {}{}",
                    t.t,
                    t.p,
                    t.n,
                    if t.degenerate_variance { " (degenerate variance)" } else { "" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
