//! End-to-end tests of the `mtm` binary: commands, flags, artifacts, and
//! exit codes (0 success, 1 validation, 2 runtime/divergence).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtm::checkpoint;
use mtm::config::Config;
use mtm::seeds;
use mtm::textmodel::{EncoderDims, EncoderParams, Vocab};

fn mtm_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtm"))
}

fn run(args: &[&str]) -> Output {
    mtm_bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(expected),
        "exit code mismatch\nstdout: {stdout}\nstderr: {stderr}"
    );
}

/// A small-budget config written to disk, returning (config path, data dir,
/// out dir).
fn small_setup(root: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let data = root.join("data");
    let out = root.join("out");
    let cfg_path = root.join("run.cfg");
    let cfg = format!(
        "seed = {seed}\n\
         data_root = {}\n\
         out_dir = {}\n\
         num_domains = 4\n\
         num_test_domains = 1\n\
         examples_per_label = 12\n\
         test_examples_per_label = 8\n\
         vocab_size = 60\n\
         lexicon_size = 6\n\
         topic_words_per_domain = 4\n\
         pretrain_steps = 150\n\
         meta_iterations = 5\n\
         embed_dim = 6\n\
         hidden_dim = 8\n",
        data.display(),
        out.display()
    );
    std::fs::write(&cfg_path, cfg).unwrap();
    (cfg_path, data, out)
}

#[test]
fn gen_data_writes_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&["gen-data", "--out", data.to_str().unwrap()]);
    assert_code(&out, 0);

    let names: Vec<String> = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    // Default config: 8 train domains x 3 tasks plus 2 test domains x 3
    // tasks with fixed supports, and the raw corpus.
    let train_split_files = (0..8)
        .flat_map(|d| (0..3).map(move |t| format!("d{d:02}.t{t}.train")))
        .filter(|n| names.contains(n))
        .count();
    assert_eq!(train_split_files, 24, "missing train-split task files");
    for d in 8..10 {
        for t in 0..3 {
            assert!(names.contains(&format!("d{d:02}.t{t}.support")), "missing support d{d:02}.t{t}");
            assert!(names.contains(&format!("d{d:02}.t{t}.test")), "missing test d{d:02}.t{t}");
        }
    }
    assert!(names.contains(&"corpus.txt".to_owned()));
}

#[test]
fn gen_data_is_byte_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for target in [&a, &b] {
        let out = run(&[
            "gen-data",
            "--out",
            target.to_str().unwrap(),
            "--seed",
            "9",
            "--set",
            "num_domains=4",
            "--set",
            "num_test_domains=1",
            "--set",
            "examples_per_label=12",
        ]);
        assert_code(&out, 0);
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let fa = std::fs::read(a.join(&name)).unwrap();
        let fb = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(fa, fb, "file {name} differs between identical runs");
    }
}

#[test]
fn gen_data_refuses_nonempty_directory_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("existing.txt"), "keep me").unwrap();

    let out = run(&["gen-data", "--out", data.to_str().unwrap()]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not empty"));

    let out = run(&["gen-data", "--out", data.to_str().unwrap(), "--force"]);
    assert_code(&out, 0);
}

#[test]
fn invalid_config_rejected_before_any_write() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "noise_rate=1.5",
    ]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise_rate"));
    assert!(!data.exists(), "validation failure must not create outputs");
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let out = run(&["gen-data", "--set", "nonsense=1"]);
    assert_code(&out, 1);
}

#[test]
fn pretrain_zero_steps_equals_seeded_random_init() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, data, out_dir) = small_setup(dir.path(), 21);
    assert_code(&run(&["gen-data", "--config", cfg_path.to_str().unwrap()]), 0);
    assert_code(
        &run(&[
            "pretrain",
            "--config",
            cfg_path.to_str().unwrap(),
            "--set",
            "pretrain_steps=0",
        ]),
        0,
    );

    let ckpt = checkpoint::load(&out_dir.join("pretrained.ckpt")).unwrap();
    // Rebuild the reference initialization from the corpus the same way.
    let corpus: Vec<String> = std::fs::read_to_string(data.join("corpus.txt"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let dims = EncoderDims { vocab: vocab.size(), embed: 6, hidden: 8, classes_max: 2 };
    let reference = EncoderParams::init(dims, seeds::child_seed(21, "init", 0));
    let loaded = ckpt.to_params().unwrap();
    for ((_, a), (_, b)) in loaded.tensors().into_iter().zip(reference.tensors()) {
        for (&x, &y) in a.values().iter().zip(b.values()) {
            assert_eq!(x as f32, y as f32, "checkpoint differs from the seeded init");
        }
    }
    // Trace exists and is empty for zero steps.
    let trace = std::fs::read_to_string(out_dir.join("pretrain_trace.tsv")).unwrap();
    assert!(trace.is_empty());
}

#[test]
fn pretrain_trace_starts_at_log_vocab_and_reload_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, data, out_dir) = small_setup(dir.path(), 5);
    assert_code(&run(&["gen-data", "--config", cfg_path.to_str().unwrap()]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_path.to_str().unwrap()]), 0);

    let corpus: Vec<String> = std::fs::read_to_string(data.join("corpus.txt"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    let vocab_size = Vocab::build(&corpus, 1).unwrap().size() as f64;
    let trace = std::fs::read_to_string(out_dir.join("pretrain_trace.tsv")).unwrap();
    let first_line = trace.lines().next().unwrap();
    let (step, loss) = first_line.split_once('\t').unwrap();
    assert_eq!(step, "0");
    let loss: f64 = loss.parse().unwrap();
    assert!(
        (loss - vocab_size.ln()).abs() < 1e-9,
        "first trace entry {loss} vs ln|V| {}",
        vocab_size.ln()
    );

    // Reload -> save produces identical bytes.
    let path = out_dir.join("pretrained.ckpt");
    let bytes = std::fs::read(&path).unwrap();
    let reloaded = checkpoint::load(&path).unwrap();
    let path2 = out_dir.join("pretrained-copy.ckpt");
    checkpoint::save(&reloaded, &path2).unwrap();
    assert_eq!(bytes, std::fs::read(&path2).unwrap());

    // The vocab file interface is written alongside.
    let vocab_file = std::fs::read_to_string(out_dir.join("vocab.tsv")).unwrap();
    assert!(vocab_file.starts_with("<pad>\t0\n<unk>\t1\n<mask>\t2\n"));
}

#[test]
fn pretrain_reads_only_the_corpus_file() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, data, _) = small_setup(dir.path(), 13);
    assert_code(&run(&["gen-data", "--config", cfg_path.to_str().unwrap()]), 0);
    // Remove every labeled task file; only corpus.txt remains.
    for entry in std::fs::read_dir(&data).unwrap() {
        let p = entry.unwrap().path();
        if p.file_name().unwrap() != "corpus.txt" {
            std::fs::remove_file(p).unwrap();
        }
    }
    assert_code(&run(&["pretrain", "--config", cfg_path.to_str().unwrap()]), 0);
}

#[test]
fn pretrain_divergence_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, _) = small_setup(dir.path(), 3);
    assert_code(&run(&["gen-data", "--config", cfg_path.to_str().unwrap()]), 0);
    let out = run(&[
        "pretrain",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "pretrain_lr=1e160",
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn metatrain_zero_iterations_preserves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 8);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_arg]), 0);
    let pretrained = out_dir.join("pretrained.ckpt");

    // init = pretrained checkpoint, zero iterations.
    assert_code(
        &run(&[
            "metatrain",
            "--config",
            cfg_arg,
            "--init",
            pretrained.to_str().unwrap(),
            "--set",
            "meta_iterations=0",
        ]),
        0,
    );
    let meta = checkpoint::load(&out_dir.join("metatrained.ckpt")).unwrap();
    let pre = checkpoint::load(&pretrained).unwrap();
    assert_eq!(meta.tensors, pre.tensors, "zero-iteration run must keep parameters");
    assert_eq!(meta.iteration, 0);

    // init = random, zero iterations: the seeded random parameters.
    assert_code(
        &run(&[
            "metatrain",
            "--config",
            cfg_arg,
            "--init",
            "random",
            "--set",
            "meta_iterations=0",
        ]),
        0,
    );
    let meta = checkpoint::load(&out_dir.join("metatrained.ckpt")).unwrap();
    let dims = EncoderDims {
        vocab: meta.vocab.size(),
        embed: 6,
        hidden: 8,
        classes_max: 2,
    };
    let reference = EncoderParams::init(dims, seeds::child_seed(8, "init", 0));
    let loaded = meta.to_params().unwrap();
    for ((_, a), (_, b)) in loaded.tensors().into_iter().zip(reference.tensors()) {
        for (&x, &y) in a.values().iter().zip(b.values()) {
            assert_eq!(x as f32, y as f32);
        }
    }
}

#[test]
fn metatrain_trace_counter_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 11);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_arg]), 0);
    assert_code(
        &run(&[
            "metatrain",
            "--config",
            cfg_arg,
            "--init",
            out_dir.join("pretrained.ckpt").to_str().unwrap(),
        ]),
        0,
    );
    let trace = std::fs::read_to_string(out_dir.join("meta_trace.tsv")).unwrap();
    let iters: Vec<u64> =
        trace.lines().map(|l| l.split_once('\t').unwrap().0.parse().unwrap()).collect();
    assert_eq!(iters, (0..5).collect::<Vec<u64>>());
}

#[test]
fn metatrain_rejects_dimension_mismatch_with_both_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 4);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    // Pretrain with a different embedding width.
    assert_code(&run(&["pretrain", "--config", cfg_arg, "--set", "embed_dim=4"]), 0);
    let out = run(&[
        "metatrain",
        "--config",
        cfg_arg,
        "--init",
        out_dir.join("pretrained.ckpt").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.matches("fingerprint").count() >= 2, "stderr: {stderr}");
}

#[test]
fn eval_report_shape_purity_and_degenerate_t_test() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 15);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_arg]), 0);
    let ckpt = out_dir.join("metatrained.ckpt");
    assert_code(
        &run(&[
            "metatrain",
            "--config",
            cfg_arg,
            "--init",
            out_dir.join("pretrained.ckpt").to_str().unwrap(),
        ]),
        0,
    );

    // Single-model evaluation: one row per test task (1 domain x 3 tasks).
    assert_code(&run(&["eval", "--config", cfg_arg, "--model", ckpt.to_str().unwrap()]), 0);
    let report = std::fs::read_to_string(out_dir.join("eval_report.tsv")).unwrap();
    let rows: Vec<&str> =
        report.lines().filter(|l| !l.starts_with('#') && !l.starts_with("mean")).collect();
    assert_eq!(rows.len(), 3, "report: {report}");
    assert!(report.lines().last().unwrap().starts_with("mean\t"));

    // Purity: a second run writes an identical report.
    assert_code(&run(&["eval", "--config", cfg_arg, "--model", ckpt.to_str().unwrap()]), 0);
    let report2 = std::fs::read_to_string(out_dir.join("eval_report.tsv")).unwrap();
    assert_eq!(report, report2);

    // Ten paired identical runs: t = 0, p = 1.
    let mut args: Vec<String> =
        vec!["eval".into(), "--config".into(), cfg_arg.to_owned()];
    for _ in 0..10 {
        args.push("--model".into());
        args.push(ckpt.display().to_string());
    }
    for _ in 0..10 {
        args.push("--baseline".into());
        args.push(ckpt.display().to_string());
    }
    let out = mtm_bin().args(&args).output().unwrap();
    assert_code(&out, 0);
    let ttest = std::fs::read_to_string(out_dir.join("ttest.tsv")).unwrap();
    assert!(ttest.contains("t\t0\n"), "ttest: {ttest}");
    assert!(ttest.contains("p\t1\n"), "ttest: {ttest}");
}

#[test]
fn eval_validates_model_and_baseline_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, _) = small_setup(dir.path(), 2);
    let cfg_arg = cfg_path.to_str().unwrap();
    let out = run(&[
        "eval",
        "--config",
        cfg_arg,
        "--model",
        "a.ckpt",
        "--model",
        "b.ckpt",
        "--baseline",
        "c.ckpt",
    ]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("equally many"));
}

#[test]
fn missing_corpus_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, data, _) = small_setup(dir.path(), 2);
    std::fs::create_dir_all(&data).unwrap();
    let out = run(&["pretrain", "--config", cfg_path.to_str().unwrap()]);
    assert_code(&out, 1);
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn full_pipeline_runs_from_one_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 33);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_arg]), 0);
    assert_code(
        &run(&[
            "metatrain",
            "--config",
            cfg_arg,
            "--init",
            out_dir.join("pretrained.ckpt").to_str().unwrap(),
        ]),
        0,
    );
    let out = run(&[
        "eval",
        "--config",
        cfg_arg,
        "--model",
        out_dir.join("metatrained.ckpt").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean accuracy"));
}

#[test]
fn config_fingerprint_is_recorded_in_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _, out_dir) = small_setup(dir.path(), 44);
    let cfg_arg = cfg_path.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg_arg]), 0);
    assert_code(&run(&["pretrain", "--config", cfg_arg]), 0);
    let ckpt = checkpoint::load(&out_dir.join("pretrained.ckpt")).unwrap();
    let expected = Config::from_file(&cfg_path).unwrap().fingerprint();
    assert_eq!(ckpt.fingerprint, expected);
}
