use std::fs;

use super::*;

fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        num_domains: 8,
        tasks_per_domain: 3,
        num_test_domains: 2,
        examples_per_label: 40,
        test_examples_per_label: 10,
        support_per_label: 5,
        filler_vocab: 50,
        lexicon_size: 8,
        topic_words_per_domain: 4,
        noise_rate: 0.0,
        seed: 77,
    }
}

/// Brute-force reference classifier: count shared-lexicon words and take the
/// majority polarity.
fn lexicon_count_class(text: &str, pos: &[String], neg: &[String]) -> usize {
    let mut p = 0usize;
    let mut n = 0usize;
    for tok in text.split_whitespace() {
        if pos.iter().any(|w| w == tok) {
            p += 1;
        } else if neg.iter().any(|w| w == tok) {
            n += 1;
        }
    }
    usize::from(p > n)
}

#[test]
fn noise_free_labels_match_lexicon_count_oracle() {
    let data = generate_synthetic(&small_config()).unwrap();
    let mut checked = 0usize;
    for task in &data.tasks {
        for ex in task.train.iter().chain(&task.test).chain(task.support.iter().flatten()) {
            let predicted =
                lexicon_count_class(&ex.text, &data.positive_lexicon, &data.negative_lexicon);
            assert_eq!(predicted, ex.class, "oracle disagrees on {:?}", ex.text);
            checked += 1;
        }
    }
    assert!(checked > 2000, "oracle checked too few examples: {checked}");
}

#[test]
fn generator_is_seed_deterministic() {
    let a = generate_synthetic(&small_config()).unwrap();
    let b = generate_synthetic(&small_config()).unwrap();
    assert_eq!(a.corpus, b.corpus);
    assert_eq!(a.tasks, b.tasks);
    let mut different_seed = small_config();
    different_seed.seed = 78;
    let c = generate_synthetic(&different_seed).unwrap();
    assert_ne!(a.corpus, c.corpus);
}

#[test]
fn generator_arithmetic() {
    let data = generate_synthetic(&small_config()).unwrap();
    assert_eq!(data.tasks.len(), 24);
    let labeled_train: usize = data.tasks.iter().map(|t| t.train.len()).sum();
    assert_eq!(labeled_train, 1920);
    assert_eq!(data.split.train_ids().len(), 18);
    assert_eq!(data.split.test_ids().len(), 6);
}

#[test]
fn generator_rejects_degenerate_config() {
    let mut cfg = small_config();
    cfg.lexicon_size = 0;
    assert!(matches!(
        generate_synthetic(&cfg),
        Err(TaskError::DegenerateConfig { .. })
    ));
    let mut cfg = small_config();
    cfg.noise_rate = 1.5;
    assert!(generate_synthetic(&cfg).is_err());
    let mut cfg = small_config();
    cfg.num_domains = cfg.num_test_domains;
    assert!(generate_synthetic(&cfg).is_err());
}

#[test]
fn label_balance_within_two_percent() {
    let mut cfg = small_config();
    cfg.num_domains = 1;
    cfg.tasks_per_domain = 1;
    cfg.num_test_domains = 0;
    cfg.examples_per_label = 500;
    cfg.noise_rate = 0.05;
    let data = generate_synthetic(&cfg).unwrap();
    let task = &data.tasks[0];
    let ones = task.train.iter().filter(|e| e.class == 1).count();
    let frac = ones as f64 / task.train.len() as f64;
    assert!((frac - 0.5).abs() <= 0.02, "label balance {frac}");
}

#[test]
fn corpus_holds_only_training_split_texts() {
    let data = generate_synthetic(&small_config()).unwrap();
    let expected: usize = data
        .tasks
        .iter()
        .filter(|t| !t.is_test)
        .map(|t| t.train.len())
        .sum();
    assert_eq!(data.corpus.len(), expected);
    // No test-domain topic token leaks into the pretraining corpus.
    for text in &data.corpus {
        assert!(!text.contains("d06w") && !text.contains("d07w"), "leak in {text:?}");
    }
}

#[test]
fn full_arsc_mirror_layout_round_trips() {
    let mut cfg = small_config();
    cfg.num_domains = 23;
    cfg.num_test_domains = 4;
    cfg.examples_per_label = 12;
    let data = generate_synthetic(&cfg).unwrap();
    assert_eq!(data.tasks.len(), 69);
    assert_eq!(data.split.test_ids().len(), 12);

    let dir = tempfile::tempdir().unwrap();
    write_layout(dir.path(), &data.tasks).unwrap();
    let test_domains: Vec<String> = (19..23).map(|d| format!("d{d:02}")).collect();
    let (loaded, split) = load_arsc_layout(dir.path(), &test_domains).unwrap();
    assert_eq!(loaded.len(), 69);
    assert_eq!(split.test_ids().len(), 12);
    assert_eq!(split.train_ids().len(), 57);
    assert_eq!(loaded, data.tasks);
}

#[test]
fn loader_rejects_test_task_without_support() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("books.t2.train"), "1\tgood stuff\n-1\tbad stuff\n").unwrap();
    fs::write(dir.path().join("books.t2.test"), "1\tfine\n").unwrap();
    let err = load_arsc_layout(dir.path(), &["books".to_owned()]).unwrap_err();
    assert!(matches!(err, TaskError::MissingSupport { task } if task == "books.t2"));
}

#[test]
fn loader_rejects_malformed_line_with_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("books.t2.train"), "1\tok line\nno tab here\n").unwrap();
    match load_arsc_layout(dir.path(), &[]).unwrap_err() {
        TaskError::MalformedLine { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected error {other:?}"),
    }

    fs::write(dir.path().join("books.t2.train"), "2\tbad label\n").unwrap();
    match load_arsc_layout(dir.path(), &[]).unwrap_err() {
        TaskError::MalformedLine { line, reason, .. } => {
            assert_eq!(line, 1);
            assert!(reason.contains("label"));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn loader_accepts_five_shot_support_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut support = String::new();
    for i in 0..5 {
        support.push_str(&format!("-1\tneg sample {i}\n1\tpos sample {i}\n"));
    }
    fs::write(dir.path().join("dvd.t4.support"), &support).unwrap();
    fs::write(dir.path().join("dvd.t4.test"), "1\tquery one\n-1\tquery two\n").unwrap();
    let (tasks, split) = load_arsc_layout(dir.path(), &["dvd".to_owned()]).unwrap();
    assert_eq!(split.test_ids(), &["dvd.t4".to_owned()]);
    assert_eq!(tasks[0].support.as_ref().unwrap().len(), 10);
    let episode = fixed_test_episode(&tasks[0], 5).unwrap();
    episode.validate(5).unwrap();
}

#[test]
fn split_overlap_rejected() {
    let err = SplitSpec::new(
        vec!["a.t0".to_owned(), "b.t0".to_owned()],
        vec!["b.t0".to_owned()],
    )
    .unwrap_err();
    assert!(matches!(err, TaskError::SplitOverlap { task } if task == "b.t0"));
}

fn sampling_task() -> TaskSpec {
    let mut train = Vec::new();
    for i in 0..8 {
        train.push(LabeledExample { text: format!("neg {i}"), class: 0 });
        train.push(LabeledExample { text: format!("pos {i}"), class: 1 });
    }
    TaskSpec {
        id: "d00.t0".to_owned(),
        domain: "d00".to_owned(),
        labels: vec!["-1".to_owned(), "1".to_owned()],
        is_test: false,
        train,
        test: Vec::new(),
        support: None,
    }
}

#[test]
fn sample_episode_five_shot() {
    let task = sampling_task();
    let episode = sample_episode(&task, 5, 3, 123).unwrap();
    assert_eq!(episode.support.len(), 10);
    assert_eq!(episode.query.len(), 6);
    episode.validate(5).unwrap();
    assert!(!episode.from_test_split);
}

#[test]
fn sample_episode_can_take_whole_class_with_empty_query() {
    let task = sampling_task();
    let episode = sample_episode(&task, 8, 0, 9).unwrap();
    assert_eq!(episode.support.len(), 16);
    assert!(episode.query.is_empty());
    episode.validate(8).unwrap();
}

#[test]
fn sample_episode_reports_insufficient_examples() {
    let task = sampling_task();
    match sample_episode(&task, 8, 1, 4).unwrap_err() {
        TaskError::InsufficientExamples { required, available, .. } => {
            assert_eq!(required, 9);
            assert_eq!(available, 8);
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn sample_episode_is_seed_deterministic() {
    let task = sampling_task();
    assert_eq!(sample_episode(&task, 3, 2, 5).unwrap(), sample_episode(&task, 3, 2, 5).unwrap());
    assert_ne!(sample_episode(&task, 3, 2, 5).unwrap(), sample_episode(&task, 3, 2, 6).unwrap());
}

#[test]
fn class_shuffle_flag_remaps_labels() {
    let task = sampling_task();
    // Find a seed whose shuffle swaps the two classes.
    let episode = (0..64)
        .map(|s| sample_episode_with(&task, 2, 0, s, true).unwrap())
        .find(|e| e.class_map == vec![1, 0])
        .expect("some seed swaps a binary class order");
    for ex in &episode.support {
        let original_is_pos = ex.text.starts_with("pos");
        // Episode class 0 now corresponds to task class 1.
        assert_eq!(ex.class == 0, original_is_pos);
    }
}

/// Over many sampled episodes each example lands in the support set with
/// frequency K/N, within three binomial standard deviations.
#[test]
fn support_membership_frequency_is_uniform() {
    let task = sampling_task();
    let (k, n, samples) = (2usize, 8usize, 10_000usize);
    let probe = "neg 0";
    let mut hits = 0usize;
    for s in 0..samples as u64 {
        let episode = sample_episode(&task, k, 1, s).unwrap();
        if episode.support.iter().any(|e| e.text == probe) {
            hits += 1;
        }
    }
    let p = k as f64 / n as f64;
    let sigma = (p * (1.0 - p) / samples as f64).sqrt();
    let freq = hits as f64 / samples as f64;
    assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq}, expected {p} +- {}", 3.0 * sigma);
}

fn fixed_task(support_per_label: usize, test_per_label: usize) -> TaskSpec {
    let mut support = Vec::new();
    for i in 0..support_per_label {
        support.push(LabeledExample { text: format!("sup neg {i}"), class: 0 });
        support.push(LabeledExample { text: format!("sup pos {i}"), class: 1 });
    }
    let mut test = Vec::new();
    for i in 0..test_per_label {
        test.push(LabeledExample { text: format!("query neg {i}"), class: 0 });
        test.push(LabeledExample { text: format!("query pos {i}"), class: 1 });
    }
    TaskSpec {
        id: "d09.t1".to_owned(),
        domain: "d09".to_owned(),
        labels: vec!["-1".to_owned(), "1".to_owned()],
        is_test: true,
        train: Vec::new(),
        test,
        support: Some(support),
    }
}

#[test]
fn fixed_episode_uses_file_support_and_full_test_split() {
    let task = fixed_task(5, 50);
    let episode = fixed_test_episode(&task, 5).unwrap();
    assert_eq!(episode.support.len(), 10);
    assert_eq!(episode.query.len(), 100);
    assert!(episode.from_test_split);
    episode.validate(5).unwrap();
}

#[test]
fn fixed_episode_rejects_train_task() {
    let mut task = fixed_task(5, 10);
    task.is_test = false;
    assert!(matches!(
        fixed_test_episode(&task, 5),
        Err(TaskError::NotTestTask { .. })
    ));
}

#[test]
fn fixed_episode_rejects_wrong_support_count() {
    let task = fixed_task(4, 10);
    assert!(matches!(
        fixed_test_episode(&task, 5),
        Err(TaskError::SupportCountMismatch { expected: 5, actual: 4, .. })
    ));
}

#[test]
fn fixed_episode_rejects_support_query_overlap() {
    let mut task = fixed_task(5, 10);
    task.test.push(task.support.as_ref().unwrap()[0].clone());
    assert!(matches!(
        fixed_test_episode(&task, 5),
        Err(TaskError::SupportQueryOverlap { .. })
    ));
}

#[test]
fn generated_support_files_have_exact_counts_and_no_query_overlap() {
    let data = generate_synthetic(&small_config()).unwrap();
    for task in data.tasks.iter().filter(|t| t.is_test) {
        let episode = fixed_test_episode(task, 5).unwrap();
        episode.validate(5).unwrap();
    }
}
