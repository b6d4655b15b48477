//! ARSC-style dataset directory: `{domain}.{threshold}.{split}` files with
//! one `label<TAB>text` line per example, labels -1/1, UTF-8, LF endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LabeledExample, SplitSpec, TaskError, TaskSpec};

const LABELS: [&str; 2] = ["-1", "1"];

fn io_err(path: &Path, source: std::io::Error) -> TaskError {
    TaskError::Io { path: path.display().to_string(), source }
}

/// Parse one task file: `label<TAB>text` per line, labels in {-1, 1}
/// mapped to classes {0, 1}.
fn parse_task_file(path: &Path) -> Result<Vec<LabeledExample>, TaskError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let malformed = |reason: &str| TaskError::MalformedLine {
            file: file.clone(),
            line: i + 1,
            reason: reason.to_owned(),
        };
        let (label, text) = line.split_once('\t').ok_or_else(|| malformed("missing TAB separator"))?;
        let class = LABELS
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| malformed(&format!("label {label:?} not in {{-1, 1}}")))?;
        out.push(LabeledExample { text: text.to_owned(), class });
    }
    Ok(out)
}

/// Load every task under `root`. A task exists for each `{domain}.{threshold}`
/// with at least one recognized split file; tasks of a domain listed in
/// `test_domains` form the test split and must provide a support file, all
/// others are training tasks and must provide a train file. Files that do not
/// match the naming scheme are ignored.
pub fn load_arsc_layout(
    root: &Path,
    test_domains: &[String],
) -> Result<(Vec<TaskSpec>, SplitSpec), TaskError> {
    let mut files: BTreeMap<(String, String), BTreeMap<String, std::path::PathBuf>> =
        BTreeMap::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if !entry.file_type().map_err(|e| io_err(root, e))?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut parts = name.rsplitn(3, '.');
        let (Some(split), Some(threshold), Some(domain)) =
            (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        if !["train", "dev", "test", "support"].contains(&split) {
            continue;
        }
        files
            .entry((domain.to_owned(), threshold.to_owned()))
            .or_default()
            .insert(split.to_owned(), entry.path());
    }

    let mut tasks = Vec::new();
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for ((domain, threshold), splits) in files {
        let id = format!("{domain}.{threshold}");
        let is_test = test_domains.contains(&domain);
        let read = |split: &str| -> Result<Vec<LabeledExample>, TaskError> {
            match splits.get(split) {
                Some(path) => parse_task_file(path),
                None => Ok(Vec::new()),
            }
        };
        // Validate dev files when present even though nothing downstream
        // consumes them.
        let _ = read("dev")?;
        let train = read("train")?;
        let test = read("test")?;
        let support = match splits.get("support") {
            Some(path) => Some(parse_task_file(path)?),
            None => None,
        };
        if is_test && support.is_none() {
            return Err(TaskError::MissingSupport { task: id });
        }
        if !is_test && (!splits.contains_key("train") || train.is_empty()) {
            return Err(TaskError::MissingTrain { task: id });
        }
        if is_test {
            test_ids.push(id.clone());
        } else {
            train_ids.push(id.clone());
        }
        tasks.push(TaskSpec {
            id,
            domain,
            labels: LABELS.iter().map(|&s| s.to_owned()).collect(),
            is_test,
            train,
            test,
            support,
        });
    }
    let split = SplitSpec::new(train_ids, test_ids)?;
    Ok((tasks, split))
}

fn render(examples: &[LabeledExample], labels: &[String]) -> String {
    let mut out = String::new();
    for ex in examples {
        writeln!(out, "{}\t{}", labels[ex.class], ex.text).expect("string write");
    }
    out
}

/// Write tasks back out in the same layout `load_arsc_layout` reads, so the
/// generator and a real dataset share one consumer path.
pub fn write_layout(root: &Path, tasks: &[TaskSpec]) -> Result<(), TaskError> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    for task in tasks {
        let write = |split: &str, examples: &[LabeledExample]| -> Result<(), TaskError> {
            let path = root.join(format!("{}.{split}", task.id));
            fs::write(&path, render(examples, &task.labels)).map_err(|e| io_err(&path, e))
        };
        if !task.train.is_empty() {
            write("train", &task.train)?;
        }
        if !task.test.is_empty() {
            write("test", &task.test)?;
        }
        if let Some(support) = &task.support {
            write("support", support)?;
        }
    }
    Ok(())
}
