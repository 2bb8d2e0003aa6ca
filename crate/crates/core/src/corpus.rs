//! Buggy/fixed program pairs and the harness that scores the checker on them.
//!
//! A corpus directory holds one subdirectory per case with `buggy.json`,
//! `fixed.json` and an optional `expect.json` of the form
//! `{"expected_error_node": "x", "expected_iteration": 1}`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use crate::check::{check, ExitReport};
use crate::ir::parse_ir;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusCase {
    pub name: String,
    pub buggy: PathBuf,
    pub fixed: PathBuf,
    pub expected_error_node: Option<String>,
    pub expected_iteration: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Expectation { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every case subdirectory of `dir`, sorted by name.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<CorpusCase>, CorpusError> {
    let mut cases = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut case = CorpusCase {
            name,
            buggy: path.join("buggy.json"),
            fixed: path.join("fixed.json"),
            expected_error_node: None,
            expected_iteration: None,
        };
        let expect = path.join("expect.json");
        if expect.exists() {
            read_expectation(&expect, &mut case)?;
        }
        cases.push(case);
    }
    cases.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(cases)
}

fn read_expectation(path: &Path, case: &mut CorpusCase) -> Result<(), CorpusError> {
    let bad = |message: &str| CorpusError::Expectation {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| bad("expected an object"))?;
    for (key, v) in obj {
        match key.as_str() {
            "expected_error_node" => {
                case.expected_error_node = Some(
                    v.as_str()
                        .ok_or_else(|| bad("node must be a string"))?
                        .to_string(),
                )
            }
            "expected_iteration" => {
                case.expected_iteration = Some(
                    v.as_u64()
                        .ok_or_else(|| bad("iteration must be a positive integer"))?,
                )
            }
            "description" => {}
            other => return Err(bad(&format!("unknown key '{other}'"))),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuggyVerdict {
    Detected,
    /// A diagnostic was raised, but not at the expected node or iteration.
    Mislocated {
        node: String,
        iteration: u64,
    },
    /// False negative.
    Missed,
    Unreadable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixedVerdict {
    Clean,
    FalsePositive { node: String, iteration: u64 },
    Unreadable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub buggy: BuggyVerdict,
    pub fixed: FixedVerdict,
    pub buggy_time: Duration,
    pub fixed_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusReport {
    pub cases: Vec<CaseResult>,
}

impl CorpusReport {
    pub fn detected(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| c.buggy == BuggyVerdict::Detected)
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| !matches!(c.fixed, FixedVerdict::Clean))
            .count()
    }

    /// Detected buggy programs over all buggy programs; 1 for an empty corpus.
    pub fn recall(&self) -> f64 {
        if self.cases.is_empty() {
            return 1.0;
        }
        self.detected() as f64 / self.cases.len() as f64
    }

    /// Detections over all reported errors; 1 when nothing was reported.
    pub fn precision(&self) -> f64 {
        let reported = self.detected() + self.false_positives();
        if reported == 0 {
            return 1.0;
        }
        self.detected() as f64 / reported as f64
    }

    pub fn all_correct(&self) -> bool {
        self.cases
            .iter()
            .all(|c| c.buggy == BuggyVerdict::Detected && c.fixed == FixedVerdict::Clean)
    }
}

fn check_file(path: &Path) -> (Result<ExitReport, String>, Duration) {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => return (Err(format!("{}: {e}", path.display())), Duration::ZERO),
    };
    let start = Instant::now();
    let report = parse_ir(&bytes)
        .map(|ir| check(&ir))
        .map_err(|e| e.to_string());
    (report, start.elapsed())
}

pub fn run_case(case: &CorpusCase) -> CaseResult {
    let (buggy_report, buggy_time) = check_file(&case.buggy);
    let buggy = match buggy_report {
        Err(e) => BuggyVerdict::Unreadable(e),
        Ok(report) => match report.first_diagnostic() {
            None => BuggyVerdict::Missed,
            Some(d) => {
                let node_ok = case
                    .expected_error_node
                    .as_ref()
                    .is_none_or(|n| *n == d.node_id);
                let iter_ok = case.expected_iteration.is_none_or(|i| i == d.iteration);
                if node_ok && iter_ok {
                    BuggyVerdict::Detected
                } else {
                    BuggyVerdict::Mislocated {
                        node: d.node_id.clone(),
                        iteration: d.iteration,
                    }
                }
            }
        },
    };
    let (fixed_report, fixed_time) = check_file(&case.fixed);
    let fixed = match fixed_report {
        Err(e) => FixedVerdict::Unreadable(e),
        Ok(report) => match report.first_diagnostic() {
            Some(d) => FixedVerdict::FalsePositive {
                node: d.node_id.clone(),
                iteration: d.iteration,
            },
            None if report.exit_code() == 0 => FixedVerdict::Clean,
            None => FixedVerdict::Unreadable("a run could not be executed".to_string()),
        },
    };
    CaseResult {
        name: case.name.clone(),
        buggy,
        fixed,
        buggy_time,
        fixed_time,
    }
}

/// Checks every case, one thread per case; results keep the input order.
pub fn run_corpus(cases: &[CorpusCase]) -> CorpusReport {
    let cases = thread::scope(|s| {
        let handles: Vec<_> = cases.iter().map(|c| s.spawn(move || run_case(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("corpus worker panicked"))
            .collect()
    });
    CorpusReport { cases }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUGGY: &str = r#"{"version":1,"graphs":{"g":[
        {"id":"a","op":"placeholder","shape":[2,3]},
        {"id":"b","op":"constant","shape":[4,5]},
        {"id":"m","op":"matmul","inputs":["a","b"]}]},
        "runs":[{"graph":"g","fetches":["m"],"feeds":[{"a":[2,3]}]}]}"#;

    fn write_case(root: &Path, name: &str, buggy: &str, fixed: &str, expect: Option<&str>) {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("buggy.json"), buggy).unwrap();
        fs::write(dir.join("fixed.json"), fixed).unwrap();
        if let Some(e) = expect {
            fs::write(dir.join("expect.json"), e).unwrap();
        }
    }

    fn scratch(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("corpus-test-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn empty_corpus() {
        let dir = scratch("empty");
        let cases = load_corpus_dir(&dir).unwrap();
        let report = run_corpus(&cases);
        assert!(report.cases.is_empty());
        assert!(report.all_correct());
        assert_eq!((report.recall(), report.precision()), (1.0, 1.0));
    }

    #[test]
    fn scores_and_mislabel() {
        let dir = scratch("mixed");
        let fixed = BUGGY.replace("[4,5]", "[3,5]");
        write_case(
            &dir,
            "good",
            BUGGY,
            &fixed,
            Some(r#"{"expected_error_node":"m","expected_iteration":1}"#),
        );
        write_case(&dir, "swapped", &fixed, BUGGY, None);
        write_case(
            &dir,
            "wrong_node",
            BUGGY,
            &fixed,
            Some(r#"{"expected_error_node":"a"}"#),
        );
        let cases = load_corpus_dir(&dir).unwrap();
        assert_eq!(
            cases.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
            ["good", "swapped", "wrong_node"]
        );
        let report = run_corpus(&cases);
        assert_eq!(report.cases[0].buggy, BuggyVerdict::Detected);
        assert_eq!(report.cases[0].fixed, FixedVerdict::Clean);
        assert_eq!(report.cases[1].buggy, BuggyVerdict::Missed);
        assert!(matches!(
            report.cases[1].fixed,
            FixedVerdict::FalsePositive { .. }
        ));
        assert!(matches!(
            report.cases[2].buggy,
            BuggyVerdict::Mislocated { .. }
        ));
        assert_eq!(report.false_positives(), 1);
        assert!((report.recall() - 1.0 / 3.0).abs() < 1e-9);
        assert!((report.precision() - 0.5).abs() < 1e-9);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_expectation_is_an_error() {
        let dir = scratch("expect");
        write_case(&dir, "c", BUGGY, BUGGY, Some(r#"{"expected_node":"m"}"#));
        assert!(matches!(
            load_corpus_dir(&dir),
            Err(CorpusError::Expectation { .. })
        ));
        fs::remove_dir_all(&dir).unwrap();
    }
}
