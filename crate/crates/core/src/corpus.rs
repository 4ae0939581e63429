//! Problem, solution and unit-test pools.
//!
//! A corpus is read from three line-delimited JSON files (one record per
//! line). Solutions and tests are grouped per problem into pools whose order
//! is the order of the records in their file: the `i`-th solution and the
//! `j`-th test of a pool are row `i` and column `j` of every verdict matrix
//! built from it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {kind} references unknown problem_id {problem_id:?}")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        problem_id: String,
    },
    #[error("{path}:{line}: duplicate {kind} id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: String,
    },
}

/// Label of a candidate solution. `Unknown` until gold execution or an
/// explicit corpus annotation says otherwise; serialized as `null`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionLabel {
    Correct,
    Incorrect,
    #[default]
    Unknown,
}

/// Label of a unit test, assigned by the quality module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestLabel {
    Valid,
    Invalid,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Structured,
    CodeBlock,
}

/// One (input, expected output) pair of a structured test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub input_args: Vec<serde_json::Value>,
    pub expected_output: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    /// Filled from the enclosing problem for gold tests that omit it.
    #[serde(default)]
    pub problem_id: String,
    pub test_id: String,
    pub kind: TestKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, with = "nullable")]
    pub label: TestLabel,
}

impl TestSpec {
    pub fn structured(problem_id: &str, test_id: &str, cases: Vec<TestCase>) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            test_id: test_id.to_string(),
            kind: TestKind::Structured,
            cases,
            code: None,
            label: TestLabel::Unknown,
        }
    }

    pub fn code_block(problem_id: &str, test_id: &str, code: impl Into<String>) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            test_id: test_id.to_string(),
            kind: TestKind::CodeBlock,
            cases: Vec::new(),
            code: Some(code.into()),
            label: TestLabel::Unknown,
        }
    }

    /// Problems with the payload, or `None` when exactly the payload matching
    /// `kind` is populated.
    pub fn payload_problem(&self) -> Option<&'static str> {
        let has_cases = !self.cases.is_empty();
        let has_code = self.code.as_deref().is_some_and(|c| !c.trim().is_empty());
        match (self.kind, has_cases, has_code) {
            (_, false, false) => Some("test has neither cases nor code"),
            (_, true, true) => Some("test has both cases and code"),
            (TestKind::Structured, false, true) => Some("structured test has no cases"),
            (TestKind::CodeBlock, true, false) => Some("code_block test has no code"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub problem_id: String,
    pub prompt: String,
    pub entry_point: String,
    #[serde(default)]
    pub gold_tests: Vec<TestSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub problem_id: String,
    pub solution_id: String,
    pub source_code: String,
    #[serde(default, with = "nullable")]
    pub label: SolutionLabel,
}

/// A fully cross-referenced corpus. Every problem has a (possibly empty)
/// solution pool and test pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub problems: BTreeMap<String, ProblemRecord>,
    pub solutions: BTreeMap<String, Vec<SolutionRecord>>,
    pub tests: BTreeMap<String, Vec<TestSpec>>,
}

impl Corpus {
    pub fn problem(&self, problem_id: &str) -> Option<&ProblemRecord> {
        self.problems.get(problem_id)
    }

    pub fn solution_pool(&self, problem_id: &str) -> &[SolutionRecord] {
        self.solutions.get(problem_id).map_or(&[], Vec::as_slice)
    }

    pub fn test_pool(&self, problem_id: &str) -> &[TestSpec] {
        self.tests.get(problem_id).map_or(&[], Vec::as_slice)
    }

    pub fn problem_ids(&self) -> impl Iterator<Item = &str> {
        self.problems.keys().map(String::as_str)
    }

    /// Builds a corpus from in-memory records with the same checks as
    /// [`load_corpus`]. Line numbers in errors are record positions (1-based).
    pub fn from_records(
        problems: Vec<ProblemRecord>,
        solutions: Vec<SolutionRecord>,
        tests: Vec<TestSpec>,
    ) -> Result<Self, CorpusError> {
        let mem = PathBuf::from("<memory>");
        let mut corpus = Corpus::default();
        for (idx, mut p) in problems.into_iter().enumerate() {
            if corpus.problems.contains_key(&p.problem_id) {
                return Err(CorpusError::DuplicateId {
                    path: mem,
                    line: idx + 1,
                    kind: "problem",
                    id: p.problem_id,
                });
            }
            for t in &mut p.gold_tests {
                if t.problem_id.is_empty() {
                    t.problem_id = p.problem_id.clone();
                }
            }
            corpus.solutions.insert(p.problem_id.clone(), Vec::new());
            corpus.tests.insert(p.problem_id.clone(), Vec::new());
            corpus.problems.insert(p.problem_id.clone(), p);
        }

        let mut seen = HashSet::new();
        for (idx, s) in solutions.into_iter().enumerate() {
            let Some(pool) = corpus.solutions.get_mut(&s.problem_id) else {
                return Err(CorpusError::DanglingReference {
                    path: mem,
                    line: idx + 1,
                    kind: "solution",
                    problem_id: s.problem_id,
                });
            };
            if !seen.insert((s.problem_id.clone(), s.solution_id.clone())) {
                return Err(CorpusError::DuplicateId {
                    path: mem,
                    line: idx + 1,
                    kind: "solution",
                    id: s.solution_id,
                });
            }
            pool.push(s);
        }

        let mut seen = HashSet::new();
        for (idx, t) in tests.into_iter().enumerate() {
            let Some(pool) = corpus.tests.get_mut(&t.problem_id) else {
                return Err(CorpusError::DanglingReference {
                    path: mem,
                    line: idx + 1,
                    kind: "test",
                    problem_id: t.problem_id,
                });
            };
            if !seen.insert((t.problem_id.clone(), t.test_id.clone())) {
                return Err(CorpusError::DuplicateId {
                    path: mem,
                    line: idx + 1,
                    kind: "test",
                    id: t.test_id,
                });
            }
            pool.push(t);
        }
        Ok(corpus)
    }

    /// Writes the corpus back out in the line-delimited record format.
    pub fn write_jsonl(
        &self,
        problem_path: &Path,
        solution_path: &Path,
        test_path: &Path,
    ) -> Result<(), CorpusError> {
        write_lines(problem_path, self.problems.values())?;
        write_lines(solution_path, self.solutions.values().flatten())?;
        write_lines(test_path, self.tests.values().flatten())?;
        Ok(())
    }
}

/// Loads and cross-references a corpus. Blank lines are skipped; line numbers
/// in errors are 1-based physical lines.
pub fn load_corpus(
    problem_path: &Path,
    solution_path: &Path,
    test_path: &Path,
) -> Result<Corpus, CorpusError> {
    let problems: Vec<(usize, ProblemRecord)> = read_lines(problem_path)?;
    let solutions: Vec<(usize, SolutionRecord)> = read_lines(solution_path)?;
    let tests: Vec<(usize, TestSpec)> = read_lines(test_path)?;

    // Re-map record positions to physical lines for error reporting.
    let remap = |err: CorpusError, path: &Path, lines: &[usize]| match err {
        CorpusError::DanglingReference {
            line,
            kind,
            problem_id,
            ..
        } => CorpusError::DanglingReference {
            path: path.to_path_buf(),
            line: lines[line - 1],
            kind,
            problem_id,
        },
        CorpusError::DuplicateId { line, kind, id, .. } => CorpusError::DuplicateId {
            path: path.to_path_buf(),
            line: lines[line - 1],
            kind,
            id,
        },
        other => other,
    };
    let problem_lines: Vec<usize> = problems.iter().map(|(l, _)| *l).collect();
    let solution_lines: Vec<usize> = solutions.iter().map(|(l, _)| *l).collect();
    let test_lines: Vec<usize> = tests.iter().map(|(l, _)| *l).collect();

    Corpus::from_records(
        problems.into_iter().map(|(_, p)| p).collect(),
        solutions.into_iter().map(|(_, s)| s).collect(),
        tests.into_iter().map(|(_, t)| t).collect(),
    )
    .map_err(|err| {
        let (path, lines) = match &err {
            CorpusError::DanglingReference { kind: "solution", .. }
            | CorpusError::DuplicateId { kind: "solution", .. } => {
                (solution_path, &solution_lines)
            }
            CorpusError::DanglingReference { kind: "test", .. }
            | CorpusError::DuplicateId { kind: "test", .. } => (test_path, &test_lines),
            _ => (problem_path, &problem_lines),
        };
        remap(err, path, lines)
    })
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

fn write_lines<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(record).expect("corpus records serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// How strictly [`validate_corpus`] checks the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Structural invariants only.
    #[default]
    Structural,
    /// Also require what gold evaluation needs (non-empty gold suites).
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub problem_id: String,
    /// Solution or test id the diagnostic is about, if any.
    pub item: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.item {
            Some(item) => write!(f, "{}/{}: {}", self.problem_id, item, self.message),
            None => write!(f, "{}: {}", self.problem_id, self.message),
        }
    }
}

/// Returns every invariant violation found in `corpus`; empty iff valid.
pub fn validate_corpus(corpus: &Corpus, mode: ValidationMode) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |problem_id: &str, item: Option<&str>, message: String| {
        diags.push(Diagnostic {
            problem_id: problem_id.to_string(),
            item: item.map(str::to_string),
            message,
        });
    };

    let mut feature_dim: Option<(usize, &str)> = None;
    for (key, p) in &corpus.problems {
        if key != &p.problem_id {
            push(key, None, format!("keyed under {key:?} but has problem_id {:?}", p.problem_id));
        }
        if p.entry_point.trim().is_empty() {
            push(key, None, "entry_point is empty".into());
        }
        if mode == ValidationMode::Evaluation && p.gold_tests.is_empty() {
            push(key, None, "gold_tests is empty but evaluation requires a gold suite".into());
        }
        let mut gold_ids = HashSet::new();
        for t in &p.gold_tests {
            if let Some(problem) = t.payload_problem() {
                push(key, Some(&t.test_id), format!("gold test: {problem}"));
            }
            if !gold_ids.insert(t.test_id.as_str()) {
                push(key, Some(&t.test_id), "duplicate gold test id".into());
            }
        }
        if let Some(rate) = p.gold_pass_rate {
            if !(0.0..=1.0).contains(&rate) {
                push(key, None, format!("gold_pass_rate {rate} outside [0, 1]"));
            }
        }
        if let Some(fv) = &p.feature_vector {
            if fv.iter().any(|x| !x.is_finite()) {
                push(key, None, "feature_vector has non-finite entries".into());
            }
            match feature_dim {
                None => feature_dim = Some((fv.len(), key)),
                Some((d, first)) if d != fv.len() => push(
                    key,
                    None,
                    format!("feature_vector has dimension {} but {first} has {d}", fv.len()),
                ),
                _ => {}
            }
        }
    }

    for (key, pool) in &corpus.solutions {
        if !corpus.problems.contains_key(key) {
            push(key, None, "solution pool for unknown problem".into());
        }
        let mut ids = HashSet::new();
        for s in pool {
            if &s.problem_id != key {
                push(key, Some(&s.solution_id), format!("solution references {:?}", s.problem_id));
            }
            if !ids.insert(s.solution_id.as_str()) {
                push(key, Some(&s.solution_id), "duplicate solution id".into());
            }
        }
    }

    for (key, pool) in &corpus.tests {
        if !corpus.problems.contains_key(key) {
            push(key, None, "test pool for unknown problem".into());
        }
        let mut ids = HashSet::new();
        for t in pool {
            if &t.problem_id != key {
                push(key, Some(&t.test_id), format!("test references {:?}", t.problem_id));
            }
            if !ids.insert(t.test_id.as_str()) {
                push(key, Some(&t.test_id), "duplicate test id".into());
            }
            if let Some(problem) = t.payload_problem() {
                push(key, Some(&t.test_id), problem.to_string());
            }
        }
    }
    diags
}

/// Serde adapter for tri-state labels: `null` or a missing field means the
/// default (`unknown`), and the default is written back as `null`.
mod nullable {
    use super::*;

    pub fn serialize<T, S>(value: &T, serializer: S) -> Result<S::Ok, S::Error>
    where
        T: Serialize + Default + PartialEq,
        S: Serializer,
    {
        if *value == T::default() {
            serializer.serialize_none()
        } else {
            serializer.serialize_some(value)
        }
    }

    pub fn deserialize<'de, T, D>(deserializer: D) -> Result<T, D::Error>
    where
        T: Deserialize<'de> + Default,
        D: Deserializer<'de>,
    {
        Ok(Option::<T>::deserialize(deserializer)?.unwrap_or_default())
    }
}
