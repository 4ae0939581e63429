#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use utlab::corpus::{Corpus, ProblemRecord, SolutionLabel, SolutionRecord, TestSpec};
use utlab::mock::{MockSolution, MockTest};

pub fn utlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utlab"))
        .args(args)
        .output()
        .expect("utlab binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn ok(args: &[&str]) -> Output {
    let o = utlab(args);
    assert!(o.status.success(), "utlab {args:?} failed: {}", stderr(&o));
    o
}

/// A fresh scratch directory under cargo's per-target temp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn problem(id: &str, gold: Vec<TestSpec>) -> ProblemRecord {
    ProblemRecord {
        problem_id: id.into(),
        prompt: String::new(),
        entry_point: "f".into(),
        gold_tests: gold,
        feature_vector: None,
        gold_pass_rate: None,
    }
}

pub fn solution(problem_id: &str, id: &str) -> SolutionRecord {
    SolutionRecord {
        problem_id: problem_id.into(),
        solution_id: id.into(),
        source_code: MockSolution::tagged(id).to_source(),
        label: SolutionLabel::Unknown,
    }
}

/// Two correct solutions (a, b), two incorrect (c, d), and one generated
/// test accepting a, b and c.
pub fn hand_corpus() -> Corpus {
    let gold = TestSpec::code_block("p1", "gold", MockTest::accepting(["a", "b"]).to_code());
    Corpus::from_records(
        vec![problem("p1", vec![gold])],
        ["a", "b", "c", "d"].iter().map(|id| solution("p1", id)).collect(),
        vec![TestSpec::code_block("p1", "t", MockTest::accepting(["a", "b", "c"]).to_code())],
    )
    .unwrap()
}

/// Writes `corpus` as `<dir>/corpus/*.jsonl` and returns the corpus dir.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> PathBuf {
    let c = dir.join("corpus");
    fs::create_dir_all(&c).unwrap();
    corpus
        .write_jsonl(&c.join("problems.jsonl"), &c.join("solutions.jsonl"), &c.join("tests.jsonl"))
        .unwrap();
    c
}

/// Data rows of a report CSV (provenance comment and header dropped).
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
