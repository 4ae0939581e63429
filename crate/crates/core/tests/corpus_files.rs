use std::fs;
use std::path::{Path, PathBuf};

use utlab::corpus::{load_corpus, validate_corpus, CorpusError, ValidationMode};
use utlab::reward::{select_best, TieRule, VerdictMatrix};

const PROBLEM: &str = r#"{"problem_id":"p1","prompt":"add one","entry_point":"f","gold_tests":[{"test_id":"g","kind":"structured","cases":[{"input_args":[1],"expected_output":2}]}]}"#;

fn write(dir: &Path, problems: &str, solutions: &str, tests: &str) -> (PathBuf, PathBuf, PathBuf) {
    let paths = (dir.join("problems.jsonl"), dir.join("solutions.jsonl"), dir.join("tests.jsonl"));
    fs::write(&paths.0, problems).unwrap();
    fs::write(&paths.1, solutions).unwrap();
    fs::write(&paths.2, tests).unwrap();
    paths
}

fn solutions_text() -> String {
    [
        r#"{"problem_id":"p1","solution_id":"s0","source_code":"def f(x): return x+1"}"#,
        r#"{"problem_id":"p1","solution_id":"s1","source_code":"def f(x): return x","label":"incorrect"}"#,
    ]
    .join("\n")
}

fn tests_text() -> String {
    (0..3)
        .map(|j| format!(r#"{{"problem_id":"p1","test_id":"t{j}","kind":"code_block","code":"assert f(1) == 2"}}"#))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn minimal_corpus_loads_with_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let (p, s, t) = write(dir.path(), PROBLEM, &solutions_text(), &tests_text());
    let c = load_corpus(&p, &s, &t).unwrap();
    assert_eq!(c.solution_pool("p1").len(), 2);
    assert_eq!(c.test_pool("p1").len(), 3);
    assert!(validate_corpus(&c, ValidationMode::Evaluation).is_empty());
}

#[test]
fn dangling_problem_reference_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format!("{}\n\n{}", solutions_text(), r#"{"problem_id":"p9","solution_id":"s2","source_code":""}"#);
    let (p, s, t) = write(dir.path(), PROBLEM, &bad, &tests_text());
    let err = load_corpus(&p, &s, &t).unwrap_err();
    match &err {
        CorpusError::DanglingReference { problem_id, line, .. } => {
            assert_eq!(problem_id, "p9");
            assert_eq!(*line, 4);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("p9"));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let (p, s, t) = write(dir.path(), PROBLEM, &format!("{}\n{{oops", solutions_text()), &tests_text());
    match load_corpus(&p, &s, &t).unwrap_err() {
        CorpusError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_solution_file_gives_empty_pool_and_selection_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (p, s, t) = write(dir.path(), PROBLEM, "", &tests_text());
    let c = load_corpus(&p, &s, &t).unwrap();
    assert!(c.solution_pool("p1").is_empty());
    let m = VerdictMatrix::from_rows("p1", &[]);
    assert!(m.is_err() || select_best(&m.unwrap(), TieRule::LowestIndex).is_err());
}

#[test]
fn written_corpus_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (p, s, t) = write(dir.path(), PROBLEM, &solutions_text(), &tests_text());
    let c = load_corpus(&p, &s, &t).unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    let (p2, s2, t2) = (out.join("p.jsonl"), out.join("s.jsonl"), out.join("t.jsonl"));
    c.write_jsonl(&p2, &s2, &t2).unwrap();
    assert_eq!(load_corpus(&p2, &s2, &t2).unwrap(), c);
}
