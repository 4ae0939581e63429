mod common;

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use common::*;
use utlab::corpus::{Corpus, TestSpec};
use utlab::mock::MockTest;

/// A small executed and probed demo directory shared by several tests.
fn small_demo() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("cli-small-demo");
        ok(&[
            "demo",
            "--out",
            s(&dir),
            "--synth-problems",
            "10",
            "--synth-solutions",
            "4",
            "--synth-tests",
            "8",
            "--samples",
            "20",
        ]);
        dir
    })
}

#[test]
fn missing_runner_exits_two_and_names_it() {
    let dir = scratch("cli-missing-runner");
    let corpus = write_corpus(&dir, &hand_corpus());
    let o = utlab(&[
        "execute",
        "--corpus",
        s(&corpus),
        "--out",
        s(&dir.join("out")),
        "--runner-cmd",
        "/nonexistent/runner --flag",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/runner"), "{}", stderr(&o));
}

#[test]
fn rerun_replays_from_cache() {
    let dir = scratch("cli-cache");
    let corpus = write_corpus(&dir, &hand_corpus());
    let out = dir.join("out");
    let first = ok(&["execute", "--corpus", s(&corpus), "--out", s(&out)]);
    assert!(stderr(&first).contains("spawned=8 cache_hits=0"), "{}", stderr(&first));
    let matrices = fs::read(out.join("matrices.jsonl")).unwrap();

    let second = ok(&["execute", "--corpus", s(&corpus), "--out", s(&out)]);
    assert!(stderr(&second).contains("spawned=0 cache_hits=8"), "{}", stderr(&second));
    assert_eq!(fs::read(out.join("matrices.jsonl")).unwrap(), matrices);

    let uncached = ok(&["execute", "--corpus", s(&corpus), "--out", s(&out), "--no-cache"]);
    assert!(stderr(&uncached).contains("spawned=8 cache_hits=0"), "{}", stderr(&uncached));
}

#[test]
fn matrices_follow_the_record_schema() {
    let dir = scratch("cli-schema");
    let corpus = write_corpus(&dir, &hand_corpus());
    let out = dir.join("out");
    ok(&["execute", "--corpus", s(&corpus), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("matrices.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines[0].get("provenance").is_some());
    let m = &lines[1];
    assert_eq!(m["problem_id"], "p1");
    assert_eq!(m["solution_ids"], serde_json::json!(["a", "b", "c", "d"]));
    assert_eq!(m["test_ids"], serde_json::json!(["t"]));
    assert_eq!(m["bits"], serde_json::json!([[1], [1], [1], [0]]));
}

#[test]
fn qc_reproduces_the_hand_computed_report() {
    let dir = scratch("cli-qc");
    let corpus = write_corpus(&dir, &hand_corpus());
    let out = dir.join("out");
    ok(&["execute", "--corpus", s(&corpus), "--out", s(&out)]);
    ok(&["qc", "--out", s(&out)]);
    let rows = csv_rows(&out.join("quality.csv"));
    let per_test: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "per_test").collect();
    assert_eq!(per_test.len(), 1);
    assert_eq!(per_test[0][2..], ["t", "0.750000", "0.800000", "0.500000", "0.000000"]);
}

#[test]
fn scale_emits_one_row_per_grid_point() {
    // 100 tests so that m = 100 is drawable.
    let dir = scratch("cli-grid");
    let tests = (0..100)
        .map(|j| {
            let accept: Vec<&str> = if j % 4 == 0 { vec!["a", "c"] } else { vec!["a"] };
            TestSpec::code_block("p1", &format!("t{j:03}"), MockTest::accepting(accept).to_code())
        })
        .collect();
    let base = hand_corpus();
    let corpus = Corpus::from_records(
        base.problems.values().cloned().collect(),
        base.solutions.values().flatten().cloned().collect(),
        tests,
    )
    .unwrap();
    let c = write_corpus(&dir, &corpus);
    let out = dir.join("out");
    ok(&["execute", "--corpus", s(&c), "--out", s(&out)]);
    ok(&["scale", "--out", s(&out), "--seed", "3", "--grid", "1x1,1x100", "--samples", "10"]);
    let rows = csv_rows(&out.join("curve.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("1", "1"));
    assert_eq!((rows[1][0].as_str(), rows[1][1].as_str()), ("1", "100"));
}

#[test]
fn allocate_all_emits_three_rows_per_budget() {
    let dir = small_demo();
    let out = scratch("cli-allocate");
    for f in ["matrices.jsonl", "gold.jsonl", "probe_predictions.json"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    ok(&["allocate", "--out", s(&out), "--seed", "1", "--budgets", "10,2P", "--samples", "10"]);
    let rows = csv_rows(&out.join("allocation.csv"));
    let got: Vec<(&str, &str)> = rows.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    assert_eq!(
        got,
        [
            ("greedy_gold", "10"),
            ("greedy_predicted", "10"),
            ("equal", "10"),
            ("greedy_gold", "20"),
            ("greedy_predicted", "20"),
            ("equal", "20"),
        ]
    );
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let empty = scratch("cli-missing-artifact");
    let o = utlab(&["scale", "--out", s(&empty), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("matrices.jsonl"), "{}", stderr(&o));

    let out = scratch("cli-missing-predictions");
    for f in ["matrices.jsonl", "gold.jsonl"] {
        fs::copy(small_demo().join(f), out.join(f)).unwrap();
    }
    let o = utlab(&["allocate", "--out", s(&out), "--seed", "1", "--strategy", "greedy_predicted"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probe_predictions.json"), "{}", stderr(&o));
    // Strategies that need no prediction still run.
    ok(&["allocate", "--out", s(&out), "--seed", "1", "--strategy", "equal", "--samples", "5"]);
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = small_demo();
    let out = scratch("cli-seed");
    for f in ["matrices.jsonl", "gold.jsonl", "probe_predictions.json"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    for args in [
        vec!["scale", "--out", s(&out)],
        vec!["allocate", "--out", s(&out)],
        vec!["select", "--out", s(&out), "--tie", "random"],
        vec!["probe", "--out", s(&out), "--corpus", s(&dir.join("corpus"))],
    ] {
        let o = utlab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("--seed"), "{args:?}: {}", stderr(&o));
    }
    // Deterministic variants need none.
    ok(&["select", "--out", s(&out)]);
    ok(&["scale", "--out", s(&out), "--mode", "exhaustive", "--grid", "1x1,2x2"]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = small_demo();
    let out = scratch("cli-config");
    for f in ["matrices.jsonl", "gold.jsonl"] {
        fs::copy(dir.join(f), out.join(f)).unwrap();
    }
    let cfg = out.join("run.toml");
    fs::write(&cfg, format!("out = {:?}\nseed = 5\nsamples = 7\ngrid = \"1x1,2x2\"\n", s(&out))).unwrap();
    ok(&["scale", "--config", s(&cfg), "--samples", "9"]);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("curve.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["samples"], 9);
    assert_eq!(meta["provenance"]["seed"], 5);
    assert_eq!(csv_rows(&out.join("curve.csv")).len(), 2);

    fs::write(&cfg, "seeds = 5\n").unwrap();
    let o = utlab(&["scale", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"), "{}", stderr(&o));
}

#[test]
fn every_report_carries_provenance() {
    let dir = small_demo();
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        let text = fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap_or_default();
        match ext {
            "csv" => assert!(first.starts_with("# tool=utlab version="), "{}", path.display()),
            "jsonl" => assert!(first.starts_with("{\"provenance\":"), "{}", path.display()),
            "json" => {
                let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                assert!(v["provenance"]["config_hash"].is_string(), "{}", path.display());
            }
            _ => continue,
        }
        seen += 1;
    }
    assert!(seen >= 15, "{seen} reports");
}

#[test]
fn bad_settings_exit_two() {
    let out = small_demo();
    for args in [
        vec!["scale", "--out", s(out), "--seed", "1", "--grid", "1x"],
        vec!["scale", "--out", s(out), "--seed", "1", "--grid", "1x500"],
        vec!["qc", "--out", s(out), "--policy", "min_reject:2"],
        vec!["select", "--out", s(out), "--tie", "coin"],
        vec!["demo", "--out", s(out), "--far", "1.5"],
    ] {
        assert_eq!(utlab(&args).status.code(), Some(2), "{args:?}");
    }
}
