//! Acceptance suite: each check prints one PASS/FAIL line and the process
//! exits non-zero if any check fails. Runs on the built-in mock runner.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utlab::allocator::{greedy_allocate, q, Strategy};
use utlab::difficulty::{probe_grad, probe_loss, sigmoid, train_probe, ProbeModel, ProbeSample, TrainConfig};
use utlab::quality::{test_quality, ConfusionCounts};
use utlab::reward::{select_best, TieRule, VerdictMatrix};
use utlab::scalinglab::{best_of_n_accuracy, BootstrapConfig, ProblemEval};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_secs), || {
        format!("took {elapsed:.1?}, limit {limit_secs} s")
    })
}

// ---------------------------------------------------------------- allocation

/// `1 - (1-λ)^b` by repeated multiplication.
fn credit(lambda: f64, b: u64) -> f64 {
    1.0 - (0..b).fold(1.0, |acc, _| acc * (1.0 - lambda))
}

/// Best total credit over every split of `total` among the problems.
fn enumerate_best(table: &[Vec<f64>], total: usize) -> f64 {
    match table.split_first() {
        None => 0.0,
        Some((row, [])) => row[total],
        Some((row, rest)) => (0..=total)
            .map(|b| row[b] + enumerate_best(rest, total - b))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

fn greedy_matches_enumeration() -> Check {
    let start = Instant::now();
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let credits: Vec<Vec<f64>> = grid.iter().map(|&l| (0..=8).map(|b| credit(l, b)).collect()).collect();
    let mut instances = 0u64;
    for p in 1..=4usize {
        let mut idx = vec![0usize; p];
        loop {
            let map: BTreeMap<String, f64> = idx.iter().enumerate().map(|(i, &g)| (format!("p{i}"), grid[g])).collect();
            let table: Vec<Vec<f64>> = idx.iter().map(|&g| credits[g].clone()).collect();
            for total in 0..=8u64 {
                let plan = greedy_allocate(&map, total, Strategy::GreedyGold).map_err(|e| e.to_string())?;
                let got: f64 = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| credits[g][plan.budgets[&format!("p{i}")] as usize])
                    .sum();
                let best = enumerate_best(&table, total as usize);
                ensure(plan.budgets.values().sum::<u64>() == total, || format!("{map:?} B={total}: plan overspends"))?;
                ensure((got - best).abs() <= 1e-12, || format!("{map:?} B={total}: greedy {got} vs {best}"))?;
                instances += 1;
            }
            let mut k = 0;
            while k < p {
                idx[k] += 1;
                if idx[k] < grid.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == p {
                break;
            }
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{instances} instances in {:.1?}", start.elapsed()))
}

fn allocation_worked_example() -> Check {
    let table = [((1, 2), 0.85), ((2, 1), 0.69), ((3, 0), 0.271), ((0, 3), 0.875)];
    for ((b1, b2), want) in table {
        let got = q(0.1, b1).unwrap() + q(0.5, b2).unwrap();
        ensure((got - want).abs() <= 1e-12, || format!("split ({b1},{b2}): {got} vs {want}"))?;
    }
    let map: BTreeMap<String, f64> = [("a".to_string(), 0.1), ("b".to_string(), 0.5)].into();
    let plan = greedy_allocate(&map, 3, Strategy::GreedyGold).unwrap();
    let budgets: Vec<u64> = plan.budgets.values().copied().collect();
    ensure(budgets == [0, 3], || format!("plan {budgets:?}"))?;
    let reward = q(0.1, 0).unwrap() + q(0.5, 3).unwrap();
    ensure((reward - 0.875).abs() <= 1e-12, || format!("reward {reward}"))?;
    Ok("plan {0, 3}, reward 0.875".into())
}

// --------------------------------------------------------------------- probe

fn fd_grad(model: &ProbeModel, batch: &[ProbeSample], eps: f64) -> Vec<f64> {
    let p = model.params();
    (0..p.len())
        .map(|i| {
            let mut m = model.clone();
            let mut shifted = p.clone();
            shifted[i] = p[i] + eps;
            m.set_params(&shifted);
            let up = probe_loss(&m, batch).unwrap();
            shifted[i] = p[i] - eps;
            m.set_params(&shifted);
            let down = probe_loss(&m, batch).unwrap();
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=8);
        let h = rng.gen_range(1..=16);
        let mut model = ProbeModel::init(d, h, rng.gen());
        model.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        model.b2 = rng.gen_range(-0.5..0.5);
        let batch: Vec<ProbeSample> = (0..rng.gen_range(1..=16))
            .map(|_| {
                let x = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ProbeSample::new(x, rng.gen_range(0.0..=1.0))
            })
            .collect();
        let analytic = probe_grad(&model, &batch).unwrap();
        for (a, n) in analytic.iter().zip(fd_grad(&model, &batch, 1e-5)) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn probe_recovery() -> Check {
    let start = Instant::now();
    let v = [1.5, -1.0, 0.5, 2.0];
    let bias = -0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data: Vec<ProbeSample> = (0..500)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let z: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + bias;
            ProbeSample::new(x, sigmoid(z))
        })
        .collect();
    // Bayes loss: the generator's own cross-entropy, i.e. mean binary entropy.
    let bayes = data
        .iter()
        .map(|s| -(s.lambda * s.lambda.ln() + (1.0 - s.lambda) * (1.0 - s.lambda).ln()))
        .sum::<f64>()
        / data.len() as f64;
    let cfg = TrainConfig {
        learning_rate: 0.2,
        batch_size: 25,
        epochs: 300,
        ..TrainConfig::new(17)
    };
    let a = train_probe(&data, &cfg).map_err(|e| e.to_string())?;
    let b = train_probe(&data, &cfg).map_err(|e| e.to_string())?;
    ensure(a.model == b.model && a.history == b.history, || "training is not deterministic".into())?;
    let last = *a.history.last().unwrap();
    ensure(last - bayes < 0.02, || format!("loss {last:.5}, Bayes {bayes:.5}"))?;
    within(start.elapsed(), 60)?;
    Ok(format!("loss {last:.4} vs Bayes {bayes:.4}"))
}

// ---------------------------------------------------------------- selection

fn voting_oracle() -> Check {
    let mut cases = 0u64;
    for n in 1..=4usize {
        for m in 1..=4usize {
            for bits in 0u32..1 << (n * m) {
                let rows: Vec<Vec<bool>> = (0..n).map(|i| (0..m).map(|j| bits >> (i * m + j) & 1 == 1).collect()).collect();
                let mut best = 0;
                let mut best_votes = 0;
                for (i, row) in rows.iter().enumerate() {
                    let votes = row.iter().filter(|&&b| b).count();
                    if i == 0 || votes > best_votes {
                        best = i;
                        best_votes = votes;
                    }
                }
                let matrix = VerdictMatrix::from_rows("p", &rows).unwrap();
                let got = select_best(&matrix, TieRule::LowestIndex).unwrap();
                ensure(got.chosen_index == best, || format!("{rows:?}: chose {}, scan {best}", got.chosen_index))?;
                cases += 1;
            }
        }
    }
    ensure(cases >= 65_536, || format!("only {cases} cases"))?;
    Ok(format!("{cases} matrices"))
}

// ------------------------------------------------------------------ scaling

/// Exact best-of-n accuracy by listing every ordered draw.
fn exact_accuracy(rows: &[Vec<bool>], gold: &[bool], n: usize, m: usize) -> f64 {
    let (big_n, big_m) = (rows.len(), rows[0].len());
    let (mut hits, mut draws) = (0u64, 0u64);
    for s in 0..big_n.pow(n as u32) {
        let sols: Vec<usize> = (0..n).map(|k| s / big_n.pow(k as u32) % big_n).collect();
        for t in 0..big_m.pow(m as u32) {
            let tests: Vec<usize> = (0..m).map(|k| t / big_m.pow(k as u32) % big_m).collect();
            let votes: Vec<usize> = sols.iter().map(|&i| tests.iter().filter(|&&j| rows[i][j]).count()).collect();
            let top = votes.iter().copied().max().unwrap();
            let pick = sols[votes.iter().position(|&v| v == top).unwrap()];
            hits += u64::from(gold[pick]);
            draws += 1;
        }
    }
    hits as f64 / draws as f64
}

fn bootstrap_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact_points = 0;
    for big_n in 1..=3usize {
        for big_m in 1..=3usize {
            for _ in 0..6 {
                let rows: Vec<Vec<bool>> = (0..big_n).map(|_| (0..big_m).map(|_| rng.gen()).collect()).collect();
                let gold: Vec<bool> = (0..big_n).map(|_| rng.gen()).collect();
                let p = ProblemEval::new(VerdictMatrix::from_rows("p", &rows).unwrap(), gold.clone()).unwrap();
                for n in 1..=big_n {
                    for m in 0..=big_m {
                        let got = best_of_n_accuracy(std::slice::from_ref(&p), n, m, &BootstrapConfig::exhaustive())
                            .map_err(|e| e.to_string())?;
                        let want = exact_accuracy(&rows, &gold, n, m);
                        ensure((got.mean - want).abs() <= 1e-12, || {
                            format!("{rows:?} {gold:?} n={n} m={m}: {} vs {want}", got.mean)
                        })?;
                        exact_points += 1;
                    }
                }
            }
        }
    }

    // Sampling mode on a four-problem corpus of 3x3 pools.
    let problems: Vec<(Vec<Vec<bool>>, Vec<bool>)> = (0..4)
        .map(|_| {
            let rows = (0..3).map(|_| (0..3).map(|_| rng.gen_bool(0.5)).collect()).collect();
            let gold = (0..3).map(|_| rng.gen_bool(0.5)).collect();
            (rows, gold)
        })
        .collect();
    let evals: Vec<ProblemEval> = problems
        .iter()
        .enumerate()
        .map(|(k, (r, g))| ProblemEval::new(VerdictMatrix::from_rows(format!("p{k}"), r).unwrap(), g.clone()).unwrap())
        .collect();
    let mut sampled = 0;
    for (n, m) in [(1, 1), (2, 1), (2, 2), (3, 3), (3, 0), (1, 3)] {
        let want = problems.iter().map(|(r, g)| exact_accuracy(r, g, n, m)).sum::<f64>() / problems.len() as f64;
        let est = best_of_n_accuracy(&evals, n, m, &BootstrapConfig::new(11, 100)).map_err(|e| e.to_string())?;
        let se = est.standard_error(100);
        ensure((est.mean - want).abs() <= 3.0 * se + 1e-12, || {
            format!("n={n} m={m}: {} vs exact {want}, SE {se}", est.mean)
        })?;
        sampled += 1;
    }
    Ok(format!("{exact_points} exact points, {sampled} sampled points within 3 SE"))
}

// -------------------------------------------------------------- demo-based

struct Demo {
    dir: PathBuf,
    elapsed: Duration,
}

fn demo() -> &'static Result<Demo, String> {
    static DEMO: OnceLock<Result<Demo, String>> = OnceLock::new();
    DEMO.get_or_init(|| {
        let dir = scratch("acceptance-demo");
        let start = Instant::now();
        let o = utlab(&["demo", "--out", s(&dir)]);
        let elapsed = start.elapsed();
        if o.status.success() {
            Ok(Demo { dir, elapsed })
        } else {
            Err(format!("demo failed: {}", stderr(&o)))
        }
    })
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// (mean, ci_low, ci_high) keyed by the leading columns.
fn estimates(path: &Path, key_cols: usize) -> BTreeMap<Vec<String>, (f64, f64, f64)> {
    csv_rows(path)
        .into_iter()
        .map(|r| {
            let k = r[..key_cols].to_vec();
            (k, (num(&r[key_cols]), num(&r[key_cols + 1]), num(&r[key_cols + 2])))
        })
        .collect()
}

fn scaling_law_shape() -> Check {
    let d = demo().as_ref()?;
    within(d.elapsed, 120)?;
    let curve = estimates(&d.dir.join("curve.csv"), 2);
    let n = "16".to_string();
    let at = |m: &str| curve.get(&vec![n.clone(), m.to_string()]).copied();
    let (one, full) = (at("1").ok_or("no m=1 point")?, at("32").ok_or("no m=32 point")?);
    let gain = full.0 - one.0;
    ensure(gain >= 0.10, || format!("gain {gain:.4}"))?;
    ensure(full.1 > one.2, || format!("CIs overlap: m=1 {one:?}, m=32 {full:?}"))?;

    let buckets = estimates(&d.dir.join("quintiles.csv"), 3);
    let bucket_gain = |b: &str| -> Option<f64> {
        let lo = buckets.get(&vec![b.to_string(), n.clone(), "1".to_string()])?;
        let hi = buckets.get(&vec![b.to_string(), n.clone(), "32".to_string()])?;
        Some(hi.0 - lo.0)
    };
    let easiest = bucket_gain("1").ok_or("no easiest bucket")?;
    let hardest = bucket_gain("5").ok_or("no hardest bucket")?;
    ensure(hardest > easiest, || format!("hardest gain {hardest:.4} <= easiest {easiest:.4}"))?;
    Ok(format!(
        "m=1 {:.3} [{:.3},{:.3}] -> m=32 {:.3} [{:.3},{:.3}]; quintile gains easiest {easiest:.3}, hardest {hardest:.3}; demo {:.1?}",
        one.0, one.1, one.2, full.0, full.1, full.2, d.elapsed
    ))
}

fn dynamic_beats_equal() -> Check {
    let d = demo().as_ref()?;
    within(d.elapsed, 120)?;
    let rows = estimates(&d.dir.join("allocation.csv"), 2);
    let budgets = ["40", "80", "160"];
    let get = |st: &str, b: &str| rows.get(&vec![st.to_string(), b.to_string()]).copied();
    let mut ordered = 0;
    let mut notes = Vec::new();
    for b in budgets {
        let gold = get("greedy_gold", b).ok_or_else(|| format!("no greedy_gold row at B={b}"))?;
        let pred = get("greedy_predicted", b).ok_or_else(|| format!("no greedy_predicted row at B={b}"))?;
        let equal = get("equal", b).ok_or_else(|| format!("no equal row at B={b}"))?;
        ensure(gold.0 >= equal.0, || format!("B={b}: greedy_gold {:.4} < equal {:.4}", gold.0, equal.0))?;
        // X >= Y within CI: X's mean is not below Y's lower bound.
        if gold.0 >= pred.1 && pred.0 >= equal.1 {
            ordered += 1;
        }
        notes.push(format!("B={b} {:.3}/{:.3}/{:.3}", gold.0, pred.0, equal.0));
    }
    ensure(ordered >= 2, || format!("ordering holds on {ordered} of 3 budgets"))?;
    Ok(format!("{} (gold/predicted/equal); ordering on {ordered}/3", notes.join(", ")))
}

fn quality_hand_example() -> Check {
    let rows = vec![vec![true], vec![true], vec![true], vec![false]];
    let m = VerdictMatrix::from_rows("p", &rows).unwrap();
    let r = test_quality(&m, &[true, true, false, false], &m.test_ids()[0].clone()).map_err(|e| e.to_string())?;
    ensure(r.confusion == ConfusionCounts { tp: 2, fn_: 0, fp: 1, tn: 1 }, || format!("{:?}", r.confusion))?;
    let got = (r.accuracy, r.f1, r.far, r.frr);
    ensure(got == (Some(0.75), Some(0.8), Some(0.5), Some(0.0)), || format!("{got:?}"))?;

    // Same pool end to end through execute and qc.
    let dir = scratch("acceptance-qc");
    let corpus = write_corpus(&dir, &hand_corpus());
    let out = dir.join("out");
    let o = utlab(&["execute", "--corpus", s(&corpus), "--out", s(&out)]);
    ensure(o.status.success(), || stderr(&o))?;
    let o = utlab(&["qc", "--out", s(&out)]);
    ensure(o.status.success(), || stderr(&o))?;
    let rows = csv_rows(&out.join("quality.csv"));
    let row = rows.iter().find(|r| r[1] == "per_test").ok_or("no per-test row")?;
    ensure(row[3..] == ["0.750000", "0.800000", "0.500000", "0.000000"], || format!("{row:?}"))?;
    Ok("accuracy 0.75, F1 0.8, FAR 0.5, FRR 0 (library and qc)".into())
}

fn report_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let e = e.ok()?;
            e.file_type().ok()?.is_file().then(|| e.file_name().to_string_lossy().into_owned())
        })
        .filter(|n| n != "timings.jsonl")
        .collect();
    names.sort();
    names
}

fn same_bytes(a: &Path, b: &Path, names: &[String]) -> Result<(), String> {
    for n in names {
        let (x, y) = (fs::read(a.join(n)), fs::read(b.join(n)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || format!("{n} differs"))?;
    }
    Ok(())
}

fn determinism() -> Check {
    let d = demo().as_ref()?;
    let again = scratch("acceptance-demo-again");
    let o = utlab(&["demo", "--out", s(&again), "--no-cache"]);
    ensure(o.status.success(), || stderr(&o))?;
    let names = report_files(&d.dir);
    ensure(names == report_files(&again), || "different report sets".into())?;
    same_bytes(&d.dir, &again, &names)?;
    let corpus_names = report_files(&d.dir.join("corpus"));
    same_bytes(&d.dir.join("corpus"), &again.join("corpus"), &corpus_names)?;

    // Each seeded stage re-run on its own reproduces the demo's bytes.
    let corpus = again.join("corpus");
    let stages: [(&[&str], &[&str]); 5] = [
        (&["select"], &["selection.csv", "select.json"]),
        (&["scale"], &["curve.csv", "curve.json", "quintiles.csv", "quintiles.json"]),
        (&["qc"], &["quality.csv", "qc_kept.json"]),
        (&["probe", "--corpus", s(&corpus)], &["probe_model.json", "probe_loss.csv", "probe_predictions.json"]),
        (&["allocate"], &["allocation.csv", "plans.json"]),
    ];
    for (args, files) in stages {
        for f in files {
            fs::remove_file(again.join(f)).map_err(|e| format!("{f}: {e}"))?;
        }
        let mut full = args.to_vec();
        full.extend(["--out", s(&again), "--seed", "42"]);
        let o = utlab(&full);
        ensure(o.status.success(), || format!("{args:?}: {}", stderr(&o)))?;
        let files: Vec<String> = files.iter().map(|f| f.to_string()).collect();
        same_bytes(&d.dir, &again, &files).map_err(|e| format!("{} re-run: {e}", args[0]))?;
    }
    Ok(format!("{} demo reports and 5 re-run stages byte-identical", names.len()))
}

fn main() -> ExitCode {
    let checks: [Criterion; 10] = [
        ("greedy allocation equals exhaustive enumeration", greedy_matches_enumeration),
        ("allocation worked example", allocation_worked_example),
        ("probe gradient matches finite differences", gradient_check),
        ("probe recovers a known generator", probe_recovery),
        ("voting equals first-argmax scan", voting_oracle),
        ("bootstrap exact in enumeration mode, within 3 SE when sampled", bootstrap_exactness),
        ("synthetic scaling curve shape", scaling_law_shape),
        ("greedy allocation versus equal split", dynamic_beats_equal),
        ("quality metrics hand example", quality_hand_example),
        ("seeded runs are byte-identical", determinism),
    ];
    let quiet: Box<dyn Fn(&panic::PanicHookInfo) + Sync + Send> = Box::new(|_| {});
    let default_hook = panic::take_hook();
    panic::set_hook(quiet);
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS  {name}: {detail} ({secs:.1} s)", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {why} ({secs:.1} s)", k + 1);
            }
        }
    }
    panic::set_hook(default_hook);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
