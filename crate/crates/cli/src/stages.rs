//! One function per subcommand. Each reads its inputs from disk, writes its
//! reports under the output directory and returns a classified failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use utlab::allocator::{self, AllocError, AllocationPlan, ComparisonRow, Strategy};
use utlab::corpus::{load_corpus, validate_corpus, Corpus, ValidationMode};
use utlab::difficulty::{self, DifficultyError, ProbeSample, TrainConfig};
use utlab::executor::{ExecError, Executor, RunnerConfig, Verdict, VerdictCache};
use utlab::quality::{self, EnsembleRule, FalsePositivePolicy, QualityError, QualityReport};
use utlab::report::Provenance;
use utlab::reward::{select_best, TieRule, VerdictMatrix};
use utlab::scalinglab::{self, BootstrapConfig, ProblemEval, Resampling, ScalingError, TieMode};
use utlab::synth::{self, SynthConfig};

use crate::artifacts::{self, file_digest, GoldRecord, Layout};
use crate::settings::Settings;
use crate::Failure;

pub const MATRICES: &str = "matrices.jsonl";
pub const GOLD: &str = "gold.jsonl";
pub const PREDICTIONS: &str = "probe_predictions.json";

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn exec_failure(e: ExecError) -> Failure {
    Failure::Config(e.into())
}

fn scaling_failure(e: ScalingError) -> Failure {
    match e {
        ScalingError::OutOfRange { .. }
        | ScalingError::BadGrid(_)
        | ScalingError::NoSamples
        | ScalingError::TooLarge(_)
        | ScalingError::Io { .. } => Failure::Config(e.into()),
        _ => Failure::Experiment(e.into()),
    }
}

fn alloc_failure(e: AllocError) -> Failure {
    match e {
        AllocError::Scaling(s) => scaling_failure(s),
        other => Failure::Experiment(other.into()),
    }
}

fn quality_failure(e: QualityError) -> Failure {
    match e {
        QualityError::BadThreshold(_) => Failure::Config(e.into()),
        other => Failure::Experiment(other.into()),
    }
}

fn difficulty_failure(e: DifficultyError) -> Failure {
    match e {
        DifficultyError::InvalidConfig(_) => Failure::Config(e.into()),
        other => Failure::Experiment(other.into()),
    }
}

/// Digest of an input, keyed by file name so the hash ignores where it lives.
fn digest_entry(path: &Path) -> Result<(String, String), Failure> {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok((name, file_digest(path)?))
}

fn provenance(s: &Settings, command: &str, inputs: &[&Path]) -> Result<Provenance, Failure> {
    let digests = inputs.iter().map(|p| digest_entry(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(Provenance::new(s.config_hash(command, &digests), s.seed))
}

fn load(s: &Settings, command: &str) -> Result<(Corpus, Vec<PathBuf>), Failure> {
    let [p, so, t] = s.corpus_paths(command)?;
    let corpus = load_corpus(p, so, t).map_err(|e| Failure::Config(e.into()))?;
    let diags = validate_corpus(&corpus, ValidationMode::Structural);
    if !diags.is_empty() {
        let listed: Vec<String> = diags.iter().take(5).map(ToString::to_string).collect();
        return Err(Failure::Config(anyhow!(
            "corpus has {} problem(s): {}",
            diags.len(),
            listed.join("; ")
        )));
    }
    Ok((corpus, vec![p.clone(), so.clone(), t.clone()]))
}

pub fn runner_config(s: &Settings) -> Result<RunnerConfig, Failure> {
    let command = match &s.runner_cmd {
        Some(cmd) => cmd.clone(),
        None => {
            let exe = std::env::current_exe()
                .map_err(|e| Failure::Config(anyhow!("locating the built-in runner: {e}")))?;
            vec![exe.display().to_string(), "mock-runner".into()]
        }
    };
    let mut cfg = RunnerConfig::new(command);
    cfg.timeout = Duration::from_secs_f64(s.timeout);
    cfg.workers = s.workers;
    cfg.memory_cap = s.memory_mb.map(|mb| mb << 20);
    Ok(cfg)
}

/// One row of outcomes.jsonl. Timing and cache state live in timings.jsonl
/// so this file stays reproducible.
#[derive(Serialize)]
struct OutcomeRow<'a> {
    suite: &'a str,
    problem_id: &'a str,
    solution_id: &'a str,
    test_id: &'a str,
    verdict: Verdict,
    detail: &'a str,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    suite: &'a str,
    problem_id: &'a str,
    solution_id: &'a str,
    test_id: &'a str,
    wall_time: f64,
    cached: bool,
}

#[derive(Serialize)]
struct ExecuteSummary {
    problems: usize,
    with_gold: usize,
    skipped: Vec<String>,
    verdicts: BTreeMap<String, usize>,
}

pub fn execute(s: &Settings) -> Result<Vec<VerdictMatrix>, Failure> {
    let (corpus, inputs) = load(s, "execute")?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "execute", &inputs)?;
    let layout = Layout::new(&s.out);

    let mut executor = Executor::new(runner_config(s)?).map_err(exec_failure)?;
    let cache = if s.no_cache {
        None
    } else {
        let cache = VerdictCache::open(&s.cache)
            .map_err(|e| Failure::Config(anyhow!("opening cache {}: {e}", s.cache.display())))?;
        Some(Arc::new(cache))
    };
    if let Some(c) = &cache {
        executor = executor.with_cache(c.clone());
    }
    let flush = |cache: &Option<Arc<VerdictCache>>| -> Result<(), Failure> {
        match cache {
            Some(c) => c
                .flush()
                .map_err(|e| Failure::Config(anyhow!("writing cache {}: {e}", s.cache.display()))),
            None => Ok(()),
        }
    };

    let mut matrices = Vec::new();
    let mut golds = Vec::new();
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for pid in corpus.problem_ids() {
        if corpus.solution_pool(pid).is_empty() || corpus.test_pool(pid).is_empty() {
            warn(format!("{pid}: empty solution or test pool, skipped"));
            skipped.push(pid.to_string());
            continue;
        }
        let run = executor.run_matrix(&corpus, pid).map_err(exec_failure)?;
        matrices.push(run.matrix);
        outcomes.extend(run.outcomes.into_iter().map(|o| ("generated", o)));
        if corpus.problem(pid).is_some_and(|p| p.gold_tests.is_empty()) {
            warn(format!("{pid}: no gold tests, left out of gold-based analysis"));
        } else {
            let gold = executor.run_gold(&corpus, pid).map_err(exec_failure)?;
            golds.push(GoldRecord {
                problem_id: pid.to_string(),
                results: gold.results,
            });
            outcomes.extend(gold.outcomes.into_iter().map(|o| ("gold", o)));
        }
        flush(&cache)?;
    }

    let stats = executor.stats();
    eprintln!("spawned={} cache_hits={}", stats.spawned, stats.cache_hits);

    let mut verdicts = BTreeMap::new();
    for (_, o) in &outcomes {
        let key = serde_json::to_value(o.verdict).expect("verdict serializes");
        *verdicts.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    let rows: Vec<OutcomeRow> = outcomes
        .iter()
        .map(|(suite, o)| OutcomeRow {
            suite,
            problem_id: &o.problem_id,
            solution_id: &o.solution_id,
            test_id: &o.test_id,
            verdict: o.verdict,
            detail: &o.detail,
        })
        .collect();
    let timings: Vec<TimingRow> = outcomes
        .iter()
        .map(|(suite, o)| TimingRow {
            suite,
            problem_id: &o.problem_id,
            solution_id: &o.solution_id,
            test_id: &o.test_id,
            wall_time: o.wall_time,
            cached: o.cached,
        })
        .collect();

    artifacts::write_jsonl(&layout.file(MATRICES), &prov, &matrices)?;
    artifacts::write_jsonl(&layout.file(GOLD), &prov, &golds)?;
    artifacts::write_jsonl(&layout.file("outcomes.jsonl"), &prov, &rows)?;
    artifacts::write_jsonl(&layout.file("timings.jsonl"), &prov, &timings)?;
    let summary = ExecuteSummary {
        problems: matrices.len(),
        with_gold: golds.len(),
        skipped,
        verdicts,
    };
    artifacts::write_json(&layout.file("execute.json"), &prov, &summary)?;
    println!(
        "execute: {} problems ({} with gold), {} executions",
        summary.problems,
        summary.with_gold,
        rows.len()
    );
    Ok(matrices)
}

/// Matrices paired with gold outcomes; problems without gold are dropped
/// with a warning.
fn load_evals(layout: &Layout) -> Result<(Vec<ProblemEval>, Vec<PathBuf>), Failure> {
    let mpath = layout.file(MATRICES);
    let gpath = layout.file(GOLD);
    let matrices = artifacts::read_matrices(&mpath)?;
    let gold = artifacts::read_gold(&gpath)?;
    let mut evals = Vec::new();
    for m in matrices {
        let Some(g) = gold.get(m.problem_id()) else {
            warn(format!("{}: no gold results, skipped", m.problem_id()));
            continue;
        };
        let flags = artifacts::gold_for(&m, g)?;
        evals.push(ProblemEval::new(m, flags).map_err(scaling_failure)?);
    }
    Ok((evals, vec![mpath, gpath]))
}

fn problem_seed(seed: u64, purpose: &str, problem_id: &str) -> u64 {
    let bytes = scalinglab::sub_seed(seed, purpose, problem_id);
    u64::from_le_bytes(bytes[..8].try_into().expect("32-byte digest"))
}

#[derive(Serialize)]
struct SelectSummary {
    problems: usize,
    tie: TieMode,
    /// Fraction of problems whose selected solution passes the gold suite.
    accuracy: f64,
    /// Mean gold pass rate: the accuracy of picking one solution at random.
    pass_at_1: f64,
}

pub fn select(s: &Settings) -> Result<(), Failure> {
    let layout = Layout::new(&s.out);
    let (evals, inputs) = load_evals(&layout)?;
    if evals.is_empty() {
        return Err(Failure::Experiment(anyhow!("no problems with gold results to select on")));
    }
    let seed = match s.tie {
        TieMode::Random => Some(s.require_seed("select --tie random")?),
        TieMode::LowestIndex => None,
    };
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "select", &inputs)?;

    let mut lines = Vec::new();
    let mut correct = 0usize;
    for e in &evals {
        let rule = match seed {
            Some(seed) => TieRule::Random(problem_seed(seed, "select", e.problem_id())),
            None => TieRule::LowestIndex,
        };
        let sel = select_best(&e.matrix, rule).map_err(|err| Failure::Experiment(err.into()))?;
        let passed = e.gold[sel.chosen_index];
        correct += usize::from(passed);
        lines.push(format!(
            "{},{},{},{},{}",
            e.problem_id(),
            e.matrix.solution_ids()[sel.chosen_index],
            sel.vote_counts[sel.chosen_index],
            sel.tie_set.len(),
            passed
        ));
    }
    artifacts::write_csv(&layout.file("selection.csv"), &prov, |w| {
        writeln!(w, "problem_id,solution_id,votes,tie_size,passed_gold")?;
        lines.iter().try_for_each(|l| writeln!(w, "{l}"))
    })?;
    let summary = SelectSummary {
        problems: evals.len(),
        tie: s.tie,
        accuracy: correct as f64 / evals.len() as f64,
        pass_at_1: evals.iter().map(ProblemEval::pass_rate).sum::<f64>() / evals.len() as f64,
    };
    artifacts::write_json(&layout.file("select.json"), &prov, &summary)?;
    println!(
        "select: accuracy {:.4} over {} problems (pass@1 {:.4})",
        summary.accuracy, summary.problems, summary.pass_at_1
    );
    Ok(())
}

fn powers_up_to(limit: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |&k| k.checked_mul(2))
        .take_while(|&k| k <= limit)
        .collect();
    if limit > 0 && v.last() != Some(&limit) {
        v.push(limit);
    }
    v
}

/// Full-pool n with m from 0 up to the smallest test pool, then full-test m
/// with n doubling up to the smallest solution pool.
pub fn default_grid(evals: &[ProblemEval]) -> Vec<(usize, usize)> {
    let n_max = evals.iter().map(|e| e.matrix.n_solutions()).min().unwrap_or(1);
    let m_max = evals.iter().map(|e| e.matrix.n_tests()).min().unwrap_or(0);
    let mut grid = vec![(n_max, 0)];
    grid.extend(powers_up_to(m_max).into_iter().map(|m| (n_max, m)));
    for n in powers_up_to(n_max) {
        if !grid.contains(&(n, m_max)) {
            grid.push((n, m_max));
        }
    }
    grid
}

fn bootstrap_config(s: &Settings, command: &str) -> Result<BootstrapConfig, Failure> {
    let seed = match s.mode {
        Resampling::Bootstrap => s.require_seed(command)?,
        Resampling::Exhaustive => s.seed.unwrap_or(0),
    };
    Ok(BootstrapConfig {
        seed,
        samples: s.samples,
        tie: s.tie,
        mode: s.mode,
    })
}

#[derive(Serialize)]
struct QuintileReport<'a> {
    buckets: &'a [Vec<String>],
    excluded: &'a [String],
    curves: Vec<BucketCurve<'a>>,
}

#[derive(Serialize)]
struct BucketCurve<'a> {
    bucket: usize,
    curve: &'a scalinglab::ScalingCurve,
}

pub fn scale(s: &Settings) -> Result<(), Failure> {
    let layout = Layout::new(&s.out);
    let (evals, inputs) = load_evals(&layout)?;
    let cfg = bootstrap_config(s, "scale")?;
    let grid = match &s.grid {
        Some(spec) => scalinglab::parse_grid(spec).map_err(scaling_failure)?,
        None => default_grid(&evals),
    };
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "scale", &inputs)?;

    let curve = scalinglab::scaling_curve(&evals, &grid, &cfg).map_err(scaling_failure)?;
    std::fs::create_dir_all(&s.out).map_err(|e| Failure::Config(anyhow!("creating {}: {e}", s.out.display())))?;
    scalinglab::curve_report(&curve, &layout.file("curve"), Some(&prov)).map_err(scaling_failure)?;
    for p in &curve.points {
        println!("scale: n={} m={} mean={:.4} ci=[{:.4}, {:.4}]", p.n, p.m, p.mean, p.ci_low, p.ci_high);
    }

    match scalinglab::difficulty_quintiles(&scalinglab::pass_rates(&evals)) {
        Ok(q) => {
            let curves = scalinglab::quintile_curves(&evals, &q, &grid, &cfg).map_err(scaling_failure)?;
            artifacts::write_csv(&layout.file("quintiles.csv"), &prov, |w| {
                scalinglab::write_quintile_csv(w, &curves, None)
            })?;
            let report = QuintileReport {
                buckets: &q.buckets,
                excluded: &q.excluded,
                curves: curves.iter().map(|(bucket, curve)| BucketCurve { bucket: *bucket, curve }).collect(),
            };
            artifacts::write_json(&layout.file("quintiles.json"), &prov, &report)?;
        }
        Err(ScalingError::TooFewProblems(k)) => {
            warn(format!("only {k} problems have a correct solution; difficulty buckets skipped"));
        }
        Err(e) => return Err(scaling_failure(e)),
    }
    Ok(())
}

fn parse_threshold(spec: &str, prefix: &str) -> Option<Result<f64, Failure>> {
    let value = spec.strip_prefix(prefix)?;
    Some(
        value
            .parse::<f64>()
            .map_err(|_| Failure::Config(anyhow!("bad number in {spec:?}"))),
    )
}

fn parse_policy(spec: &str) -> Result<FalsePositivePolicy, Failure> {
    match spec {
        "accepts_all_incorrect" => Ok(FalsePositivePolicy::AcceptsAllIncorrect),
        "accepts_any_incorrect" => Ok(FalsePositivePolicy::AcceptsAnyIncorrect),
        _ => match parse_threshold(spec, "min_reject:") {
            Some(tau) => Ok(FalsePositivePolicy::MinRejectFraction(tau?)),
            None => Err(Failure::Config(anyhow!(
                "unknown policy {spec:?} (accepts_all_incorrect, accepts_any_incorrect or min_reject:TAU)"
            ))),
        },
    }
}

fn parse_ensemble(spec: &str) -> Result<EnsembleRule, Failure> {
    match spec {
        "majority" => Ok(EnsembleRule::StrictMajority),
        _ => match parse_threshold(spec, "threshold:") {
            Some(theta) => Ok(EnsembleRule::Threshold(theta?)),
            None => Err(Failure::Config(anyhow!(
                "unknown ensemble rule {spec:?} (majority or threshold:THETA)"
            ))),
        },
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum KeptEntry {
    Kept {
        kept: Vec<String>,
        labels: Vec<utlab::corpus::TestLabel>,
    },
    Skipped {
        skipped: String,
    },
}

#[derive(Serialize)]
struct QcReport {
    policy: FalsePositivePolicy,
    ensemble: EnsembleRule,
    tests: usize,
    kept: usize,
    problems: BTreeMap<String, KeptEntry>,
}

pub fn qc(s: &Settings) -> Result<(), Failure> {
    let layout = Layout::new(&s.out);
    let (evals, inputs) = load_evals(&layout)?;
    let policy = parse_policy(&s.policy)?;
    let rule = parse_ensemble(&s.ensemble)?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "qc", &inputs)?;

    let mut rows: Vec<(String, QualityReport)> = Vec::new();
    let mut problems = BTreeMap::new();
    let (mut tests, mut kept_total) = (0, 0);
    for e in &evals {
        let pid = e.problem_id().to_string();
        for t in e.matrix.test_ids() {
            rows.push((pid.clone(), quality::test_quality(&e.matrix, &e.gold, t).map_err(quality_failure)?));
        }
        rows.push((pid.clone(), quality::ensemble_quality(&e.matrix, &e.gold, rule).map_err(quality_failure)?));
        tests += e.matrix.n_tests();
        let entry = match quality::filter_false_positive(&e.matrix, &e.gold, policy) {
            Ok(kept) => {
                kept_total += kept.len();
                let labels = quality::label_tests(&e.matrix, &e.gold).map_err(quality_failure)?;
                KeptEntry::Kept { kept, labels }
            }
            Err(err @ (QualityError::NoCorrectSolution | QualityError::NoIncorrectSolution)) => {
                KeptEntry::Skipped { skipped: err.to_string() }
            }
            Err(err) => return Err(quality_failure(err)),
        };
        problems.insert(pid, entry);
    }

    let mut body = Vec::new();
    quality::write_quality_csv(&mut body, &rows).map_err(|e| Failure::Config(e.into()))?;
    artifacts::write_csv(&layout.file("quality.csv"), &prov, |w| w.write_all(&body))?;
    let report = QcReport {
        policy,
        ensemble: rule,
        tests,
        kept: kept_total,
        problems,
    };
    artifacts::write_json(&layout.file("qc_kept.json"), &prov, &report)?;
    println!("qc: kept {kept_total} of {tests} tests over {} problems", evals.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct PredictionReport {
    pub predictions: BTreeMap<String, f64>,
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub target_entropy: Option<f64>,
    #[serde(default)]
    pub diverged_at_epoch: Option<usize>,
}

pub fn probe(s: &Settings) -> Result<(), Failure> {
    let (corpus, mut inputs) = load(s, "probe")?;
    let seed = s.require_seed("probe")?;
    let layout = Layout::new(&s.out);
    let gpath = layout.file(GOLD);
    let measured = if gpath.is_file() {
        inputs.push(gpath.clone());
        Some(artifacts::read_gold(&gpath)?)
    } else {
        None
    };

    let mut ids = Vec::new();
    let mut dataset = Vec::new();
    let mut features = Vec::new();
    for p in corpus.problems.values() {
        let Some(x) = &p.feature_vector else {
            warn(format!("{}: no feature vector, skipped", p.problem_id));
            continue;
        };
        features.push((p.problem_id.clone(), x.clone()));
        let target = measured
            .as_ref()
            .and_then(|g| g.get(&p.problem_id))
            .and_then(GoldRecord::pass_rate)
            .or(p.gold_pass_rate);
        match target {
            Some(lambda) => {
                ids.push(p.problem_id.clone());
                dataset.push(ProbeSample::new(x.clone(), lambda));
            }
            None => warn(format!("{}: no pass rate to train on", p.problem_id)),
        }
    }
    if dataset.is_empty() {
        return Err(Failure::Experiment(anyhow!(
            "no problem has both a feature vector and a pass rate"
        )));
    }

    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "probe", &input_refs)?;
    let cfg = TrainConfig {
        hidden_size: s.hidden,
        learning_rate: s.lr,
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed,
        l2: s.l2,
    };
    let (outcome, diverged) = match difficulty::train_probe(&dataset, &cfg) {
        Ok(o) => (o, None),
        Err(DifficultyError::Diverged { epoch, partial }) => (*partial, Some(epoch)),
        Err(e) => return Err(difficulty_failure(e)),
    };

    let mut predictions = BTreeMap::new();
    for (pid, x) in &features {
        let lambda = difficulty::predict_lambda(&outcome.model, x).map_err(difficulty_failure)?;
        predictions.insert(pid.clone(), lambda);
    }
    let report = PredictionReport {
        predictions,
        targets: ids.iter().cloned().zip(dataset.iter().map(|d| d.lambda)).collect(),
        final_loss: outcome.history.last().copied(),
        target_entropy: Some(difficulty::target_entropy(&dataset)),
        diverged_at_epoch: diverged,
    };
    artifacts::write_json(&layout.file("probe_model.json"), &prov, &outcome.model)?;
    artifacts::write_csv(&layout.file("probe_loss.csv"), &prov, |w| {
        difficulty::write_loss_csv(w, &outcome.history, None)
    })?;
    artifacts::write_json(&layout.file(PREDICTIONS), &prov, &report)?;

    if let Some(epoch) = diverged {
        return Err(Failure::Experiment(anyhow!(
            "probe training diverged at epoch {epoch}; wrote the last finite model"
        )));
    }
    println!(
        "probe: {} samples, loss {:.4} -> {:.4} (target entropy {:.4})",
        dataset.len(),
        outcome.history.first().copied().unwrap_or(f64::NAN),
        report.final_loss.unwrap_or(f64::NAN),
        report.target_entropy.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Parses "40,2P" into budgets, with `kP` scaled by the problem count.
pub fn parse_budgets(spec: &str, problems: usize) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(anyhow!("bad budget list {spec:?}: expected entries like 40 or 2P"));
    let budgets: Vec<u64> = spec
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.strip_suffix(['P', 'p']) {
            Some("") => Ok(problems as u64),
            Some(k) => k.parse::<u64>().map(|k| k * problems as u64).map_err(|_| bad()),
            None => t.parse::<u64>().map_err(|_| bad()),
        })
        .collect::<Result<_, _>>()?;
    if budgets.is_empty() {
        return Err(bad());
    }
    Ok(budgets)
}

fn parse_strategies(spec: &str) -> Result<Vec<Strategy>, Failure> {
    match spec {
        "all" => Ok(Strategy::ALL.to_vec()),
        _ => Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == spec)
            .map(|st| vec![st])
            .ok_or_else(|| {
                Failure::Config(anyhow!(
                    "unknown strategy {spec:?} (greedy_gold, greedy_predicted, equal or all)"
                ))
            }),
    }
}

#[derive(Serialize)]
struct AllocationReport<'a> {
    problems: usize,
    n: Option<usize>,
    rows: &'a [ComparisonRow],
    plans: &'a [AllocationPlan],
}

pub fn allocate(s: &Settings) -> Result<(), Failure> {
    let layout = Layout::new(&s.out);
    let (evals, mut inputs) = load_evals(&layout)?;
    if evals.is_empty() {
        return Err(Failure::Experiment(anyhow!("no problems with gold results to allocate over")));
    }
    let cfg = bootstrap_config(s, "allocate")?;
    let strategies = parse_strategies(&s.strategy)?;
    let budgets = parse_budgets(&s.budgets, evals.len())?;

    let gold_lambdas: BTreeMap<String, f64> =
        evals.iter().map(|e| (e.problem_id().to_string(), e.pass_rate())).collect();
    let predicted = if strategies.contains(&Strategy::GreedyPredicted) {
        let path = layout.file(PREDICTIONS);
        artifacts::require(&path, "probe")?;
        let report: PredictionReport = artifacts::read_json(&path)?;
        inputs.push(path.clone());
        let mut lambdas = BTreeMap::new();
        for id in gold_lambdas.keys() {
            let l = report.predictions.get(id).ok_or_else(|| {
                Failure::Config(anyhow!("{} has no prediction for problem {id}", path.display()))
            })?;
            lambdas.insert(id.clone(), *l);
        }
        Some(lambdas)
    } else {
        None
    };
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let prov = provenance(s, "allocate", &input_refs)?;

    let ids: Vec<&str> = evals.iter().map(ProblemEval::problem_id).collect();
    // A problem cannot draw more tests than its pool holds.
    let caps: BTreeMap<String, u64> =
        evals.iter().map(|e| (e.problem_id().to_string(), e.matrix.n_tests() as u64)).collect();
    let mut rows = Vec::new();
    let mut plans = Vec::new();
    for &b in &budgets {
        for &st in &strategies {
            let plan = match st {
                Strategy::GreedyGold => allocator::greedy_allocate_capped(&gold_lambdas, &caps, b, st),
                Strategy::GreedyPredicted => {
                    allocator::greedy_allocate_capped(predicted.as_ref().expect("loaded above"), &caps, b, st)
                }
                Strategy::Equal => allocator::equal_allocate(&ids, b),
            }
            .map_err(alloc_failure)?;
            let estimate = allocator::evaluate_allocation(&plan, &evals, s.n, &cfg).map_err(alloc_failure)?;
            println!(
                "allocate: B={b} {st} mean={:.4} ci=[{:.4}, {:.4}]",
                estimate.mean, estimate.ci_low, estimate.ci_high
            );
            rows.push(ComparisonRow {
                strategy: st,
                budget: b,
                estimate,
            });
            plans.push(plan);
        }
    }
    artifacts::write_csv(&layout.file("allocation.csv"), &prov, |w| {
        allocator::write_comparison_csv(w, &rows, None)
    })?;
    let report = AllocationReport {
        problems: evals.len(),
        n: s.n,
        rows: &rows,
        plans: &plans,
    };
    artifacts::write_json(&layout.file("plans.json"), &prov, &report)?;
    Ok(())
}

#[derive(Serialize)]
struct DemoReport<'a> {
    synth: &'a SynthConfig,
    planted_pass_rates: &'a BTreeMap<String, f64>,
    /// Whether the executed matrices equal the verdicts the generator planted.
    matrices_match_planted: bool,
}

pub const DEMO_SEED: u64 = 42;

pub fn demo(s: &Settings) -> Result<(), Failure> {
    let mut s = s.clone();
    let seed = *s.seed.get_or_insert(DEMO_SEED);
    let synth_cfg = SynthConfig {
        problems: s.synth_problems,
        solutions: s.synth_solutions,
        tests: s.synth_tests,
        far: s.far,
        frr: s.frr,
        ..SynthConfig::new(seed)
    };
    if !(0.0..=1.0).contains(&synth_cfg.far) || !(0.0..=1.0).contains(&synth_cfg.frr) {
        return Err(Failure::Config(anyhow!("far and frr must lie in [0, 1]")));
    }
    if synth_cfg.problems == 0 || synth_cfg.solutions == 0 || synth_cfg.tests == 0 {
        return Err(Failure::Config(anyhow!("synthetic corpus sizes must be positive")));
    }
    let generated = synth::generate(&synth_cfg);
    let dir = s.out.join("corpus");
    let paths = [
        dir.join("problems.jsonl"),
        dir.join("solutions.jsonl"),
        dir.join("tests.jsonl"),
    ];
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Config(anyhow!("creating {}: {e}", dir.display())))?;
    generated
        .corpus
        .write_jsonl(&paths[0], &paths[1], &paths[2])
        .map_err(|e| Failure::Config(e.into()))?;
    s.corpus_paths = Some(paths);

    let matrices = execute(&s)?;
    let matches = matrices.len() == generated.matrices.len()
        && matrices.iter().all(|m| generated.matrices.get(m.problem_id()) == Some(m));
    if !matches {
        warn("executed verdicts differ from the planted ones");
    }
    select(&s)?;
    scale(&s)?;
    qc(&s)?;
    probe(&s)?;
    allocate(&s)?;

    let corpus_inputs: Vec<&Path> = s.corpus_paths.iter().flatten().map(PathBuf::as_path).collect();
    let prov = provenance(&s, "demo", &corpus_inputs)?;
    let report = DemoReport {
        synth: &synth_cfg,
        planted_pass_rates: &generated.pass_rates,
        matrices_match_planted: matches,
    };
    artifacts::write_json(&s.out.join("demo.json"), &prov, &report)?;
    Ok(())
}
