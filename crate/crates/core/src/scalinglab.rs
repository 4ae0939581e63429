//! Bootstrap scaling experiments.
//!
//! For a grid of (n solutions, m tests) points, each bootstrap sample draws n
//! solution rows and m test columns with replacement from every problem's
//! verdict matrix, selects a candidate by majority vote, and scores it against
//! the gold labels. The statistic of a sample is the fraction of problems whose
//! selected candidate is correct; a point reports the mean over samples and a
//! 2.5/97.5 percentile interval.
//!
//! Draws for a problem come from a stream seeded by `(seed, problem_id)`, so
//! adding or removing a problem never changes another problem's draws.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::report::Provenance;
use crate::reward::{self, select_from_counts, TieBreaker, VerdictMatrix};

/// Draw spaces larger than this are refused in exhaustive mode.
pub const MAX_EXHAUSTIVE_DRAWS: f64 = 5e6;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("no problems to evaluate")]
    NoProblems,
    #[error("problem {problem_id:?}: {what} = {value} outside [{min}, {max}]")]
    OutOfRange {
        problem_id: String,
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },
    #[error("problem {problem_id:?}: {labels} gold labels for {solutions} solutions")]
    LabelMismatch {
        problem_id: String,
        labels: usize,
        solutions: usize,
    },
    #[error("samples must be at least 1")]
    NoSamples,
    #[error("exhaustive enumeration of {0:.0} draws is too large")]
    TooLarge(f64),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("only {0} problems have a correct solution; need at least 5 for quintiles")]
    TooFewProblems(usize),
    #[error("bad grid spec {0:?}: expected entries like 1x1,2x100")]
    BadGrid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One problem's verdict matrix with per-solution gold outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemEval {
    pub matrix: VerdictMatrix,
    /// `gold[i]` is true iff solution `i` passes the gold suite.
    pub gold: Vec<bool>,
}

impl ProblemEval {
    pub fn new(matrix: VerdictMatrix, gold: Vec<bool>) -> Result<Self, ScalingError> {
        if gold.len() != matrix.n_solutions() {
            return Err(ScalingError::LabelMismatch {
                problem_id: matrix.problem_id().to_string(),
                labels: gold.len(),
                solutions: matrix.n_solutions(),
            });
        }
        Ok(Self { matrix, gold })
    }

    pub fn problem_id(&self) -> &str {
        self.matrix.problem_id()
    }

    /// Fraction of solutions passing the gold suite.
    pub fn pass_rate(&self) -> f64 {
        if self.gold.is_empty() {
            return 0.0;
        }
        self.gold.iter().filter(|&&g| g).count() as f64 / self.gold.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    #[default]
    LowestIndex,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Bootstrap,
    /// Exact expectation over every possible draw (small pools only).
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub seed: u64,
    pub samples: usize,
    pub tie: TieMode,
    pub mode: Resampling,
}

impl BootstrapConfig {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self {
            seed,
            samples,
            tie: TieMode::LowestIndex,
            mode: Resampling::Bootstrap,
        }
    }

    pub fn exhaustive() -> Self {
        Self {
            seed: 0,
            samples: 1,
            tie: TieMode::LowestIndex,
            mode: Resampling::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard deviation of the bootstrap statistic (0 when exact).
    pub std_dev: f64,
}

impl Estimate {
    pub fn standard_error(&self, samples: usize) -> f64 {
        self.std_dev / (samples as f64).sqrt()
    }

    fn exact(mean: f64) -> Self {
        Self {
            mean,
            ci_low: mean,
            ci_high: mean,
            std_dev: 0.0,
        }
    }

    fn from_samples(mut stats: Vec<f64>) -> Self {
        let k = stats.len() as f64;
        let mean = stats.iter().sum::<f64>() / k;
        let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        stats.sort_by(f64::total_cmp);
        // The mean can fall outside the percentile band for very skewed
        // statistics; the interval is widened to contain it.
        Self {
            mean,
            ci_low: percentile(&stats, 0.025).min(mean),
            ci_high: percentile(&stats, 0.975).max(mean),
            std_dev: var.sqrt(),
        }
    }
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Number of solutions and tests to draw for one problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub n: usize,
    pub m: usize,
}

/// Best-of-n accuracy at (n, m), uniformly across problems.
pub fn best_of_n_accuracy(
    problems: &[ProblemEval],
    n: usize,
    m: usize,
    cfg: &BootstrapConfig,
) -> Result<Estimate, ScalingError> {
    let draws = vec![Draw { n, m }; problems.len()];
    accuracy_with_draws(problems, &draws, cfg)
}

/// Best-of-n accuracy with a per-problem draw size (`draws[k]` for
/// `problems[k]`).
pub fn accuracy_with_draws(
    problems: &[ProblemEval],
    draws: &[Draw],
    cfg: &BootstrapConfig,
) -> Result<Estimate, ScalingError> {
    if problems.is_empty() {
        return Err(ScalingError::NoProblems);
    }
    if draws.len() != problems.len() {
        return Err(ScalingError::Domain(format!(
            "{} draw sizes for {} problems",
            draws.len(),
            problems.len()
        )));
    }
    if cfg.samples == 0 && cfg.mode == Resampling::Bootstrap {
        return Err(ScalingError::NoSamples);
    }
    for (p, d) in problems.iter().zip(draws) {
        check_draw(p, *d)?;
    }

    match cfg.mode {
        Resampling::Exhaustive => {
            let per_problem = problems
                .par_iter()
                .zip(draws.par_iter())
                .map(|(p, d)| exact_problem_accuracy(p, *d, cfg.tie))
                .collect::<Result<Vec<f64>, _>>()?;
            let mean = per_problem.iter().sum::<f64>() / problems.len() as f64;
            Ok(Estimate::exact(mean))
        }
        Resampling::Bootstrap => {
            let per_problem: Vec<Vec<bool>> = problems
                .par_iter()
                .zip(draws.par_iter())
                .map(|(p, d)| bootstrap_problem(p, *d, cfg))
                .collect();
            let stats = (0..cfg.samples)
                .map(|s| {
                    let hits = per_problem.iter().filter(|outcomes| outcomes[s]).count();
                    hits as f64 / problems.len() as f64
                })
                .collect();
            Ok(Estimate::from_samples(stats))
        }
    }
}

fn check_draw(p: &ProblemEval, d: Draw) -> Result<(), ScalingError> {
    let (big_n, big_m) = (p.matrix.n_solutions(), p.matrix.n_tests());
    if p.gold.len() != big_n {
        return Err(ScalingError::LabelMismatch {
            problem_id: p.problem_id().to_string(),
            labels: p.gold.len(),
            solutions: big_n,
        });
    }
    if d.n == 0 || d.n > big_n {
        return Err(ScalingError::OutOfRange {
            problem_id: p.problem_id().to_string(),
            what: "n",
            value: d.n,
            min: 1,
            max: big_n,
        });
    }
    if d.m > big_m {
        return Err(ScalingError::OutOfRange {
            problem_id: p.problem_id().to_string(),
            what: "m",
            value: d.m,
            min: 0,
            max: big_m,
        });
    }
    Ok(())
}

/// 32-byte stream seed derived from the experiment seed, a purpose tag and
/// the problem id.
pub fn sub_seed(seed: u64, purpose: &str, problem_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(problem_id.as_bytes());
    h.finalize().into()
}

fn bootstrap_problem(p: &ProblemEval, d: Draw, cfg: &BootstrapConfig) -> Vec<bool> {
    let (big_n, big_m) = (p.matrix.n_solutions(), p.matrix.n_tests());
    let mut rng = ChaCha8Rng::from_seed(sub_seed(cfg.seed, "draw", p.problem_id()));
    let mut tie = match cfg.tie {
        TieMode::LowestIndex => TieBreaker::LowestIndex,
        TieMode::Random => {
            TieBreaker::Random(Box::new(ChaCha8Rng::from_seed(sub_seed(cfg.seed, "tie", p.problem_id()))))
        }
    };
    let mut rows = vec![0usize; d.n];
    let mut cols = vec![0usize; d.m];
    (0..cfg.samples)
        .map(|_| {
            rows.iter_mut().for_each(|r| *r = rng.gen_range(0..big_n));
            cols.iter_mut().for_each(|c| *c = rng.gen_range(0..big_m));
            let counts = reward::drawn_counts(&p.matrix, &rows, &cols);
            let sel = select_from_counts(counts, &mut tie);
            p.gold[rows[sel.chosen_index]]
        })
        .collect()
}

/// Exact expected accuracy of one problem over all `N^n · M^m` draws.
fn exact_problem_accuracy(p: &ProblemEval, d: Draw, tie: TieMode) -> Result<f64, ScalingError> {
    let (big_n, big_m) = (p.matrix.n_solutions(), p.matrix.n_tests());
    let space = (big_n as f64).powi(d.n as i32) * (big_m as f64).powi(d.m as i32);
    if space > MAX_EXHAUSTIVE_DRAWS {
        return Err(ScalingError::TooLarge(space));
    }
    let mut rows = vec![0usize; d.n];
    let mut total = 0.0;
    let mut count = 0u64;
    loop {
        let mut cols = vec![0usize; d.m];
        loop {
            let counts = reward::drawn_counts(&p.matrix, &rows, &cols);
            let max = *counts.iter().max().expect("n >= 1");
            let ties: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] == max).collect();
            total += match tie {
                TieMode::LowestIndex => f64::from(u8::from(p.gold[rows[ties[0]]])),
                TieMode::Random => {
                    ties.iter().filter(|&&k| p.gold[rows[k]]).count() as f64 / ties.len() as f64
                }
            };
            count += 1;
            if !advance(&mut cols, big_m) {
                break;
            }
        }
        if !advance(&mut rows, big_n) {
            break;
        }
    }
    Ok(total / count as f64)
}

/// Odometer increment over `[0, base)^len`; false once it wraps around.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub m: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCurve {
    pub points: Vec<CurvePoint>,
    pub samples: usize,
    pub seed: u64,
    pub mode: Resampling,
    pub tie: TieMode,
}

/// Evaluates every grid point.
pub fn scaling_curve(
    problems: &[ProblemEval],
    grid: &[(usize, usize)],
    cfg: &BootstrapConfig,
) -> Result<ScalingCurve, ScalingError> {
    let points = grid
        .iter()
        .map(|&(n, m)| {
            let e = best_of_n_accuracy(problems, n, m, cfg)?;
            Ok(CurvePoint {
                n,
                m,
                mean: e.mean,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
            })
        })
        .collect::<Result<_, ScalingError>>()?;
    Ok(ScalingCurve {
        points,
        samples: cfg.samples,
        seed: cfg.seed,
        mode: cfg.mode,
        tie: cfg.tie,
    })
}

/// Parses `"1x1,2x100"` into `[(1, 1), (2, 100)]`.
pub fn parse_grid(spec: &str) -> Result<Vec<(usize, usize)>, ScalingError> {
    let bad = || ScalingError::BadGrid(spec.to_string());
    let grid: Vec<(usize, usize)> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (n, m) = item.split_once(['x', 'X']).ok_or_else(bad)?;
            Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
        })
        .collect::<Result<_, ScalingError>>()?;
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, computed as a running
/// product so large `n` never overflows.
pub fn pass_at_k(c: u64, n: u64, k: u64) -> Result<f64, ScalingError> {
    if c > n || k == 0 || k > n {
        return Err(ScalingError::Domain(format!(
            "pass@k needs 0 <= c <= n and 1 <= k <= n (c={c}, n={n}, k={k})"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Problems split into five rank buckets by gold pass rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quintiles {
    /// `buckets[0]` has the highest pass rates (easiest).
    pub buckets: Vec<Vec<String>>,
    /// Problems without a single correct solution.
    pub excluded: Vec<String>,
}

/// Drops problems with pass rate 0 and splits the rest by descending pass
/// rate (ties by problem id) into five buckets whose sizes differ by at most
/// one, larger buckets first.
pub fn difficulty_quintiles(rates: &[(String, f64)]) -> Result<Quintiles, ScalingError> {
    let (mut kept, excluded): (Vec<_>, Vec<_>) = rates.iter().cloned().partition(|(_, r)| *r > 0.0);
    if kept.len() < 5 {
        return Err(ScalingError::TooFewProblems(kept.len()));
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (base, extra) = (kept.len() / 5, kept.len() % 5);
    let mut iter = kept.into_iter().map(|(id, _)| id);
    let buckets = (0..5)
        .map(|b| iter.by_ref().take(base + usize::from(b < extra)).collect())
        .collect();
    let mut excluded: Vec<String> = excluded.into_iter().map(|(id, _)| id).collect();
    excluded.sort();
    Ok(Quintiles { buckets, excluded })
}

/// Gold pass rate per problem, in input order.
pub fn pass_rates(problems: &[ProblemEval]) -> Vec<(String, f64)> {
    problems
        .iter()
        .map(|p| (p.problem_id().to_string(), p.pass_rate()))
        .collect()
}

/// One scaling curve per difficulty bucket, 1-based bucket numbers.
pub fn quintile_curves(
    problems: &[ProblemEval],
    quintiles: &Quintiles,
    grid: &[(usize, usize)],
    cfg: &BootstrapConfig,
) -> Result<Vec<(usize, ScalingCurve)>, ScalingError> {
    quintiles
        .buckets
        .iter()
        .enumerate()
        .map(|(b, ids)| {
            let members: Vec<ProblemEval> = problems
                .iter()
                .filter(|p| ids.iter().any(|id| id == p.problem_id()))
                .cloned()
                .collect();
            Ok((b + 1, scaling_curve(&members, grid, cfg)?))
        })
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// CSV `n,m,mean,ci_low,ci_high`, optionally preceded by a provenance line.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    curve: &ScalingCurve,
    provenance: Option<&Provenance>,
) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_comment(&mut w)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "m", "mean", "ci_low", "ci_high"])?;
    for p in &curve.points {
        out.write_record([p.n.to_string(), p.m.to_string(), fmt(p.mean), fmt(p.ci_low), fmt(p.ci_high)])?;
    }
    out.flush()
}

/// CSV `bucket,n,m,mean,ci_low,ci_high`.
pub fn write_quintile_csv<W: Write>(
    mut w: W,
    curves: &[(usize, ScalingCurve)],
    provenance: Option<&Provenance>,
) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_comment(&mut w)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bucket", "n", "m", "mean", "ci_low", "ci_high"])?;
    for (bucket, curve) in curves {
        for p in &curve.points {
            out.write_record([
                bucket.to_string(),
                p.n.to_string(),
                p.m.to_string(),
                fmt(p.mean),
                fmt(p.ci_low),
                fmt(p.ci_high),
            ])?;
        }
    }
    out.flush()
}

#[derive(Serialize)]
struct CurveMeta<'a> {
    provenance: Option<&'a Provenance>,
    seed: u64,
    samples: usize,
    mode: Resampling,
    tie: TieMode,
    grid: Vec<(usize, usize)>,
}

/// Writes `<base>.csv` and `<base>.json` (seed, samples, grid) and returns
/// both paths.
pub fn curve_report(
    curve: &ScalingCurve,
    base: &Path,
    provenance: Option<&Provenance>,
) -> Result<(PathBuf, PathBuf), ScalingError> {
    let csv_path = base.with_extension("csv");
    let json_path = base.with_extension("json");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScalingError::Io { path, source }
    };

    let mut w = BufWriter::new(File::create(&csv_path).map_err(io(&csv_path))?);
    write_curve_csv(&mut w, curve, provenance).map_err(io(&csv_path))?;
    w.flush().map_err(io(&csv_path))?;

    let meta = CurveMeta {
        provenance,
        seed: curve.seed,
        samples: curve.samples,
        mode: curve.mode,
        tie: curve.tie,
        grid: curve.points.iter().map(|p| (p.n, p.m)).collect(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&json_path, text + "\n").map_err(io(&json_path))?;
    Ok((csv_path, json_path))
}
