//! Sandboxed execution of every (solution, test) pair of a problem.
//!
//! Each pair runs in a fresh runner process with its own scratch directory
//! and a wall-clock deadline. Tasks are spread over a bounded pool of worker
//! threads; results are assembled by task index so the verdict matrix never
//! depends on scheduling.

mod cache;
mod process;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CachedOutcome, VerdictCache};

use crate::corpus::{Corpus, SolutionLabel, SolutionRecord, TestSpec};
use crate::protocol::{RunnerRequest, TestPayload};
use crate::reward::VerdictMatrix;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_OUTPUT_CAP: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid runner config: {0}")]
    InvalidConfig(String),
    #[error("runner `{command}` could not be started: {source}")]
    RunnerNotFound {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("problem {problem_id:?} has an empty {pool} pool")]
    EmptyPool {
        problem_id: String,
        pool: &'static str,
    },
    #[error("problem {0:?} has no gold tests")]
    NoGoldTests(String),
    #[error("writing verdict cache: {0}")]
    Cache(#[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
    Timeout,
}

impl Verdict {
    /// The binary reward: only a pass scores.
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerConfig {
    /// Program and arguments of the runner process.
    pub command: Vec<String>,
    pub timeout: Duration,
    /// Address-space limit applied to the runner where the platform allows.
    pub memory_cap: Option<u64>,
    pub workers: usize,
    /// Bytes kept of a reply and of any detail text.
    pub output_cap: usize,
}

impl RunnerConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout: DEFAULT_TIMEOUT,
            memory_cap: None,
            workers: 1,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.command.first().is_none_or(|c| c.is_empty()) {
            return Err(ExecError::InvalidConfig("runner command is empty".into()));
        }
        if self.workers == 0 {
            return Err(ExecError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(ExecError::InvalidConfig("timeout must be positive".into()));
        }
        if self.output_cap == 0 {
            return Err(ExecError::InvalidConfig("output cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecTask {
    pub problem_id: String,
    pub solution_id: String,
    pub test_id: String,
    pub request: RunnerRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub problem_id: String,
    pub solution_id: String,
    pub test_id: String,
    pub verdict: Verdict,
    /// Seconds; for cache hits, the time of the original run.
    pub wall_time: f64,
    pub detail: String,
    pub cached: bool,
}

/// Verdict matrix plus the per-cell outcomes it was built from (row-major).
#[derive(Debug, Clone)]
pub struct MatrixRun {
    pub matrix: VerdictMatrix,
    pub outcomes: Vec<ExecOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldResult {
    pub solution_id: String,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GoldRun {
    pub results: Vec<GoldResult>,
    /// The solution pool with labels assigned from the gold verdicts.
    pub labeled: Vec<SolutionRecord>,
    pub outcomes: Vec<ExecOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    pub spawned: usize,
    pub cache_hits: usize,
}

/// Runs tasks through the runner with an optional verdict cache.
#[derive(Debug)]
pub struct Executor {
    cfg: RunnerConfig,
    cache: Option<Arc<VerdictCache>>,
    spawned: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Executor {
    pub fn new(cfg: RunnerConfig) -> Result<Self, ExecError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            cache: None,
            spawned: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn with_cache(mut self, cache: Arc<VerdictCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.cfg
    }

    pub fn stats(&self) -> ExecStats {
        ExecStats {
            spawned: self.spawned.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// Runs every solution of `problem_id` against every test in its pool.
    pub fn run_matrix(&self, corpus: &Corpus, problem_id: &str) -> Result<MatrixRun, ExecError> {
        let problem = corpus
            .problem(problem_id)
            .ok_or_else(|| ExecError::UnknownProblem(problem_id.to_string()))?;
        let solutions = corpus.solution_pool(problem_id);
        let tests = corpus.test_pool(problem_id);
        if solutions.is_empty() {
            return Err(ExecError::EmptyPool {
                problem_id: problem_id.to_string(),
                pool: "solution",
            });
        }
        if tests.is_empty() {
            return Err(ExecError::EmptyPool {
                problem_id: problem_id.to_string(),
                pool: "test",
            });
        }
        let tasks = self.tasks_for(problem_id, &problem.entry_point, solutions, tests);
        let outcomes = self.run_tasks(&tasks)?;
        let rows = outcomes
            .chunks(tests.len())
            .map(|row| row.iter().map(|o| o.verdict.passed()).collect())
            .collect();
        let matrix = VerdictMatrix::new(
            problem_id,
            solutions.iter().map(|s| s.solution_id.clone()).collect(),
            tests.iter().map(|t| t.test_id.clone()).collect(),
            rows,
        )
        .expect("matrix shape follows the task grid");
        Ok(MatrixRun { matrix, outcomes })
    }

    /// Runs every solution against the gold suite; a solution passes iff it
    /// passes every gold test.
    pub fn run_gold(&self, corpus: &Corpus, problem_id: &str) -> Result<GoldRun, ExecError> {
        let problem = corpus
            .problem(problem_id)
            .ok_or_else(|| ExecError::UnknownProblem(problem_id.to_string()))?;
        if problem.gold_tests.is_empty() {
            return Err(ExecError::NoGoldTests(problem_id.to_string()));
        }
        let solutions = corpus.solution_pool(problem_id);
        let gold = &problem.gold_tests;
        let tasks = self.tasks_for(problem_id, &problem.entry_point, solutions, gold);
        let outcomes = self.run_tasks(&tasks)?;
        let mut results = Vec::with_capacity(solutions.len());
        let mut labeled = Vec::with_capacity(solutions.len());
        for (solution, row) in solutions.iter().zip(outcomes.chunks(gold.len())) {
            let passed = row.iter().all(|o| o.verdict.passed());
            results.push(GoldResult {
                solution_id: solution.solution_id.clone(),
                passed,
            });
            let mut s = solution.clone();
            s.label = if passed {
                SolutionLabel::Correct
            } else {
                SolutionLabel::Incorrect
            };
            labeled.push(s);
        }
        Ok(GoldRun {
            results,
            labeled,
            outcomes,
        })
    }

    fn tasks_for(
        &self,
        problem_id: &str,
        entry_point: &str,
        solutions: &[SolutionRecord],
        tests: &[TestSpec],
    ) -> Vec<ExecTask> {
        let timeout_s = self.cfg.timeout.as_secs_f64();
        solutions
            .iter()
            .flat_map(|s| {
                tests.iter().map(move |t| ExecTask {
                    problem_id: problem_id.to_string(),
                    solution_id: s.solution_id.clone(),
                    test_id: t.test_id.clone(),
                    request: RunnerRequest {
                        entry_point: entry_point.to_string(),
                        source_code: s.source_code.clone(),
                        test: TestPayload::from(t),
                        timeout_s,
                    },
                })
            })
            .collect()
    }

    /// Runs tasks on the worker pool. Output order equals input order.
    pub fn run_tasks(&self, tasks: &[ExecTask]) -> Result<Vec<ExecOutcome>, ExecError> {
        let slots: Vec<Mutex<Option<ExecOutcome>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let fatal: Mutex<Option<std::io::Error>> = Mutex::new(None);
        let workers = self.cfg.workers.min(tasks.len()).max(1);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    let Some(task) = tasks.get(idx) else { break };
                    match self.run_one(task) {
                        Ok(outcome) => *slots[idx].lock().unwrap() = Some(outcome),
                        Err(process::SpawnError(e)) => {
                            abort.store(true, Ordering::Relaxed);
                            fatal.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        let flushed = self.cache.as_ref().map_or(Ok(()), |c| c.flush());
        if let Some(source) = fatal.into_inner().unwrap() {
            return Err(ExecError::RunnerNotFound {
                command: self.cfg.command.join(" "),
                source,
            });
        }
        flushed.map_err(ExecError::Cache)?;
        Ok(slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every task ran"))
            .collect())
    }

    fn run_one(&self, task: &ExecTask) -> Result<ExecOutcome, process::SpawnError> {
        let request = serde_json::to_vec(&task.request).expect("requests serialize");
        let key = self.cache.as_ref().map(|_| {
            cache_key(&self.cfg.command, &request, self.cfg.memory_cap, self.cfg.output_cap)
        });
        let outcome = |verdict, detail, wall_time, cached| ExecOutcome {
            problem_id: task.problem_id.clone(),
            solution_id: task.solution_id.clone(),
            test_id: task.test_id.clone(),
            verdict,
            wall_time,
            detail,
            cached,
        };

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(outcome(hit.verdict, hit.detail, hit.wall_time, true));
            }
        }

        self.spawned.fetch_add(1, Ordering::Relaxed);
        let inv = process::invoke(&self.cfg, &request)?;
        if let (Some(cache), Some(key), true) = (&self.cache, key, inv.cacheable) {
            cache.insert(
                key,
                CachedOutcome {
                    verdict: inv.verdict,
                    detail: inv.detail.clone(),
                    wall_time: inv.wall_time,
                },
            );
        }
        Ok(outcome(inv.verdict, inv.detail, inv.wall_time, false))
    }
}

/// Convenience wrapper: uncached [`Executor::run_matrix`].
pub fn run_matrix(corpus: &Corpus, problem_id: &str, cfg: &RunnerConfig) -> Result<MatrixRun, ExecError> {
    Executor::new(cfg.clone())?.run_matrix(corpus, problem_id)
}

/// Convenience wrapper: uncached [`Executor::run_gold`].
pub fn run_gold(corpus: &Corpus, problem_id: &str, cfg: &RunnerConfig) -> Result<GoldRun, ExecError> {
    Executor::new(cfg.clone())?.run_gold(corpus, problem_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(RunnerConfig::new(vec![]).validate().is_err());
        let mut cfg = RunnerConfig::new(vec!["runner".into()]);
        assert!(cfg.validate().is_ok());
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
        cfg.workers = 2;
        cfg.timeout = Duration::ZERO;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults() {
        let cfg = RunnerConfig::new(vec!["r".into()]);
        assert_eq!(cfg.timeout, Duration::from_secs(10));
        assert_eq!(cfg.output_cap, 16 * 1024);
    }

    #[test]
    fn only_pass_scores() {
        assert!(Verdict::Pass.passed());
        for v in [Verdict::Fail, Verdict::Error, Verdict::Timeout] {
            assert!(!v.passed());
        }
    }
}
