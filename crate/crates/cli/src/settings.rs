//! Effective run settings: flags over config file over defaults.
//!
//! The config file is flat TOML whose keys are the long flag names with
//! underscores, e.g. `runner_cmd = "python3 -m harness"`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use utlab::scalinglab::{Resampling, TieMode};

use crate::Failure;

/// Every tunable, all optional. Used both for the config file and as the
/// merge target for flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub timeout: Option<f64>,
    pub runner_cmd: Option<String>,
    pub no_cache: Option<bool>,
    pub cache: Option<PathBuf>,
    pub memory_mb: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub problems: Option<PathBuf>,
    pub solutions: Option<PathBuf>,
    pub tests: Option<PathBuf>,
    pub tie: Option<String>,
    pub grid: Option<String>,
    pub samples: Option<usize>,
    pub mode: Option<String>,
    pub policy: Option<String>,
    pub ensemble: Option<String>,
    pub hidden: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub l2: Option<f64>,
    pub budgets: Option<String>,
    pub strategy: Option<String>,
    pub n: Option<usize>,
    pub synth_problems: Option<usize>,
    pub synth_solutions: Option<usize>,
    pub synth_tests: Option<usize>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
}

/// Copies every `Some` field of `$src` into `$dst`.
macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = &$src.$field { $dst.$field = Some(v.clone()); })+
    };
}

#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// Flat TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and reports [default: utlab-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel runner processes [default: 1].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Per-execution deadline in seconds [default: 10].
    #[arg(long, global = true)]
    pub timeout: Option<f64>,
    /// Runner command line, split on whitespace [default: built-in mock runner].
    #[arg(long, global = true)]
    pub runner_cmd: Option<String>,
    /// Ignore and do not update the verdict cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Verdict cache file [default: <out>/.cache/verdicts.jsonl].
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Address-space cap for runner processes, in MiB.
    #[arg(long, global = true)]
    pub memory_mb: Option<u64>,
}

impl SharedArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, out, seed, workers, timeout, runner_cmd, cache, memory_mb);
        if self.no_cache {
            k.no_cache = Some(true);
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CorpusArgs {
    /// Directory holding problems.jsonl, solutions.jsonl and tests.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub problems: Option<PathBuf>,
    #[arg(long)]
    pub solutions: Option<PathBuf>,
    #[arg(long)]
    pub tests: Option<PathBuf>,
}

impl CorpusArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, corpus, problems, solutions, tests);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TieArgs {
    /// Tie rule among top-voted solutions: lowest or random [default: lowest].
    #[arg(long)]
    pub tie: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScaleArgs {
    /// Grid of (n, m) points, e.g. "1x1,4x8".
    #[arg(long)]
    pub grid: Option<String>,
    /// Bootstrap resamples per point [default: 100].
    #[arg(long)]
    pub samples: Option<usize>,
    /// bootstrap or exhaustive [default: bootstrap].
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub tie: TieArgs,
}

impl ScaleArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, grid, samples, mode);
        overlay!(k, self.tie, tie);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct QcArgs {
    /// accepts_all_incorrect, accepts_any_incorrect or min_reject:TAU.
    #[arg(long)]
    pub policy: Option<String>,
    /// majority or threshold:THETA.
    #[arg(long)]
    pub ensemble: Option<String>,
}

impl QcArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, policy, ensemble);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProbeArgs {
    /// Hidden units [default: 64].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Learning rate [default: 0.05].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight decay [default: 0].
    #[arg(long)]
    pub l2: Option<f64>,
}

impl ProbeArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, hidden, lr, epochs, batch_size, l2);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AllocateArgs {
    /// Comma-separated budgets; `kP` means k times the problem count [default: 1P,2P,4P].
    #[arg(long)]
    pub budgets: Option<String>,
    /// greedy_gold, greedy_predicted, equal or all [default: all].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Solutions drawn per problem [default: whole pool].
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub tie: TieArgs,
}

impl AllocateArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, budgets, strategy, n, samples);
        overlay!(k, self.tie, tie);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct DemoArgs {
    /// Problems in the synthetic corpus [default: 40].
    #[arg(long)]
    pub synth_problems: Option<usize>,
    /// Solutions per problem [default: 16].
    #[arg(long)]
    pub synth_solutions: Option<usize>,
    /// Unit tests per problem [default: 32].
    #[arg(long)]
    pub synth_tests: Option<usize>,
    /// Chance a test accepts an incorrect solution [default: 0.3].
    #[arg(long)]
    pub far: Option<f64>,
    /// Chance a test rejects a correct solution [default: 0.1].
    #[arg(long)]
    pub frr: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

impl DemoArgs {
    pub fn apply(&self, k: &mut Knobs) {
        overlay!(k, self, synth_problems, synth_solutions, synth_tests, far, frr, samples);
    }
}

pub fn read_config_file(path: &Path) -> Result<Knobs, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Config)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(Failure::Config)
}

/// Resolved settings. Serialized (minus location-only fields) into the
/// config hash.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: usize,
    pub timeout: f64,
    /// `None` means the built-in mock runner.
    pub runner_cmd: Option<Vec<String>>,
    pub no_cache: bool,
    pub cache: PathBuf,
    pub memory_mb: Option<u64>,
    pub corpus_paths: Option<[PathBuf; 3]>,
    pub tie: TieMode,
    pub grid: Option<String>,
    pub samples: usize,
    pub mode: Resampling,
    pub policy: String,
    pub ensemble: String,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub budgets: String,
    pub strategy: String,
    pub n: Option<usize>,
    pub synth_problems: usize,
    pub synth_solutions: usize,
    pub synth_tests: usize,
    pub far: f64,
    pub frr: f64,
}

/// Fields that only say where things live or how fast they run.
const UNHASHED: [&str; 6] = ["out", "workers", "no_cache", "cache", "corpus_paths", "memory_mb"];

impl Settings {
    pub fn resolve(k: Knobs) -> Result<Self, Failure> {
        Self::try_resolve(k).map_err(Failure::Config)
    }

    fn try_resolve(k: Knobs) -> anyhow::Result<Self> {
        let out = k.out.unwrap_or_else(|| PathBuf::from("utlab-out"));
        let runner_cmd = match k.runner_cmd {
            Some(s) => {
                let parts: Vec<String> = s.split_whitespace().map(str::to_string).collect();
                if parts.is_empty() {
                    bail!("runner_cmd is empty");
                }
                Some(parts)
            }
            None => None,
        };
        let corpus_paths = match (k.corpus, k.problems, k.solutions, k.tests) {
            (_, Some(p), Some(s), Some(t)) => Some([p, s, t]),
            (Some(dir), None, None, None) => Some([
                dir.join("problems.jsonl"),
                dir.join("solutions.jsonl"),
                dir.join("tests.jsonl"),
            ]),
            (None, None, None, None) => None,
            _ => bail!("give either --corpus DIR or all of --problems, --solutions and --tests"),
        };
        let tie = match k.tie.as_deref().unwrap_or("lowest") {
            "lowest" => TieMode::LowestIndex,
            "random" => TieMode::Random,
            other => bail!("unknown tie rule {other:?} (expected lowest or random)"),
        };
        let mode = match k.mode.as_deref().unwrap_or("bootstrap") {
            "bootstrap" => Resampling::Bootstrap,
            "exhaustive" => Resampling::Exhaustive,
            other => bail!("unknown mode {other:?} (expected bootstrap or exhaustive)"),
        };
        let timeout = k.timeout.unwrap_or(10.0);
        if !(timeout > 0.0 && timeout.is_finite()) {
            bail!("timeout must be a positive number of seconds");
        }
        Ok(Self {
            cache: k.cache.unwrap_or_else(|| out.join(".cache").join("verdicts.jsonl")),
            out,
            seed: k.seed,
            workers: k.workers.unwrap_or(1),
            timeout,
            runner_cmd,
            no_cache: k.no_cache.unwrap_or(false),
            memory_mb: k.memory_mb,
            corpus_paths,
            tie,
            grid: k.grid,
            samples: k.samples.unwrap_or(100),
            mode,
            policy: k.policy.unwrap_or_else(|| "accepts_all_incorrect".into()),
            ensemble: k.ensemble.unwrap_or_else(|| "majority".into()),
            hidden: k.hidden.unwrap_or(utlab::difficulty::DEFAULT_HIDDEN),
            lr: k.lr.unwrap_or(0.05),
            epochs: k.epochs.unwrap_or(300),
            batch_size: k.batch_size.unwrap_or(8),
            l2: k.l2.unwrap_or(0.0),
            budgets: k.budgets.unwrap_or_else(|| "1P,2P,4P".into()),
            strategy: k.strategy.unwrap_or_else(|| "all".into()),
            n: k.n,
            synth_problems: k.synth_problems.unwrap_or(40),
            synth_solutions: k.synth_solutions.unwrap_or(16),
            synth_tests: k.synth_tests.unwrap_or(32),
            far: k.far.unwrap_or(0.3),
            frr: k.frr.unwrap_or(0.1),
        })
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, Failure> {
        self.seed
            .ok_or_else(|| Failure::Config(anyhow!("`{command}` is stochastic and needs --seed")))
    }

    pub fn corpus_paths(&self, command: &str) -> Result<&[PathBuf; 3], Failure> {
        self.corpus_paths.as_ref().ok_or_else(|| {
            Failure::Config(anyhow!(
                "`{command}` needs a corpus: --corpus DIR or --problems/--solutions/--tests"
            ))
        })
    }

    /// Hash of the command, the result-affecting settings and the content
    /// of every input file.
    pub fn config_hash(&self, command: &str, input_digests: &[(String, String)]) -> String {
        let mut value = serde_json::to_value(self).expect("settings serialize");
        if let Some(map) = value.as_object_mut() {
            for key in UNHASHED {
                map.remove(key);
            }
        }
        let doc = serde_json::json!({
            "command": command,
            "settings": value,
            "inputs": input_digests,
        });
        let digest = Sha256::digest(serde_json::to_vec(&doc).expect("hash document serializes"));
        hex::encode(&digest[..8])
    }
}
