//! Synthetic corpus with known pass rates, for the demo and for tests.
//!
//! Every problem gets `solutions` mock solutions of which an exact, planted
//! number are correct, and `tests` mock unit tests that behave as independent
//! noisy classifiers: each test accepts each incorrect solution with
//! probability `far` and rejects each correct one with probability `frr`.
//! The gold suite is a single test accepting exactly the correct solutions.
//! Feature vectors carry a noisy copy of the pass-rate logit plus pure noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, ProblemRecord, SolutionLabel, SolutionRecord, TestSpec};
use crate::mock::{MockSolution, MockTest};
use crate::reward::VerdictMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub problems: usize,
    pub solutions: usize,
    pub tests: usize,
    pub far: f64,
    pub frr: f64,
    pub feature_dim: usize,
    /// Standard deviation of the noise on the informative features.
    pub feature_noise: f64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            problems: 40,
            solutions: 16,
            tests: 32,
            far: 0.3,
            frr: 0.1,
            feature_dim: 6,
            feature_noise: 0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Planted pass rate per problem (correct solutions / pool size).
    pub pass_rates: BTreeMap<String, f64>,
    /// Verdicts the planted tests produce, per problem.
    pub matrices: BTreeMap<String, VerdictMatrix>,
    /// Planted correctness per problem, in solution order.
    pub gold: BTreeMap<String, Vec<bool>>,
}

/// Number of correct solutions for each problem: a spread from none to all,
/// weighted toward the hard end, shuffled across problem ids.
fn planted_counts(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = cfg.solutions;
    let mut counts: Vec<usize> = (0..cfg.problems)
        .map(|k| {
            let u = (k as f64 + 0.5) / cfg.problems as f64;
            // Quantiles of u^1.6 put more mass on low pass rates.
            (u.powf(1.6) * (n + 1) as f64).floor().min(n as f64) as usize
        })
        .collect();
    // Always include an unsolvable and a fully solved problem.
    if let Some(first) = counts.first_mut() {
        *first = 0;
    }
    if let Some(last) = counts.last_mut() {
        *last = n;
    }
    counts.shuffle(rng);
    counts
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(0.02, 0.98);
    (p / (1.0 - p)).ln()
}

/// Box-Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = planted_counts(cfg, &mut rng);
    let width = cfg.problems.saturating_sub(1).to_string().len().max(2);

    let mut problems = Vec::new();
    let mut solutions = Vec::new();
    let mut tests = Vec::new();
    let mut pass_rates = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    let mut gold_map = BTreeMap::new();

    for (k, &correct) in counts.iter().enumerate() {
        let pid = format!("p{k:0width$}");
        let lambda = correct as f64 / cfg.solutions as f64;

        // Which solutions are correct is scattered, not a prefix.
        let mut gold = vec![false; cfg.solutions];
        gold[..correct].iter_mut().for_each(|g| *g = true);
        gold.shuffle(&mut rng);
        let tags: Vec<String> = (0..cfg.solutions).map(|i| format!("{pid}/s{i:02}")).collect();

        let mut rows = vec![vec![false; cfg.tests]; cfg.solutions];
        for j in 0..cfg.tests {
            let mut accept = Vec::new();
            for (i, row) in rows.iter_mut().enumerate() {
                let passes = if gold[i] {
                    rng.gen::<f64>() >= cfg.frr
                } else {
                    rng.gen::<f64>() < cfg.far
                };
                row[j] = passes;
                if passes {
                    accept.push(tags[i].clone());
                }
            }
            tests.push(TestSpec::code_block(&pid, &format!("t{j:02}"), MockTest::accepting(accept).to_code()));
        }

        let gold_tags = tags.iter().zip(&gold).filter(|(_, &g)| g).map(|(t, _)| t.clone());
        let feature_vector = (0..cfg.feature_dim)
            .map(|d| {
                let noise = normal(&mut rng);
                if d < 2 {
                    logit(lambda) + cfg.feature_noise * noise
                } else {
                    noise
                }
            })
            .collect();
        problems.push(ProblemRecord {
            problem_id: pid.clone(),
            prompt: format!("synthetic problem {k}"),
            entry_point: "f".into(),
            gold_tests: vec![TestSpec::code_block(&pid, "gold", MockTest::accepting(gold_tags).to_code())],
            feature_vector: Some(feature_vector),
            gold_pass_rate: Some(lambda),
        });
        for (i, tag) in tags.iter().enumerate() {
            solutions.push(SolutionRecord {
                problem_id: pid.clone(),
                solution_id: format!("s{i:02}"),
                source_code: MockSolution::tagged(tag.clone()).to_source(),
                label: SolutionLabel::Unknown,
            });
        }

        let matrix = VerdictMatrix::new(
            pid.clone(),
            (0..cfg.solutions).map(|i| format!("s{i:02}")).collect(),
            (0..cfg.tests).map(|j| format!("t{j:02}")).collect(),
            rows,
        )
        .expect("planted matrix is rectangular");
        matrices.insert(pid.clone(), matrix);
        gold_map.insert(pid.clone(), gold);
        pass_rates.insert(pid, lambda);
    }

    let corpus = Corpus::from_records(problems, solutions, tests).expect("generated ids are unique");
    SynthCorpus {
        corpus,
        pass_rates,
        matrices,
        gold: gold_map,
    }
}
