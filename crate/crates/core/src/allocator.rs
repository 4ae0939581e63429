//! Distributing a global unit-test budget across problems.
//!
//! A problem with pass rate λ given b tests is credited `q(λ, b) = 1 - (1-λ)^b`.
//! The marginal gain `λ(1-λ)^b` never increases with b, so granting units one
//! at a time to the largest current gain maximizes the total credit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::Provenance;
use crate::scalinglab::{self, BootstrapConfig, Draw, Estimate, ProblemEval, ScalingError};

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("pass rate {lambda} for {problem_id:?} is outside [0, 1]")]
    InvalidLambda { problem_id: String, lambda: f64 },
    #[error("cannot spread a budget of {0} over zero problems")]
    NoProblems(u64),
    #[error("problem {problem_id:?} has budget {budget} but only {available} tests")]
    BudgetExceedsTests {
        problem_id: String,
        budget: u64,
        available: usize,
    },
    #[error("plan has no budget for problem {0:?}")]
    MissingBudget(String),
    #[error("no test-pool size given for problem {0:?}")]
    MissingCap(String),
    #[error("budget {total} exceeds the {capacity} tests available in total")]
    OverCapacity { total: u64, capacity: u64 },
    #[error(transparent)]
    Scaling(#[from] ScalingError),
}

fn check_lambda(problem_id: &str, lambda: f64) -> Result<(), AllocError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(AllocError::InvalidLambda {
            problem_id: problem_id.to_string(),
            lambda,
        })
    }
}

/// `1 - (1-λ)^b`, via `expm1`/`ln1p` so tiny λ and huge b keep precision.
pub fn q(lambda: f64, b: u64) -> Result<f64, AllocError> {
    check_lambda("", lambda)?;
    Ok(q_unchecked(lambda, b))
}

fn q_unchecked(lambda: f64, b: u64) -> f64 {
    if b == 0 {
        return 0.0;
    }
    if lambda == 1.0 {
        return 1.0;
    }
    -(b as f64 * (-lambda).ln_1p()).exp_m1()
}

/// `q(λ, b+1) - q(λ, b) = λ(1-λ)^b`.
pub fn marginal_gain(lambda: f64, b: u64) -> Result<f64, AllocError> {
    check_lambda("", lambda)?;
    Ok(gain_unchecked(lambda, b))
}

fn gain_unchecked(lambda: f64, b: u64) -> f64 {
    if b == 0 {
        return lambda;
    }
    if lambda == 1.0 {
        return 0.0;
    }
    lambda * (b as f64 * (-lambda).ln_1p()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Greedy on probe-predicted pass rates.
    GreedyPredicted,
    /// Greedy on measured pass rates.
    GreedyGold,
    Equal,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::GreedyGold, Strategy::GreedyPredicted, Strategy::Equal];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::GreedyPredicted => "greedy_predicted",
            Strategy::GreedyGold => "greedy_gold",
            Strategy::Equal => "equal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub strategy: Strategy,
    pub total: u64,
    pub budgets: BTreeMap<String, u64>,
    /// Pass rates the plan was computed from; empty for equal allocation.
    pub lambdas_used: BTreeMap<String, f64>,
}

/// Heap entry; the greatest entry gets the next unit.
struct Candidate {
    gain: f64,
    budget: u64,
    /// Rank of the problem id in sorted order.
    rank: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Equal gains go to the problem with fewer units, then the earlier id,
        // which hands out tied units round-robin.
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.budget.cmp(&self.budget))
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Greedy marginal-gain allocation of `total` units. `strategy` only labels
/// the plan (greedy_gold or greedy_predicted, by where `lambdas` came from).
pub fn greedy_allocate(
    lambdas: &BTreeMap<String, f64>,
    total: u64,
    strategy: Strategy,
) -> Result<AllocationPlan, AllocError> {
    greedy(lambdas, None, total, strategy)
}

/// Like [`greedy_allocate`], but problem x never gets more than `caps[x]`
/// units (its test pool size). A problem at its cap leaves the queue; since
/// each problem's gains only shrink, the result is still optimal.
pub fn greedy_allocate_capped(
    lambdas: &BTreeMap<String, f64>,
    caps: &BTreeMap<String, u64>,
    total: u64,
    strategy: Strategy,
) -> Result<AllocationPlan, AllocError> {
    greedy(lambdas, Some(caps), total, strategy)
}

fn greedy(
    lambdas: &BTreeMap<String, f64>,
    caps: Option<&BTreeMap<String, u64>>,
    total: u64,
    strategy: Strategy,
) -> Result<AllocationPlan, AllocError> {
    for (id, &l) in lambdas {
        check_lambda(id, l)?;
    }
    if lambdas.is_empty() && total > 0 {
        return Err(AllocError::NoProblems(total));
    }
    let ids: Vec<&String> = lambdas.keys().collect();
    let values: Vec<f64> = lambdas.values().copied().collect();
    let limits: Vec<u64> = match caps {
        None => vec![u64::MAX; ids.len()],
        Some(caps) => ids
            .iter()
            .map(|id| caps.get(*id).copied().ok_or_else(|| AllocError::MissingCap(id.to_string())))
            .collect::<Result<_, _>>()?,
    };
    let capacity = limits.iter().fold(0u64, |acc, &c| acc.saturating_add(c));
    if total > capacity {
        return Err(AllocError::OverCapacity { total, capacity });
    }
    let mut budgets = vec![0u64; ids.len()];
    let mut heap: BinaryHeap<Candidate> = values
        .iter()
        .enumerate()
        .filter(|&(rank, _)| limits[rank] > 0)
        .map(|(rank, &l)| Candidate {
            gain: gain_unchecked(l, 0),
            budget: 0,
            rank,
        })
        .collect();
    for _ in 0..total {
        let mut top = heap.pop().expect("capacity covers the budget");
        budgets[top.rank] += 1;
        top.budget += 1;
        if top.budget < limits[top.rank] {
            top.gain = gain_unchecked(values[top.rank], top.budget);
            heap.push(top);
        }
    }
    Ok(AllocationPlan {
        strategy,
        total,
        budgets: ids.iter().map(|id| id.to_string()).zip(budgets).collect(),
        lambdas_used: lambdas.clone(),
    })
}

/// `⌊B/P⌋` units each, the remainder one apiece to the earliest ids.
pub fn equal_allocate<S: AsRef<str>>(problem_ids: &[S], total: u64) -> Result<AllocationPlan, AllocError> {
    let ids: BTreeSet<&str> = problem_ids.iter().map(AsRef::as_ref).collect();
    if ids.is_empty() {
        if total > 0 {
            return Err(AllocError::NoProblems(total));
        }
        return Ok(AllocationPlan {
            strategy: Strategy::Equal,
            total,
            budgets: BTreeMap::new(),
            lambdas_used: BTreeMap::new(),
        });
    }
    let p = ids.len() as u64;
    let (base, extra) = (total / p, total % p);
    let budgets = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), base + u64::from((i as u64) < extra)))
        .collect();
    Ok(AllocationPlan {
        strategy: Strategy::Equal,
        total,
        budgets,
        lambdas_used: BTreeMap::new(),
    })
}

/// `Σ_x q(λ_x, b_x)` over the problems in `lambdas`.
pub fn total_reward(plan: &AllocationPlan, lambdas: &BTreeMap<String, f64>) -> Result<f64, AllocError> {
    lambdas
        .iter()
        .map(|(id, &l)| {
            check_lambda(id, l)?;
            let b = *plan.budgets.get(id).ok_or_else(|| AllocError::MissingBudget(id.clone()))?;
            Ok(q_unchecked(l, b))
        })
        .sum()
}

/// Best-of-n accuracy when problem x draws `b_x` tests. `n` solutions are
/// drawn per problem; `None` draws as many as each pool holds.
pub fn evaluate_allocation(
    plan: &AllocationPlan,
    problems: &[ProblemEval],
    n: Option<usize>,
    cfg: &BootstrapConfig,
) -> Result<Estimate, AllocError> {
    let draws = problems
        .iter()
        .map(|p| {
            let id = p.problem_id();
            let b = *plan.budgets.get(id).ok_or_else(|| AllocError::MissingBudget(id.to_string()))?;
            if b > p.matrix.n_tests() as u64 {
                return Err(AllocError::BudgetExceedsTests {
                    problem_id: id.to_string(),
                    budget: b,
                    available: p.matrix.n_tests(),
                });
            }
            Ok(Draw {
                n: n.unwrap_or(p.matrix.n_solutions()),
                m: b as usize,
            })
        })
        .collect::<Result<Vec<_>, AllocError>>()?;
    Ok(scalinglab::accuracy_with_draws(problems, &draws, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub budget: u64,
    pub estimate: Estimate,
}

/// CSV `strategy,B,mean,ci_low,ci_high`.
pub fn write_comparison_csv<W: Write>(
    mut w: W,
    rows: &[ComparisonRow],
    provenance: Option<&Provenance>,
) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_comment(&mut w)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["strategy", "B", "mean", "ci_low", "ci_high"])?;
    for r in rows {
        out.write_record([
            r.strategy.to_string(),
            r.budget.to_string(),
            format!("{:.6}", r.estimate.mean),
            format!("{:.6}", r.estimate.ci_low),
            format!("{:.6}", r.estimate.ci_high),
        ])?;
    }
    out.flush()
}
