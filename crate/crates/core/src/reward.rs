//! Verdict matrices and unit-test majority voting.
//!
//! Row `i` of a [`VerdictMatrix`] is the reward vector of candidate solution
//! `i`: bit `j` is set iff the solution passed every case of unit test `j`.
//! The selected candidate is the one passing the most tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("verdict matrix for {0:?} has no candidate solutions")]
    Empty(String),
    #[error("{axis} index {index} out of range (size {len})")]
    IndexOutOfRange {
        axis: &'static str,
        index: usize,
        len: usize,
    },
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
}

/// Binary N×M matrix of test verdicts for one problem, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct VerdictMatrix {
    problem_id: String,
    solution_ids: Vec<String>,
    test_ids: Vec<String>,
    bits: Vec<bool>,
}

impl VerdictMatrix {
    pub fn new(
        problem_id: impl Into<String>,
        solution_ids: Vec<String>,
        test_ids: Vec<String>,
        rows: Vec<Vec<bool>>,
    ) -> Result<Self, RewardError> {
        if rows.len() != solution_ids.len() {
            return Err(RewardError::Shape(format!(
                "{} rows for {} solutions",
                rows.len(),
                solution_ids.len()
            )));
        }
        let m = test_ids.len();
        let mut bits = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(RewardError::Shape(format!(
                    "row {i} has {} entries for {m} tests",
                    row.len()
                )));
            }
            bits.extend(row);
        }
        Ok(Self {
            problem_id: problem_id.into(),
            solution_ids,
            test_ids,
            bits,
        })
    }

    /// Matrix with generated ids `s0..`, `t0..`; handy for synthetic pools.
    pub fn from_rows(problem_id: impl Into<String>, rows: &[Vec<bool>]) -> Result<Self, RewardError> {
        let m = rows.first().map_or(0, Vec::len);
        Self::new(
            problem_id,
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            (0..m).map(|j| format!("t{j}")).collect(),
            rows.to_vec(),
        )
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn solution_ids(&self) -> &[String] {
        &self.solution_ids
    }

    pub fn test_ids(&self) -> &[String] {
        &self.test_ids
    }

    pub fn n_solutions(&self) -> usize {
        self.solution_ids.len()
    }

    pub fn n_tests(&self) -> usize {
        self.test_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n_tests() + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        let m = self.n_tests();
        &self.bits[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = bool> + '_ {
        (0..self.n_solutions()).map(move |i| self.get(i, j))
    }

    pub fn test_index(&self, test_id: &str) -> Option<usize> {
        self.test_ids.iter().position(|t| t == test_id)
    }

    pub fn rows(&self) -> Vec<Vec<bool>> {
        (0..self.n_solutions()).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    problem_id: String,
    solution_ids: Vec<String>,
    test_ids: Vec<String>,
    bits: Vec<Vec<u8>>,
}

impl TryFrom<RawMatrix> for VerdictMatrix {
    type Error = RewardError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        let mut rows = Vec::with_capacity(raw.bits.len());
        for row in raw.bits {
            let row = row
                .into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(RewardError::Shape(format!("entry {other} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        VerdictMatrix::new(raw.problem_id, raw.solution_ids, raw.test_ids, rows)
    }
}

impl From<VerdictMatrix> for RawMatrix {
    fn from(m: VerdictMatrix) -> Self {
        let bits = m
            .rows()
            .into_iter()
            .map(|row| row.into_iter().map(u8::from).collect())
            .collect();
        RawMatrix {
            problem_id: m.problem_id,
            solution_ids: m.solution_ids,
            test_ids: m.test_ids,
            bits,
        }
    }
}

/// Number of tests each candidate passes (row sums).
pub fn vote_counts(m: &VerdictMatrix) -> Result<Vec<usize>, RewardError> {
    if m.n_solutions() == 0 {
        return Err(RewardError::Empty(m.problem_id.clone()));
    }
    Ok((0..m.n_solutions())
        .map(|i| m.row(i).iter().filter(|&&b| b).count())
        .collect())
}

/// How to pick among candidates that tie on the maximum vote count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "seed")]
pub enum TieRule {
    #[default]
    LowestIndex,
    Random(u64),
}

/// Stateful tie-breaker; the random variant carries its own stream so that
/// repeated selections (as in bootstrap loops) stay reproducible.
#[derive(Debug, Clone)]
pub enum TieBreaker {
    LowestIndex,
    Random(Box<ChaCha8Rng>),
}

impl From<TieRule> for TieBreaker {
    fn from(rule: TieRule) -> Self {
        match rule {
            TieRule::LowestIndex => TieBreaker::LowestIndex,
            TieRule::Random(seed) => TieBreaker::Random(Box::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }
}

impl TieBreaker {
    fn pick(&mut self, tie_set: &[usize]) -> usize {
        match self {
            TieBreaker::LowestIndex => tie_set[0],
            TieBreaker::Random(rng) => *tie_set.choose(rng.as_mut()).expect("tie set is never empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectionResult {
    pub chosen_index: usize,
    pub vote_counts: Vec<usize>,
    pub tie_set: Vec<usize>,
    pub tie_broken: bool,
}

/// Selects the candidate passing the most unit tests.
pub fn select_best(m: &VerdictMatrix, tie_rule: TieRule) -> Result<SelectionResult, RewardError> {
    let counts = vote_counts(m)?;
    Ok(select_from_counts(counts, &mut tie_rule.into()))
}

/// Argmax over precomputed vote counts. `counts` must be non-empty.
pub fn select_from_counts(counts: Vec<usize>, tie: &mut TieBreaker) -> SelectionResult {
    let max = *counts.iter().max().expect("at least one candidate");
    let tie_set: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == max)
        .map(|(i, _)| i)
        .collect();
    let chosen_index = tie.pick(&tie_set);
    SelectionResult {
        chosen_index,
        tie_broken: tie_set.len() > 1,
        vote_counts: counts,
        tie_set,
    }
}

/// Restricts and reorders a matrix to the given rows and columns. Indices may
/// repeat, so bootstrap draws with replacement are expressed directly.
pub fn subselect(
    m: &VerdictMatrix,
    solution_idx: &[usize],
    test_idx: &[usize],
) -> Result<VerdictMatrix, RewardError> {
    check_indices("solution", solution_idx, m.n_solutions())?;
    check_indices("test", test_idx, m.n_tests())?;
    let rows = solution_idx
        .iter()
        .map(|&i| test_idx.iter().map(|&j| m.get(i, j)).collect())
        .collect();
    VerdictMatrix::new(
        m.problem_id.clone(),
        solution_idx.iter().map(|&i| m.solution_ids[i].clone()).collect(),
        test_idx.iter().map(|&j| m.test_ids[j].clone()).collect(),
        rows,
    )
}

pub(crate) fn check_indices(axis: &'static str, idx: &[usize], len: usize) -> Result<(), RewardError> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(RewardError::IndexOutOfRange { axis, index, len }),
        None => Ok(()),
    }
}

/// Vote counts of the sub-matrix `rows × cols` without materializing it.
pub(crate) fn drawn_counts(m: &VerdictMatrix, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|&i| {
            let row = m.row(i);
            cols.iter().filter(|&&j| row[j]).count()
        })
        .collect()
}
