//! Unit-test quality control and classifier metrics.
//!
//! A unit test is treated as a binary classifier of solutions: it "accepts"
//! a solution when the solution passes it. The positive class is "solution is
//! correct", so a false acceptance (FAR) is an incorrect solution passing and
//! a false rejection (FRR) is a correct solution failing.

use std::io::Write;
use std::ops::Add;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::TestLabel;
use crate::reward::VerdictMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("{labels} gold labels for {solutions} solutions")]
    LabelMismatch { labels: usize, solutions: usize },
    #[error("no solution is labeled correct")]
    NoCorrectSolution,
    #[error("no solution is labeled incorrect")]
    NoIncorrectSolution,
    #[error("unknown test {0:?}")]
    UnknownTest(String),
    #[error("matrix has no solutions")]
    NoSolutions,
    #[error("matrix has no tests")]
    NoTests,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Tallies `accepted[i]` against `gold[i]` (true = correct solution).
    pub fn tally(accepted: impl IntoIterator<Item = bool>, gold: &[bool]) -> Self {
        let mut c = Self::default();
        for (acc, &correct) in accepted.into_iter().zip(gold) {
            match (correct, acc) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum QualityScope {
    PerTest(String),
    Ensemble(usize),
}

/// Classifier metrics. Rates whose denominator is zero are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub scope: QualityScope,
    pub confusion: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl QualityReport {
    pub fn from_confusion(scope: QualityScope, c: ConfusionCounts) -> Self {
        Self {
            scope,
            confusion: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            far: ratio(c.fp, c.fp + c.tn),
            frr: ratio(c.fn_, c.tp + c.fn_),
        }
    }
}

fn check_labels(m: &VerdictMatrix, gold: &[bool]) -> Result<(), QualityError> {
    if gold.len() != m.n_solutions() {
        return Err(QualityError::LabelMismatch {
            labels: gold.len(),
            solutions: m.n_solutions(),
        });
    }
    Ok(())
}

/// Labels each test valid iff every correct solution passes it.
pub fn label_tests(m: &VerdictMatrix, gold: &[bool]) -> Result<Vec<TestLabel>, QualityError> {
    check_labels(m, gold)?;
    if !gold.iter().any(|&g| g) {
        return Err(QualityError::NoCorrectSolution);
    }
    Ok((0..m.n_tests())
        .map(|j| {
            let valid = m.column(j).zip(gold).all(|(pass, &correct)| !correct || pass);
            if valid {
                TestLabel::Valid
            } else {
                TestLabel::Invalid
            }
        })
        .collect())
}

/// When a valid test counts as a false positive and is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "tau")]
pub enum FalsePositivePolicy {
    /// Drop tests that accept every incorrect solution.
    #[default]
    AcceptsAllIncorrect,
    /// Drop tests that accept any incorrect solution.
    AcceptsAnyIncorrect,
    /// Keep tests that reject at least this fraction of incorrect solutions.
    MinRejectFraction(f64),
}

/// Ids of tests that are valid and survive the false-positive policy, in
/// pool order.
pub fn filter_false_positive(
    m: &VerdictMatrix,
    gold: &[bool],
    policy: FalsePositivePolicy,
) -> Result<Vec<String>, QualityError> {
    if let FalsePositivePolicy::MinRejectFraction(tau) = policy {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QualityError::BadThreshold(tau));
        }
    }
    let labels = label_tests(m, gold)?;
    let n_incorrect = gold.iter().filter(|&&g| !g).count();
    if n_incorrect == 0 {
        return Err(QualityError::NoIncorrectSolution);
    }
    let kept = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == TestLabel::Valid)
        .filter(|&(j, _)| {
            let rejected = m
                .column(j)
                .zip(gold)
                .filter(|&(pass, &correct)| !correct && !pass)
                .count();
            match policy {
                FalsePositivePolicy::AcceptsAllIncorrect => rejected > 0,
                FalsePositivePolicy::AcceptsAnyIncorrect => rejected == n_incorrect,
                FalsePositivePolicy::MinRejectFraction(tau) => {
                    rejected as f64 >= tau * n_incorrect as f64 - 1e-12
                }
            }
        })
        .map(|(j, _)| m.test_ids()[j].clone())
        .collect();
    Ok(kept)
}

/// Metrics of a single test's column.
pub fn test_quality(m: &VerdictMatrix, gold: &[bool], test_id: &str) -> Result<QualityReport, QualityError> {
    check_labels(m, gold)?;
    if m.n_solutions() == 0 {
        return Err(QualityError::NoSolutions);
    }
    let j = m
        .test_index(test_id)
        .ok_or_else(|| QualityError::UnknownTest(test_id.to_string()))?;
    let c = ConfusionCounts::tally(m.column(j), gold);
    Ok(QualityReport::from_confusion(QualityScope::PerTest(test_id.to_string()), c))
}

/// How the tests of a pool vote on accepting a solution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "theta")]
pub enum EnsembleRule {
    /// Accept iff more than half of the tests pass.
    #[default]
    StrictMajority,
    /// Accept iff at least `theta · M` tests pass.
    Threshold(f64),
}

impl EnsembleRule {
    pub fn accepts(self, votes: usize, m: usize) -> bool {
        match self {
            EnsembleRule::StrictMajority => 2 * votes > m,
            EnsembleRule::Threshold(theta) => votes as f64 >= theta * m as f64 - 1e-9,
        }
    }
}

/// Metrics of the whole test pool voting as one classifier.
pub fn ensemble_quality(
    m: &VerdictMatrix,
    gold: &[bool],
    rule: EnsembleRule,
) -> Result<QualityReport, QualityError> {
    check_labels(m, gold)?;
    if let EnsembleRule::Threshold(theta) = rule {
        if !(0.0..=1.0).contains(&theta) {
            return Err(QualityError::BadThreshold(theta));
        }
    }
    if m.n_tests() == 0 {
        return Err(QualityError::NoTests);
    }
    if m.n_solutions() == 0 {
        return Err(QualityError::NoSolutions);
    }
    let accepted = (0..m.n_solutions()).map(|i| {
        let votes = m.row(i).iter().filter(|&&b| b).count();
        rule.accepts(votes, m.n_tests())
    });
    let c = ConfusionCounts::tally(accepted, gold);
    Ok(QualityReport::from_confusion(QualityScope::Ensemble(m.n_tests()), c))
}

/// Writes reports as CSV: `problem_id,scope,id,accuracy,f1,far,frr`, with
/// undefined rates left empty.
pub fn write_quality_csv<W: Write>(w: W, rows: &[(String, QualityReport)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["problem_id", "scope", "id", "accuracy", "f1", "far", "frr"])?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for (problem_id, r) in rows {
        let (scope, id) = match &r.scope {
            QualityScope::PerTest(t) => ("per_test", t.clone()),
            QualityScope::Ensemble(m) => ("ensemble", m.to_string()),
        };
        out.write_record([
            problem_id.clone(),
            scope.to_string(),
            id,
            fmt(r.accuracy),
            fmt(r.f1),
            fmt(r.far),
            fmt(r.frr),
        ])?;
    }
    out.flush()?;
    Ok(())
}
