//! Runner protocol.
//!
//! The orchestrator spawns the runner command once per (solution, test) pair,
//! writes one [`RunnerRequest`] as JSON to its stdin and closes it. The runner
//! answers with one [`RunnerReply`] on stdout and exits 0. Any other exit code
//! or an unparseable reply is scored as an error; a runner still alive at the
//! deadline is killed and scored as a timeout.

use serde::{Deserialize, Serialize};

use crate::corpus::{TestCase, TestKind, TestSpec};

/// The part of a [`TestSpec`] a runner needs to execute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPayload {
    pub kind: TestKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

impl From<&TestSpec> for TestPayload {
    fn from(spec: &TestSpec) -> Self {
        Self {
            kind: spec.kind,
            cases: spec.cases.clone(),
            code: spec.code.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub entry_point: String,
    pub source_code: String,
    pub test: TestPayload,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplyVerdict {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerReply {
    pub verdict: ReplyVerdict,
    #[serde(default)]
    pub detail: String,
}

impl RunnerReply {
    pub fn new(verdict: ReplyVerdict, detail: impl Into<String>) -> Self {
        Self {
            verdict,
            detail: detail.into(),
        }
    }
}
