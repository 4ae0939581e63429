//! A scripted runner that speaks the runner protocol without a language
//! runtime. It replays behaviour encoded in the request itself, which lets
//! the whole pipeline run (and be tested) with no interpreter installed.
//!
//! Mock solutions are JSON documents:
//!
//! ```json
//! {"tag": "s3", "outputs": {"[1]": 2}, "behavior": "normal"}
//! ```
//!
//! * `outputs` maps the canonical JSON of an argument list to the value the
//!   entry point returns for it. Structured tests look cases up here; a missing
//!   input is an error (the entry point "raised").
//! * `behavior` is one of `normal`, `hang`, `crash`, `garbage` or `scratch`.
//!   `scratch` passes only if the working directory does not already contain
//!   a marker file, then creates it.
//!
//! Mock code-block tests are JSON documents `{"accept": ["s1", "s3"]}`: the
//! test passes exactly the solutions whose tag is listed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TestKind;
use crate::protocol::{ReplyVerdict, RunnerReply, RunnerRequest};

pub const SCRATCH_MARKER: &str = "utlab-scratch.marker";

/// Relative tolerance for comparing floating-point outputs.
pub const FLOAT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    #[default]
    Normal,
    Hang,
    Crash,
    Garbage,
    Scratch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockSolution {
    pub tag: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub behavior: Behavior,
}

impl MockSolution {
    pub fn tagged(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            ..Self::default()
        }
    }

    pub fn with_output(mut self, args: &[serde_json::Value], output: serde_json::Value) -> Self {
        self.outputs.insert(args_key(args), output);
        self
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn to_source(&self) -> String {
        serde_json::to_string(self).expect("mock solution serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTest {
    pub accept: Vec<String>,
}

impl MockTest {
    pub fn accepting<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            accept: tags.into_iter().map(Into::into).collect(),
        }
    }

    pub fn to_code(&self) -> String {
        serde_json::to_string(self).expect("mock test serializes")
    }
}

fn args_key(args: &[serde_json::Value]) -> String {
    serde_json::to_string(args).expect("json values serialize")
}

/// What the runner process should do in response to a request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockAction {
    Reply(RunnerReply),
    /// Exit with this status without replying.
    Crash(i32),
    /// Write this text instead of a reply.
    Garbage(String),
    /// Never finish.
    Hang,
}

/// Decides the response to `request`; `workdir` is only touched by the
/// `scratch` behavior.
pub fn respond(request: &RunnerRequest, workdir: &Path) -> MockAction {
    let solution: MockSolution = match serde_json::from_str(&request.source_code) {
        Ok(s) => s,
        Err(e) => {
            return MockAction::Reply(RunnerReply::new(
                ReplyVerdict::Error,
                format!("source failed to load: {e}"),
            ))
        }
    };
    match solution.behavior {
        Behavior::Hang => return MockAction::Hang,
        Behavior::Crash => return MockAction::Crash(3),
        Behavior::Garbage => return MockAction::Garbage("this is not a reply".into()),
        Behavior::Scratch => {
            let marker = workdir.join(SCRATCH_MARKER);
            let reply = if marker.exists() {
                RunnerReply::new(ReplyVerdict::Fail, "scratch marker left by another task")
            } else {
                match std::fs::write(&marker, solution.tag.as_bytes()) {
                    Ok(()) => RunnerReply::new(ReplyVerdict::Pass, ""),
                    Err(e) => RunnerReply::new(ReplyVerdict::Error, e.to_string()),
                }
            };
            return MockAction::Reply(reply);
        }
        Behavior::Normal => {}
    }

    let reply = match request.test.kind {
        TestKind::Structured => run_cases(&solution, request),
        TestKind::CodeBlock => run_block(&solution, request),
    };
    MockAction::Reply(reply)
}

fn run_cases(solution: &MockSolution, request: &RunnerRequest) -> RunnerReply {
    if request.test.cases.is_empty() {
        return RunnerReply::new(ReplyVerdict::Error, "structured test without cases");
    }
    for (k, case) in request.test.cases.iter().enumerate() {
        let key = args_key(&case.input_args);
        let Some(actual) = solution.outputs.get(&key) else {
            return RunnerReply::new(
                ReplyVerdict::Error,
                format!("{}({}) raised: no output scripted", request.entry_point, key),
            );
        };
        if !values_match(actual, &case.expected_output, FLOAT_REL_TOL) {
            return RunnerReply::new(
                ReplyVerdict::Fail,
                format!(
                    "case {k}: {}{} expected {} got {}",
                    request.entry_point, key, case.expected_output, actual
                ),
            );
        }
    }
    RunnerReply::new(ReplyVerdict::Pass, "")
}

fn run_block(solution: &MockSolution, request: &RunnerRequest) -> RunnerReply {
    let Some(code) = request.test.code.as_deref() else {
        return RunnerReply::new(ReplyVerdict::Error, "code_block test without code");
    };
    let test: MockTest = match serde_json::from_str(code) {
        Ok(t) => t,
        Err(e) => return RunnerReply::new(ReplyVerdict::Error, format!("test failed to load: {e}")),
    };
    if test.accept.iter().any(|t| t == &solution.tag) {
        RunnerReply::new(ReplyVerdict::Pass, "")
    } else {
        RunnerReply::new(ReplyVerdict::Fail, format!("assertion failed for {}", solution.tag))
    }
}

/// Runs one request from stdin to stdout and returns the process exit code.
/// A request that does not parse exits 2 without a reply.
pub fn serve_stdio() -> i32 {
    use std::io::{Read, Write};

    let mut input = String::new();
    if let Err(e) = std::io::stdin().read_to_string(&mut input) {
        eprintln!("mock runner: reading request: {e}");
        return 2;
    }
    let request: RunnerRequest = match serde_json::from_str(&input) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mock runner: malformed request: {e}");
            return 2;
        }
    };
    let workdir = std::env::current_dir().unwrap_or_else(|_| ".".into());
    let mut out = std::io::stdout().lock();
    match respond(&request, &workdir) {
        MockAction::Reply(reply) => {
            let line = serde_json::to_string(&reply).expect("reply serializes");
            if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
                return 1;
            }
            0
        }
        MockAction::Crash(code) => code,
        MockAction::Garbage(text) => {
            let _ = write!(out, "{text}");
            0
        }
        MockAction::Hang => loop {
            std::thread::sleep(std::time::Duration::from_secs(1));
        },
    }
}

/// Deep structural equality; numbers compare with relative tolerance `rel_tol`
/// (integers that fit in `i64` compare exactly).
pub fn values_match(a: &serde_json::Value, b: &serde_json::Value, rel_tol: f64) -> bool {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if let (Some(x), Some(y)) = (x.as_i64(), y.as_i64()) {
                return x == y;
            }
            match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => {
                    x == y || (x - y).abs() <= rel_tol * x.abs().max(y.abs())
                }
                _ => false,
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_match(x, y, rel_tol))
        }
        (Value::Object(xs), Value::Object(ys)) => {
            xs.len() == ys.len()
                && xs
                    .iter()
                    .all(|(k, x)| ys.get(k).is_some_and(|y| values_match(x, y, rel_tol)))
        }
        _ => a == b,
    }
}
