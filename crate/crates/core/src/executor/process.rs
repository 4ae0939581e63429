//! One runner invocation: fresh scratch directory, request on stdin, capped
//! reply on stdout, kill-on-deadline.

use std::io::{self, Read, Write};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{RunnerConfig, Verdict};
use crate::protocol::{ReplyVerdict, RunnerReply};

/// Raw result of one runner invocation before it is tied to a task.
#[derive(Debug, Clone)]
pub(crate) struct Invocation {
    pub verdict: Verdict,
    pub detail: String,
    pub wall_time: f64,
    /// False for outcomes caused by the host rather than the task (spawn or
    /// scratch-dir failures, deadlines), which must not be replayed.
    pub cacheable: bool,
}

/// Spawn failure that must abort the whole run rather than one cell.
#[derive(Debug)]
pub(crate) struct SpawnError(pub io::Error);

pub(crate) fn invoke(cfg: &RunnerConfig, request: &[u8]) -> Result<Invocation, SpawnError> {
    let start = Instant::now();
    let scratch = match tempfile::Builder::new().prefix("utlab-task-").tempdir() {
        Ok(dir) => dir,
        Err(e) => {
            return Ok(Invocation {
                verdict: Verdict::Error,
                detail: format!("could not create scratch dir: {e}"),
                wall_time: 0.0,
                cacheable: false,
            })
        }
    };

    let mut cmd = Command::new(&cfg.command[0]);
    cmd.args(&cfg.command[1..])
        .current_dir(scratch.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    configure_unix(&mut cmd, cfg.memory_cap);

    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied) => {
            return Err(SpawnError(e))
        }
        Err(e) => {
            return Ok(Invocation {
                verdict: Verdict::Error,
                detail: truncate(format!("spawn failed: {e}"), cfg.output_cap),
                wall_time: start.elapsed().as_secs_f64(),
                cacheable: false,
            })
        }
    };

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let request = request.to_vec();
    // A runner that never reads stdin must not block us on a full pipe.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&request);
    });
    let stdout = spawn_capped_reader(child.stdout.take().expect("stdout is piped"), cfg.output_cap);
    let stderr = spawn_capped_reader(child.stderr.take().expect("stderr is piped"), cfg.output_cap);

    let status = wait_or_kill(&mut child, cfg.timeout);
    let _ = writer.join();
    let (out, out_overflow) = stdout.join().unwrap_or_default();
    let (err, _) = stderr.join().unwrap_or_default();
    let wall_time = start.elapsed().as_secs_f64();

    let cacheable = matches!(status, WaitStatus::Exited(_));
    let (verdict, detail) = match status {
        WaitStatus::TimedOut => (
            Verdict::Timeout,
            format!("killed after {:.3}s deadline", cfg.timeout.as_secs_f64()),
        ),
        WaitStatus::Failed(e) => (Verdict::Error, format!("waiting on runner failed: {e}")),
        WaitStatus::Exited(code) if code != Some(0) => {
            let code = code.map_or_else(|| "a signal".to_string(), |c| format!("status {c}"));
            (
                Verdict::Error,
                format!(
                    "runner exited with {code}; stderr: {}",
                    String::from_utf8_lossy(&err).trim()
                ),
            )
        }
        WaitStatus::Exited(_) if out_overflow => (
            Verdict::Error,
            format!("reply exceeded output cap of {} bytes", cfg.output_cap),
        ),
        WaitStatus::Exited(_) => match serde_json::from_slice::<RunnerReply>(&out) {
            Ok(reply) => (
                match reply.verdict {
                    ReplyVerdict::Pass => Verdict::Pass,
                    ReplyVerdict::Fail => Verdict::Fail,
                    ReplyVerdict::Error => Verdict::Error,
                },
                reply.detail,
            ),
            Err(e) => (
                Verdict::Error,
                format!(
                    "malformed reply ({e}): {}",
                    String::from_utf8_lossy(&out).trim()
                ),
            ),
        },
    };
    Ok(Invocation {
        cacheable,
        verdict,
        detail: truncate(detail, cfg.output_cap),
        wall_time,
    })
}

enum WaitStatus {
    Exited(Option<i32>),
    TimedOut,
    Failed(io::Error),
}

fn wait_or_kill(child: &mut Child, timeout: Duration) -> WaitStatus {
    match child.wait_timeout(timeout) {
        Ok(Some(status)) => WaitStatus::Exited(status.code()),
        Ok(None) => {
            kill_tree(child);
            // Reap so no zombie outlives the task.
            let _ = child.wait();
            WaitStatus::TimedOut
        }
        Err(e) => {
            kill_tree(child);
            let _ = child.wait();
            WaitStatus::Failed(e)
        }
    }
}

#[cfg(unix)]
fn kill_tree(child: &mut Child) {
    // The runner leads its own process group, so this also reaches anything
    // it spawned.
    let pgid = child.id() as libc::pid_t;
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut Child) {
    let _ = child.kill();
}

#[cfg(unix)]
fn configure_unix(cmd: &mut Command, memory_cap: Option<u64>) {
    use std::os::unix::process::CommandExt;

    cmd.process_group(0);
    if let Some(cap) = memory_cap {
        // SAFETY: the closure only calls setrlimit, which is async-signal-safe.
        unsafe {
            cmd.pre_exec(move || {
                let limit = libc::rlimit {
                    rlim_cur: cap as libc::rlim_t,
                    rlim_max: cap as libc::rlim_t,
                };
                // Best effort: a platform refusing the limit still runs the task.
                libc::setrlimit(libc::RLIMIT_AS, &limit);
                Ok(())
            });
        }
    }
}

/// Reads up to `cap` bytes, drains the rest, and reports whether it overflowed.
fn spawn_capped_reader<R: Read + Send + 'static>(
    mut reader: R,
    cap: usize,
) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        let mut overflow = false;
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(buf.len());
                    if n > room {
                        overflow = true;
                    }
                    buf.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
        (buf, overflow)
    })
}

pub(crate) fn truncate(mut s: String, cap: usize) -> String {
    if s.len() > cap {
        let mut end = cap;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}
