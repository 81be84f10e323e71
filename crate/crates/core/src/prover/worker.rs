use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{mock_reply, CheckRequest, CheckResponse, MockReply};
use crate::mock::MockCheckerTable;

/// What came back for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerReply {
    Response {
        response: CheckResponse,
        elapsed: Duration,
    },
    TimedOut {
        elapsed: Duration,
    },
    Crashed {
        reason: String,
        elapsed: Duration,
    },
}

/// A checker process serving one request at a time. After a timeout or a
/// crash the worker is restarted before its next request.
pub trait CheckerWorker: Send {
    fn check(&mut self, request: &CheckRequest, timeout: Duration) -> WorkerReply;

    /// Restarts so far.
    fn restarts(&self) -> u32;
}

/// Command line for an external checker worker.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalSpec {
    pub command: Vec<String>,
    pub workdir: Option<PathBuf>,
    /// Environment variables passed through to the worker; everything else
    /// except `PATH` and `HOME` is cleared.
    pub env_passthrough: Vec<String>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

pub struct ExternalWorker {
    spec: ExternalSpec,
    running: Option<Running>,
    restarts: u32,
}

impl ExternalWorker {
    pub fn new(spec: ExternalSpec) -> Self {
        ExternalWorker {
            spec,
            running: None,
            restarts: 0,
        }
    }

    fn start(&self) -> Result<Running, String> {
        let (program, args) = self
            .spec
            .command
            .split_first()
            .ok_or_else(|| "empty checker command".to_string())?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .env_clear()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for var in ["PATH", "HOME"]
            .into_iter()
            .chain(self.spec.env_passthrough.iter().map(String::as_str))
        {
            if let Some(v) = std::env::var_os(var) {
                cmd.env(var, v);
            }
        }
        if let Some(dir) = &self.spec.workdir {
            cmd.current_dir(dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| format!("cannot start `{program}`: {e}"))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        std::thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                tracing::debug!(target: "drp::checker", "{line}");
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
            self.restarts += 1;
        }
    }

    fn crashed(&mut self, reason: String, started: Instant) -> WorkerReply {
        tracing::warn!(%reason, "checker worker crashed");
        self.kill();
        WorkerReply::Crashed {
            reason,
            elapsed: started.elapsed(),
        }
    }
}

impl Drop for ExternalWorker {
    fn drop(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

impl CheckerWorker for ExternalWorker {
    fn check(&mut self, request: &CheckRequest, timeout: Duration) -> WorkerReply {
        let started = Instant::now();
        if self.running.is_none() {
            match self.start() {
                Ok(r) => self.running = Some(r),
                Err(reason) => {
                    return WorkerReply::Crashed {
                        reason,
                        elapsed: started.elapsed(),
                    }
                }
            }
        }
        let line = serde_json::to_string(request).expect("request serializes");
        let running = self.running.as_mut().expect("started above");
        if let Err(e) = writeln!(running.stdin, "{line}").and_then(|()| running.stdin.flush()) {
            return self.crashed(format!("cannot write request: {e}"), started);
        }
        loop {
            let remaining = timeout.saturating_sub(started.elapsed());
            let running = self.running.as_mut().expect("still running");
            match running.lines.recv_timeout(remaining) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => match serde_json::from_str::<CheckResponse>(&line) {
                    Ok(response) if response.id == request.id => {
                        return WorkerReply::Response {
                            response,
                            elapsed: started.elapsed(),
                        }
                    }
                    Ok(other) => {
                        tracing::debug!(id = %other.id, "dropping reply for another request");
                    }
                    Err(e) => {
                        return self.crashed(format!("non-JSON line from worker: {e}"), started)
                    }
                },
                Ok(Err(e)) => {
                    return self.crashed(format!("cannot read worker output: {e}"), started)
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return self.crashed("worker closed its output".into(), started)
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return WorkerReply::TimedOut {
                        elapsed: started.elapsed(),
                    };
                }
            }
        }
    }

    fn restarts(&self) -> u32 {
        self.restarts
    }
}

/// In-process mock worker. Latency is virtual: scripted latency is reported
/// as elapsed time and compared against the timeout, nothing sleeps.
pub struct MockWorker {
    table: Arc<MockCheckerTable>,
    restarts: u32,
}

impl MockWorker {
    pub fn new(table: Arc<MockCheckerTable>) -> Self {
        MockWorker { table, restarts: 0 }
    }
}

impl CheckerWorker for MockWorker {
    fn check(&mut self, request: &CheckRequest, timeout: Duration) -> WorkerReply {
        let (reply, latency_ms) = mock_reply(&self.table, request);
        let elapsed = Duration::from_millis(latency_ms);
        if elapsed > timeout {
            self.restarts += 1;
            return WorkerReply::TimedOut { elapsed: timeout };
        }
        match reply {
            MockReply::Line(response) => WorkerReply::Response { response, elapsed },
            MockReply::Garbage => {
                self.restarts += 1;
                WorkerReply::Crashed {
                    reason: "non-JSON line from worker".into(),
                    elapsed,
                }
            }
            MockReply::Crash => {
                self.restarts += 1;
                WorkerReply::Crashed {
                    reason: "worker closed its output".into(),
                    elapsed,
                }
            }
        }
    }

    fn restarts(&self) -> u32 {
        self.restarts
    }
}

/// Where proofs get checked.
#[derive(Debug, Clone)]
pub enum ProverBackend {
    External(ExternalSpec),
    Mock(Arc<MockCheckerTable>),
}

impl ProverBackend {
    pub fn spawn(&self) -> Box<dyn CheckerWorker> {
        match self {
            ProverBackend::External(spec) => Box::new(ExternalWorker::new(spec.clone())),
            ProverBackend::Mock(table) => Box::new(MockWorker::new(table.clone())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProverBackend::External(_) => "external",
            ProverBackend::Mock(_) => "mock",
        }
    }
}
