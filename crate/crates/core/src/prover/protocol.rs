//! Checker worker wire format: one JSON object per line in each direction.
//!
//! ```text
//! -> {"id": "<id>", "source": "<lean source>"}
//! <- {"id": "<id>", "ok": true, "messages": [{"severity": "warning", "text": "..."}], "elapsed_ms": 12}
//! ```

use std::io::{self, BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::mock::{MockCheckerTable, ScriptedOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRequest {
    pub id: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub text: String,
}

impl Diagnostic {
    pub fn error(text: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            text: text.into(),
        }
    }

    pub fn warning(text: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResponse {
    pub id: String,
    pub ok: bool,
    pub messages: Vec<Diagnostic>,
    pub elapsed_ms: u64,
}

/// Scripted reply for one request, as the mock worker process sends it.
pub(crate) enum MockReply {
    Line(CheckResponse),
    Garbage,
    Crash,
}

pub(crate) fn mock_reply(table: &MockCheckerTable, request: &CheckRequest) -> (MockReply, u64) {
    let verdict = table.evaluate(&request.source);
    let messages = verdict
        .errors
        .into_iter()
        .map(Diagnostic::error)
        .chain(verdict.warnings.into_iter().map(Diagnostic::warning))
        .collect();
    let reply = match verdict.outcome {
        ScriptedOutcome::Crash => MockReply::Crash,
        ScriptedOutcome::Garbage => MockReply::Garbage,
        outcome => MockReply::Line(CheckResponse {
            id: request.id.clone(),
            ok: outcome == ScriptedOutcome::Ok,
            messages,
            elapsed_ms: verdict.latency_ms,
        }),
    };
    (reply, verdict.latency_ms)
}

/// How a mock checker process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    /// Input closed.
    Eof,
    /// A scripted crash; the process should exit abnormally.
    Crash,
}

/// Runs the mock checker over a line stream, sleeping for real for each
/// scripted latency. Used by the `mock-checker` command so the external
/// backend can be exercised without Lean.
pub fn serve_mock_checker(
    table: &MockCheckerTable,
    input: impl BufRead,
    mut output: impl Write,
) -> io::Result<ServeEnd> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: CheckRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("mock-checker: bad request: {e}");
                return Ok(ServeEnd::Crash);
            }
        };
        let (reply, latency_ms) = mock_reply(table, &request);
        std::thread::sleep(Duration::from_millis(latency_ms));
        match reply {
            MockReply::Crash => return Ok(ServeEnd::Crash),
            MockReply::Garbage => writeln!(output, "checker panicked: internal error")?,
            MockReply::Line(response) => writeln!(
                output,
                "{}",
                serde_json::to_string(&response).expect("serializes")
            )?,
        }
        output.flush()?;
    }
    Ok(ServeEnd::Eof)
}
