//! Budgeted proof search: lazy proof generation, checking over the worker
//! protocol, first-success early exit, and a lemma-level worker pool.

mod protocol;
mod worker;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use protocol::{
    serve_mock_checker, CheckRequest, CheckResponse, Diagnostic, ServeEnd, Severity,
};
pub use worker::{
    CheckerWorker, ExternalSpec, ExternalWorker, MockWorker, ProverBackend, WorkerReply,
};

use crate::reasoner::{
    build_prover_prompt, complete_with_retry, duration_ms, lean_prefix, CandidateLemma,
    ConfigError, ModelHandle, Purpose,
};
use crate::statement::{
    mentions_sorry, parse_theorem_declaration, proof_body_for, Digest, TheoremStatement,
};
use crate::store::LemmaStatus;

pub const DEFAULT_K: u32 = 128;
pub const DEFAULT_ATTEMPT_TIMEOUT_SECS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttemptBudget {
    pub k: u32,
    /// Seconds.
    pub per_attempt_timeout: f64,
    /// Seconds per lemma, generation and checking combined.
    pub total_deadline: Option<f64>,
}

impl Default for AttemptBudget {
    fn default() -> Self {
        AttemptBudget {
            k: DEFAULT_K,
            per_attempt_timeout: DEFAULT_ATTEMPT_TIMEOUT_SECS,
            total_deadline: None,
        }
    }
}

impl AttemptBudget {
    pub fn with_k(k: u32) -> Self {
        AttemptBudget {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self, section: &str) -> Result<(), ConfigError> {
        let field = |name: &str| format!("{section}.{name}");
        if self.k < 1 {
            return Err(ConfigError::invalid(field("k"), "must be at least 1"));
        }
        if !(self.per_attempt_timeout > 0.0 && self.per_attempt_timeout.is_finite()) {
            return Err(ConfigError::invalid(
                field("per_attempt_timeout"),
                "must be positive",
            ));
        }
        if self.total_deadline.is_some_and(|d| d.is_nan() || d <= 0.0) {
            return Err(ConfigError::invalid(
                field("total_deadline"),
                "must be positive",
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.per_attempt_timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Ok,
    ProofError,
    Timeout,
    CheckerCrash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub attempt_id: String,
    pub verdict: Verdict,
    pub messages: Vec<Diagnostic>,
    pub elapsed_ms: u64,
    pub contains_sorry: bool,
}

/// Which part of a checked source must be free of `sorry`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SorryScope {
    /// Byte offset where the scan of the source text starts.
    pub scan_from: usize,
    /// Declarations whose `sorry` diagnostics are expected (oracle stubs).
    pub exempt: Vec<String>,
}

/// Diagnostics are prose: `'` quotes names there instead of being part of one.
fn diagnostic_reports_sorry(d: &Diagnostic, exempt: &[String]) -> bool {
    mentions_sorry(&d.text.replace('\'', " "))
        && !exempt.iter().any(|n| d.text.contains(&format!("'{n}'")))
}

/// Checks one source. Never fails: every failure shape is a verdict.
pub fn check_proof(
    worker: &mut dyn CheckerWorker,
    attempt_id: &str,
    source: &str,
    timeout: Duration,
    scope: &SorryScope,
) -> CheckResult {
    let request = CheckRequest {
        id: attempt_id.to_string(),
        source: source.to_string(),
    };
    let scanned = source.get(scope.scan_from..).is_none_or(mentions_sorry);
    let (verdict, messages, elapsed, contains_sorry) = match worker.check(&request, timeout) {
        WorkerReply::Response { response, elapsed } => {
            let contains_sorry = scanned
                || response
                    .messages
                    .iter()
                    .any(|d| diagnostic_reports_sorry(d, &scope.exempt));
            let has_error = response
                .messages
                .iter()
                .any(|d| d.severity == Severity::Error);
            let verdict = if response.ok && !has_error && !contains_sorry {
                Verdict::Ok
            } else {
                Verdict::ProofError
            };
            (verdict, response.messages, elapsed, contains_sorry)
        }
        WorkerReply::TimedOut { elapsed } => (
            Verdict::Timeout,
            vec![Diagnostic::error(format!(
                "check exceeded {} ms; worker restarted",
                duration_ms(timeout)
            ))],
            elapsed,
            scanned,
        ),
        WorkerReply::Crashed { reason, elapsed } => (
            Verdict::CheckerCrash,
            vec![Diagnostic::error(reason)],
            elapsed,
            scanned,
        ),
    };
    CheckResult {
        attempt_id: attempt_id.to_string(),
        verdict,
        messages,
        elapsed_ms: duration_ms(elapsed),
        contains_sorry,
    }
}

/// One proof search target: the declaration to prove, the source text that
/// precedes it, and the prompt used for every attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofTask {
    pub problem_id: String,
    pub target: TheoremStatement,
    pub digest: Digest,
    pub prefix: String,
    pub prompt: String,
    pub sorry_exempt: Vec<String>,
}

impl ProofTask {
    /// A lemma proved as a standalone theorem under the problem preamble.
    /// The lemma is stated in canonical form.
    pub fn for_lemma(problem_id: &str, preamble: &str, lemma: &TheoremStatement) -> Self {
        let canonical = lemma.canonical();
        let target = parse_theorem_declaration(&canonical.text).unwrap_or_else(|_| lemma.clone());
        let prefix = lean_prefix(preamble, &[]);
        let source = format!("{prefix}{}\n", target.with_body("by sorry"));
        ProofTask {
            problem_id: problem_id.to_string(),
            prompt: build_prover_prompt(target.name(), &source),
            target,
            digest: canonical.digest,
            prefix,
            sorry_exempt: Vec::new(),
        }
    }

    pub fn source_with(&self, body: &str) -> String {
        format!("{}{}\n", self.prefix, self.target.with_body(body))
    }

    pub fn scope(&self) -> SorryScope {
        SorryScope {
            scan_from: self.prefix.len(),
            exempt: self.sorry_exempt.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptBody {
    Candidate {
        source: String,
        body: String,
    },
    /// Generation failed; the attempt still counts against k.
    Poisoned {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    /// 1-based.
    pub index: u32,
    pub latency: Duration,
    pub body: AttemptBody,
}

/// Lazily generated proof candidates. Each `next` issues one model call;
/// dropping the stream stops generation.
pub struct AttemptStream<'a> {
    task: &'a ProofTask,
    model: &'a ModelHandle,
    k: u32,
    next: u32,
}

impl Iterator for AttemptStream<'_> {
    type Item = Attempt;

    fn next(&mut self) -> Option<Attempt> {
        if self.next > self.k {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let request = self.model.request(
            None,
            self.task.prompt.clone(),
            Purpose::Prove {
                problem_id: self.task.problem_id.clone(),
                target: self.task.target.name().to_string(),
                digest: self.task.digest,
                attempt: index,
            },
        );
        let (latency, body) = match complete_with_retry(
            self.model.client.as_ref(),
            &request,
            self.model.config.retries,
        ) {
            Ok(c) => match proof_body_for(&c.text, self.task.target.name()) {
                Some(body) => (
                    c.latency,
                    AttemptBody::Candidate {
                        source: self.task.source_with(&body),
                        body,
                    },
                ),
                None => (
                    c.latency,
                    AttemptBody::Poisoned {
                        error: "model output contains no proof".into(),
                    },
                ),
            },
            Err(e) => (
                Duration::ZERO,
                AttemptBody::Poisoned {
                    error: e.to_string(),
                },
            ),
        };
        Some(Attempt {
            index,
            latency,
            body,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.k + 1).saturating_sub(self.next) as usize;
        (left, Some(left))
    }
}

pub fn generate_proof_attempts<'a>(
    task: &'a ProofTask,
    budget: &AttemptBudget,
    prover_model: &'a ModelHandle,
) -> AttemptStream<'a> {
    AttemptStream {
        task,
        model: prover_model,
        k: budget.k,
        next: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub digest: Digest,
    pub name: String,
    /// `PROVED`, `UNPROVED` or `EXHAUSTED_DEADLINE`.
    pub status: LemmaStatus,
    /// Full checked source of the first successful attempt.
    pub winning_proof: Option<String>,
    /// Proof body of that attempt.
    pub winning_body: Option<String>,
    pub attempts_used: u32,
    pub k: u32,
    pub results: Vec<CheckResult>,
    /// Generation plus checking time, milliseconds.
    pub elapsed_ms: u64,
}

/// Pulls attempts until one checks OK, the budget runs out, or the deadline
/// passes.
pub fn verify_task(
    task: &ProofTask,
    budget: &AttemptBudget,
    worker: &mut dyn CheckerWorker,
    prover_model: &ModelHandle,
) -> VerificationOutcome {
    let timeout = budget.timeout();
    let deadline = budget.total_deadline.map(Duration::from_secs_f64);
    let scope = task.scope();
    let mut spent = Duration::ZERO;
    let mut results = Vec::new();
    let mut status = LemmaStatus::Unproved;
    let mut winner = None;
    for attempt in generate_proof_attempts(task, budget, prover_model) {
        spent += attempt.latency;
        let attempt_id = format!("{}#{}", task.digest.short(), attempt.index);
        let result = match attempt.body {
            AttemptBody::Candidate { source, body } => {
                let r = check_proof(worker, &attempt_id, &source, timeout, &scope);
                if r.verdict == Verdict::Ok {
                    winner = Some((source, body));
                }
                r
            }
            AttemptBody::Poisoned { error } => CheckResult {
                attempt_id,
                verdict: Verdict::ProofError,
                messages: vec![Diagnostic::error(format!("generation failed: {error}"))],
                elapsed_ms: 0,
                contains_sorry: false,
            },
        };
        spent += Duration::from_millis(result.elapsed_ms);
        results.push(result);
        if winner.is_some() {
            status = LemmaStatus::Proved;
            break;
        }
        if deadline.is_some_and(|d| spent >= d) && (results.len() as u32) < budget.k {
            status = LemmaStatus::ExhaustedDeadline;
            break;
        }
    }
    let (winning_proof, winning_body) = winner.unzip();
    VerificationOutcome {
        digest: task.digest,
        name: task.target.name().to_string(),
        status,
        winning_proof,
        winning_body,
        attempts_used: results.len() as u32,
        k: budget.k,
        results,
        elapsed_ms: duration_ms(spent),
    }
}

/// Problem-level context shared by every lemma of one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaContext {
    pub problem_id: String,
    pub preamble: String,
}

pub fn verify_lemma(
    lemma: &TheoremStatement,
    context: &LemmaContext,
    budget: &AttemptBudget,
    worker: &mut dyn CheckerWorker,
    prover_model: &ModelHandle,
) -> VerificationOutcome {
    let task = ProofTask::for_lemma(&context.problem_id, &context.preamble, lemma);
    verify_task(&task, budget, worker, prover_model)
}

/// Verifies every lemma with at most `parallelism` in flight, one worker per
/// pool thread. The result does not depend on scheduling.
pub fn verify_batch(
    lemmas: &[CandidateLemma],
    context: &LemmaContext,
    budget: &AttemptBudget,
    backend: &ProverBackend,
    prover_model: &ModelHandle,
    parallelism: usize,
) -> BTreeMap<Digest, VerificationOutcome> {
    let threads = parallelism.max(1).min(lemmas.len());
    let next = AtomicUsize::new(0);
    let results = Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut worker = backend.spawn();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(lemma) = lemmas.get(i) else { break };
                    let outcome =
                        verify_lemma(&lemma.statement, context, budget, worker.as_mut(), prover_model);
                    tracing::debug!(name = %outcome.name, status = %outcome.status, attempts = outcome.attempts_used, "lemma verified");
                    results
                        .lock()
                        .unwrap_or_else(|p| p.into_inner())
                        .insert(lemma.digest(), outcome);
                }
            });
        }
    });
    results.into_inner().unwrap_or_else(|p| p.into_inner())
}
