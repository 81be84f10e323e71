use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::client::{ClientError, Completion, CompletionRequest, ModelClient, Purpose};
use crate::mock::{MockFixtures, ScriptedFailure, ScriptedReply};

/// Fixture-driven model. Latency is virtual: a scripted latency above the
/// request timeout yields a timeout without sleeping.
#[derive(Debug)]
pub struct MockModel {
    model_id: String,
    fixtures: Arc<MockFixtures>,
    calls: Mutex<BTreeMap<String, u32>>,
}

impl MockModel {
    pub fn new(model_id: impl Into<String>, fixtures: Arc<MockFixtures>) -> Self {
        MockModel {
            model_id: model_id.into(),
            fixtures,
            calls: Mutex::default(),
        }
    }

    /// Calls seen for a proof target (digest hex) or `decompose:<problem>`.
    pub fn calls_for(&self, key: &str) -> u32 {
        self.calls
            .lock()
            .expect("call lock")
            .get(key)
            .copied()
            .unwrap_or(0)
    }

    pub fn total_calls(&self) -> u32 {
        self.calls.lock().expect("call lock").values().sum()
    }

    fn count(&self, key: String) {
        *self
            .calls
            .lock()
            .expect("call lock")
            .entry(key)
            .or_default() += 1;
    }
}

fn scripted_error(fail: ScriptedFailure, timeout: Duration) -> ClientError {
    match fail {
        ScriptedFailure::Service => ClientError::service(Some(500), "scripted service failure"),
        ScriptedFailure::Transport => ClientError::transport("scripted connection failure"),
        ScriptedFailure::Timeout => ClientError::timeout(timeout),
    }
}

impl ModelClient for MockModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        match &request.purpose {
            Purpose::Decompose { problem_id, index } => {
                self.count(format!("decompose:{problem_id}"));
                let problem = self
                    .fixtures
                    .problem(problem_id)
                    .map_err(|e| ClientError::service(None, e.to_string()))?;
                if problem.script.unreachable {
                    return Err(ClientError::transport("connection refused"));
                }
                let latency = Duration::from_millis(
                    problem
                        .script
                        .response_latency_ms
                        .get(index)
                        .copied()
                        .unwrap_or(0),
                );
                if latency > request.timeout {
                    return Err(ClientError::timeout(request.timeout));
                }
                let text = problem.responses.get(*index).ok_or_else(|| {
                    ClientError::service(
                        Some(404),
                        format!("no fixture response {index} for `{problem_id}`"),
                    )
                })?;
                Ok(Completion {
                    text: text.clone(),
                    usage: None,
                    latency,
                })
            }
            Purpose::Prove {
                problem_id,
                target,
                digest,
                attempt,
            } => {
                let key = digest.to_hex();
                self.count(key.clone());
                let problem = self
                    .fixtures
                    .problem(problem_id)
                    .map_err(|e| ClientError::service(None, e.to_string()))?;
                let replies = problem
                    .script
                    .proofs
                    .get(&key)
                    .or_else(|| problem.script.proofs.get(target));
                let slot = (*attempt as usize).checked_sub(1);
                match replies.zip(slot).and_then(|(r, i)| r.get(i)) {
                    Some(ScriptedReply::Failure { fail }) => {
                        Err(scripted_error(*fail, request.timeout))
                    }
                    Some(ScriptedReply::Text(text)) => Ok(Completion {
                        text: text.clone(),
                        usage: None,
                        latency: Duration::ZERO,
                    }),
                    None => Ok(Completion {
                        text: format!("by mock_attempt_{attempt}"),
                        usage: None,
                        latency: Duration::ZERO,
                    }),
                }
            }
        }
    }
}
