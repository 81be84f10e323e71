//! Stage-1 client: prompt rendering, model calls and decomposition parsing.

mod client;
mod http;
mod mock;
mod prompt;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use client::{
    complete_with_retry, ClientError, Completion, CompletionRequest, ConfigError, ModelClient,
    Provider, Purpose, ReasonerConfig, RequestError, Usage,
};
pub use http::{build_request, parse_response, HttpModel, WireRequest};
pub use mock::MockModel;
pub use prompt::{
    build_decomposition_prompt, build_final_proof_prompt, build_prover_prompt,
    decomposition_template, lean_prefix, render_final_prompt, render_lean_source, require_proved,
    UnverifiedLemma, DECOMPOSITION_TEMPLATE_VERSION, FINAL_TEMPLATE_VERSION,
    PROVER_TEMPLATE_VERSION,
};

use crate::mock::MockFixtures;
use crate::statement::{
    extract_lemma_statements, rename_theorem, CanonicalStatement, Digest, ExtractionMode, Span,
    TheoremStatement,
};

/// A configured model together with its client.
#[derive(Clone)]
pub struct ModelHandle {
    pub config: ReasonerConfig,
    pub client: Arc<dyn ModelClient>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("provider", &self.config.provider)
            .field("model", &self.config.model)
            .finish()
    }
}

impl ModelHandle {
    /// Builds the client the config asks for. Mock providers read `fixtures`.
    pub fn from_config(config: ReasonerConfig, fixtures: &Arc<MockFixtures>) -> Self {
        let client: Arc<dyn ModelClient> = match config.provider {
            Provider::Mock => Arc::new(MockModel::new(config.model.clone(), fixtures.clone())),
            _ => Arc::new(HttpModel::new(config.clone())),
        };
        ModelHandle { config, client }
    }

    pub fn model_id(&self) -> &str {
        self.client.model_id()
    }

    pub fn request(
        &self,
        system: Option<String>,
        user: String,
        purpose: Purpose,
    ) -> CompletionRequest {
        CompletionRequest {
            system,
            user,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            timeout: self.config.timeout(),
            purpose,
        }
    }
}

/// One decomposition reply, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerResponse {
    pub index: usize,
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

/// Where a candidate lemma came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub reasoner_model: String,
    pub response_index: usize,
    pub round: u32,
    pub extraction_mode: ExtractionMode,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLemma {
    pub statement: TheoremStatement,
    pub canonical: CanonicalStatement,
    pub provenance: Provenance,
}

impl CandidateLemma {
    pub fn name(&self) -> &str {
        self.statement.name()
    }

    pub fn digest(&self) -> Digest {
        self.canonical.digest
    }
}

/// Responses that arrived plus the per-request failures.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionBatch {
    pub responses: Vec<ReasonerResponse>,
    pub errors: Vec<RequestError>,
}

/// Issues `config.samples` independent decomposition requests for
/// `problem_id` and collects whatever arrives. Responses are ordered by
/// index; a failed request never affects the others.
pub fn request_decomposition(
    model: &ModelHandle,
    problem_id: &str,
    problem_source: &str,
) -> DecompositionBatch {
    let samples = model.config.samples as usize;
    if let Err(error) = model.client.preflight() {
        return DecompositionBatch {
            responses: Vec::new(),
            errors: (0..samples)
                .map(|index| RequestError {
                    index,
                    error: error.clone(),
                })
                .collect(),
        };
    }
    let prompt = build_decomposition_prompt(problem_source);
    let results: Vec<(usize, Result<Completion, ClientError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..samples)
            .map(|index| {
                let request = model.request(
                    None,
                    prompt.clone(),
                    Purpose::Decompose {
                        problem_id: problem_id.to_string(),
                        index,
                    },
                );
                scope.spawn(move || {
                    (
                        index,
                        complete_with_retry(model.client.as_ref(), &request, model.config.retries),
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decomposition request thread panicked"))
            .collect()
    });

    let mut batch = DecompositionBatch::default();
    for (index, result) in results {
        match result {
            Ok(c) => batch.responses.push(ReasonerResponse {
                index,
                text: c.text,
                usage: c.usage,
                latency_ms: duration_ms(c.latency),
            }),
            Err(error) => {
                tracing::warn!(problem_id, index, %error, "decomposition request failed");
                batch.errors.push(RequestError { index, error });
            }
        }
    }
    batch.responses.sort_by_key(|r| r.index);
    batch.errors.sort_by_key(|e| e.index);
    batch
}

pub(crate) fn duration_ms(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

/// Cross-response deduplication by digest with collision-free naming.
/// One instance can span several refinement rounds.
#[derive(Debug, Default, Clone)]
pub struct Deduper {
    digests: HashSet<Digest>,
    names: HashSet<String>,
    /// Statements extracted before deduplication.
    pub extracted: usize,
    /// Statements dropped as duplicates.
    pub duplicates: usize,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seen(&self, digest: &Digest) -> bool {
        self.digests.contains(digest)
    }

    /// Marks `digest` as already known without producing a candidate.
    pub fn insert_known(&mut self, digest: Digest, name: &str) {
        self.digests.insert(digest);
        self.names.insert(name.to_string());
    }

    /// Extracts the statements of one response and keeps the new ones.
    pub fn push_response(
        &mut self,
        response: &ReasonerResponse,
        mode: ExtractionMode,
        model_id: &str,
        round: u32,
    ) -> Vec<CandidateLemma> {
        let mut out = Vec::new();
        for (ordinal, stmt) in extract_lemma_statements(&response.text, mode)
            .into_iter()
            .enumerate()
        {
            self.extracted += 1;
            let canonical = stmt.canonical();
            if !self.digests.insert(canonical.digest) {
                self.duplicates += 1;
                continue;
            }
            let span = stmt.span();
            let stmt = if self.names.contains(stmt.name()) {
                let mut fresh = format!("{}_r{}_{}", stmt.name(), response.index, ordinal);
                while self.names.contains(&fresh) {
                    fresh.push('_');
                }
                rename_theorem(&stmt, &fresh).expect("suffixed name stays valid")
            } else {
                stmt
            };
            self.names.insert(stmt.name().to_string());
            out.push(CandidateLemma {
                canonical: stmt.canonical(),
                statement: stmt,
                provenance: Provenance {
                    reasoner_model: model_id.to_string(),
                    response_index: response.index,
                    round,
                    extraction_mode: mode,
                    span,
                },
            });
        }
        out
    }
}

/// Extracts, deduplicates and names the candidate lemmas of one batch of
/// responses. A pure function of the response texts.
pub fn parse_decomposition(
    responses: &[ReasonerResponse],
    mode: ExtractionMode,
    model_id: &str,
) -> Vec<CandidateLemma> {
    let mut ordered: Vec<&ReasonerResponse> = responses.iter().collect();
    ordered.sort_by_key(|r| r.index);
    let mut dedup = Deduper::new();
    ordered
        .into_iter()
        .flat_map(|r| dedup.push_response(r, mode, model_id, 1))
        .collect()
}
