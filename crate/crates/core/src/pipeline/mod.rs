//! Stages 1 to 3 end to end, with optional refinement rounds.

mod problem;
mod report;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use problem::{
    assemble_context, assemble_oracle_context, FinalSource, Problem, ProblemError, Rename,
    ASSEMBLY_VERSION,
};
pub use report::{
    CandidateSummary, PipelineStatus, ResponseRef, RoundReport, RunReport, Soundness, Stage2Report,
    Stage3Report, StageTimings, SubproblemError,
};

use crate::config::{BackendKind, PipelineConfig};
use crate::mock::{load_checker_table, FixtureError, MockFixtures};
use crate::prover::{
    verify_batch, verify_task, AttemptBudget, LemmaContext, ProofTask, ProverBackend,
    VerificationOutcome,
};
use crate::reasoner::{
    build_final_proof_prompt, duration_ms, lean_prefix, render_final_prompt, request_decomposition,
    CandidateLemma, ConfigError, Deduper, ModelHandle, RequestError, UnverifiedLemma,
    DECOMPOSITION_TEMPLATE_VERSION, FINAL_TEMPLATE_VERSION, PROVER_TEMPLATE_VERSION,
};
use crate::statement::{parse_theorem_declaration, Digest, ExtractionMode};
use crate::store::{
    timestamp, LemmaRecord, LemmaStatus, LemmaStore, StoreError, Verification, ORACLE_STUB,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Unverified(#[from] UnverifiedLemma),
    #[error("no decomposition response arrived: {}", errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    NoResponses { errors: Vec<RequestError> },
}

/// What one decomposition call produced.
#[derive(Debug, Clone, Default)]
pub struct Stage1Output {
    pub candidates: Vec<CandidateLemma>,
    pub responses: Vec<ResponseRef>,
    pub errors: Vec<RequestError>,
    pub extracted: usize,
    pub duplicates: usize,
}

/// A configured pipeline: models, checker backend and store.
pub struct Pipeline {
    config: PipelineConfig,
    fixtures: Arc<MockFixtures>,
    reasoner: ModelHandle,
    prover: ModelHandle,
    final_model: ModelHandle,
    store: Arc<LemmaStore>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("reasoner", &self.reasoner)
            .field("prover", &self.prover)
            .field("final_model", &self.final_model)
            .finish()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Pipeline {
    /// Validates `config` and builds its clients. Mock clients read
    /// `fixtures`.
    pub fn new(
        config: PipelineConfig,
        fixtures: Arc<MockFixtures>,
        store: Arc<LemmaStore>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let reasoner = ModelHandle::from_config(config.reasoner.clone(), &fixtures);
        let prover = ModelHandle::from_config(config.prover_model.clone(), &fixtures);
        let final_model = ModelHandle::from_config(config.final_model_config().clone(), &fixtures);
        Ok(Pipeline {
            config,
            fixtures,
            reasoner,
            prover,
            final_model,
            store,
        })
    }

    /// Replaces the clients, e.g. with instrumented ones.
    pub fn with_models(
        mut self,
        reasoner: ModelHandle,
        prover: ModelHandle,
        final_model: ModelHandle,
    ) -> Self {
        self.reasoner = reasoner;
        self.prover = prover;
        self.final_model = final_model;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<LemmaStore> {
        &self.store
    }

    /// The checker backend for `problem_id`. The mock backend takes its
    /// rules from the configured file or from the problem's fixture script.
    pub fn backend_for(&self, problem_id: &str) -> Result<ProverBackend, PipelineError> {
        Ok(match self.config.backend.kind {
            BackendKind::External => ProverBackend::External(self.config.backend.external_spec()),
            BackendKind::Mock => {
                let table = match &self.config.backend.rules {
                    Some(path) => load_checker_table(path)?,
                    None => self.fixtures.problem(problem_id)?.script.checker.clone(),
                };
                ProverBackend::Mock(Arc::new(table))
            }
        })
    }

    /// Requests a decomposition of `source` and parses it with `dedup`.
    /// Raw responses are persisted before parsing.
    pub fn decompose(
        &self,
        subproblem: &str,
        source: &str,
        round: u32,
        mode: ExtractionMode,
        dedup: &mut Deduper,
    ) -> Result<Stage1Output, PipelineError> {
        let batch = request_decomposition(&self.reasoner, subproblem, source);
        let mut out = Stage1Output {
            errors: batch.errors.clone(),
            ..Default::default()
        };
        for response in &batch.responses {
            let artifact = format!("responses/{subproblem}/response_{}.md", response.index);
            self.store
                .write_artifact(&artifact, response.text.as_bytes())?;
            out.responses.push(ResponseRef {
                subproblem: subproblem.to_string(),
                index: response.index,
                artifact,
                sha256: sha256_hex(response.text.as_bytes()),
                bytes: response.text.len(),
                latency_ms: response.latency_ms,
            });
        }
        if batch.responses.is_empty() && !batch.errors.is_empty() {
            return Err(PipelineError::NoResponses {
                errors: batch.errors,
            });
        }
        let (extracted, duplicates) = (dedup.extracted, dedup.duplicates);
        for response in &batch.responses {
            out.candidates.extend(dedup.push_response(
                response,
                mode,
                self.reasoner.model_id(),
                round,
            ));
        }
        out.extracted = dedup.extracted - extracted;
        out.duplicates = dedup.duplicates - duplicates;
        Ok(out)
    }

    /// Stage 1 for the main theorem.
    pub fn stage1_decompose(
        &self,
        problem: &Problem,
        mode: ExtractionMode,
    ) -> Result<Stage1Output, PipelineError> {
        let mut dedup = Deduper::new();
        dedup.insert_known(problem.main_digest(), problem.main_theorem.name());
        self.decompose(&problem.id, &problem.source(), 1, mode, &mut dedup)
    }

    /// Stage 2: verifies every candidate and stores a record for each.
    /// Records come back in candidate order.
    pub fn stage2_filter(
        &self,
        problem: &Problem,
        candidates: &[CandidateLemma],
        budget: &AttemptBudget,
        backend: &ProverBackend,
    ) -> Result<(Vec<LemmaRecord>, BTreeMap<Digest, VerificationOutcome>), PipelineError> {
        self.filter_candidates(&problem.lemma_context(), candidates, budget, backend)
    }

    /// Stage 2 without a main theorem, e.g. for a standalone lemma file.
    pub fn filter_candidates(
        &self,
        ctx: &LemmaContext,
        candidates: &[CandidateLemma],
        budget: &AttemptBudget,
        backend: &ProverBackend,
    ) -> Result<(Vec<LemmaRecord>, BTreeMap<Digest, VerificationOutcome>), PipelineError> {
        let outcomes = verify_batch(
            candidates,
            ctx,
            budget,
            backend,
            &self.prover,
            self.config.run.parallelism,
        );
        let mut records = Vec::with_capacity(candidates.len());
        for c in candidates {
            let o = &outcomes[&c.digest()];
            let record = LemmaRecord {
                problem_id: ctx.problem_id.clone(),
                name: c.name().to_string(),
                statement: c.canonical.text.clone(),
                digest: c.digest(),
                status: o.status,
                proof: o.winning_body.clone(),
                provenance: c.provenance.clone(),
                verification: Verification {
                    prover_model: self.prover.model_id().to_string(),
                    attempts_used: o.attempts_used,
                    k: o.k,
                    per_attempt_timeout: budget.per_attempt_timeout,
                    history: Vec::new(),
                    notes: None,
                },
                created_at: LemmaRecord::now(),
            };
            let stored = match self.store.put_record(record.clone()) {
                Ok(_) => self
                    .store
                    .get(&ctx.problem_id, &record.digest)
                    .unwrap_or(record),
                Err(StoreError::StatusDowngrade { existing }) => *existing,
                Err(e) => return Err(e.into()),
            };
            records.push(stored);
        }
        Ok((records, outcomes))
    }

    /// Stage 3: asks the final model for the main proof over `final_source`
    /// and checks up to `k` answers.
    pub fn stage3_final(
        &self,
        problem: &Problem,
        final_source: &FinalSource,
        budget: &AttemptBudget,
        backend: &ProverBackend,
    ) -> Result<VerificationOutcome, PipelineError> {
        let prompt = if final_source.is_sound() {
            build_final_proof_prompt(
                &final_source.preamble,
                &final_source.main,
                &final_source.lemmas,
            )?
        } else {
            render_final_prompt(final_source.main.name(), &final_source.render())
        };
        let task = ProofTask {
            problem_id: problem.id.clone(),
            target: final_source.main.clone(),
            digest: problem.main_digest(),
            prefix: final_source.prefix(),
            prompt,
            sorry_exempt: final_source.oracle_stubs(),
        };
        let mut worker = backend.spawn();
        Ok(verify_task(
            &task,
            budget,
            worker.as_mut(),
            &self.final_model,
        ))
    }

    fn checkpoint(&self, report: &mut RunReport, stage: &str) {
        report.checkpoint = Some(stage.to_string());
        self.write_report(report);
    }

    fn write_report(&self, report: &RunReport) {
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        let path = format!("runs/{}/report.json", report.problem_id);
        if let Err(e) = self.store.write_artifact(&path, text.as_bytes()) {
            tracing::error!(%e, "cannot persist run report");
        }
    }

    fn new_report(&self, problem: &Problem) -> RunReport {
        RunReport {
            problem_id: problem.id.clone(),
            status: PipelineStatus::Partial,
            soundness: if self.config.run.oracle_sorry {
                Soundness::NonSound
            } else {
                Soundness::Sound
            },
            checkpoint: None,
            error: None,
            started_at: LemmaRecord::now(),
            finished_at: None,
            extracted_count: 0,
            dedup_count: 0,
            candidate_count: 0,
            rounds: Vec::new(),
            stage2: Stage2Report {
                k: self.config.stage2.k,
                ..Default::default()
            },
            stage3: None,
            timings: StageTimings::default(),
            templates: [
                ("decomposition", DECOMPOSITION_TEMPLATE_VERSION),
                ("prover", PROVER_TEMPLATE_VERSION),
                ("final", FINAL_TEMPLATE_VERSION),
                ("assembly", ASSEMBLY_VERSION),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
            config: self.config.redacted(),
        }
    }

    fn finish(&self, mut report: RunReport) -> RunReport {
        report.checkpoint = None;
        report.finished_at = Some(timestamp::format(&LemmaRecord::now()));
        self.write_report(&report);
        report
    }

    fn fail(&self, mut report: RunReport, error: PipelineError) -> RunReport {
        tracing::error!(problem_id = %report.problem_id, %error, "run stopped");
        report.status = PipelineStatus::Partial;
        report.error = Some(error.to_string());
        self.finish(report)
    }

    /// Runs all stages. Never loses a run: fatal errors end in a PARTIAL
    /// report that is written to the store like any other.
    pub fn solve(&self, problem: &Problem) -> RunReport {
        let mut report = self.new_report(problem);
        let mode = self.config.run.mode;
        let budget = self.config.stage2;

        let backend = match self.backend_for(&problem.id) {
            Ok(b) => b,
            Err(e) => return self.fail(report, e),
        };

        let mut dedup = Deduper::new();
        dedup.insert_known(problem.main_digest(), problem.main_theorem.name());
        // (round, emission) order
        let mut all_records: Vec<LemmaRecord> = Vec::new();
        let mut previous: Vec<LemmaRecord> = Vec::new();

        for round in 1..=self.config.run.rounds {
            let subproblems: Vec<(String, String)> = if round == 1 {
                vec![(problem.id.clone(), problem.source())]
            } else {
                previous
                    .iter()
                    .filter(|r| r.status != LemmaStatus::Proved)
                    .map(|r| {
                        let stmt = parse_theorem_declaration(&r.statement)
                            .expect("stored statements parse");
                        let source = format!(
                            "{}{}\n",
                            lean_prefix(&problem.preamble, &[]),
                            stmt.with_body("by sorry")
                        );
                        (format!("{}/{}", problem.id, r.name), source)
                    })
                    .collect()
            };
            if subproblems.is_empty() {
                break;
            }

            self.checkpoint(&mut report, &format!("stage1:round{round}"));
            let t1 = Instant::now();
            let mut round_report = RoundReport {
                round,
                subproblems: subproblems.iter().map(|(s, _)| s.clone()).collect(),
                ..Default::default()
            };
            let mut candidates = Vec::new();
            for (sub, source) in &subproblems {
                match self.decompose(sub, source, round, mode, &mut dedup) {
                    Ok(out) => {
                        round_report.responses.extend(out.responses);
                        round_report
                            .errors
                            .extend(out.errors.into_iter().map(|error| SubproblemError {
                                subproblem: sub.clone(),
                                error,
                            }));
                        round_report.extracted += out.extracted;
                        round_report.duplicates += out.duplicates;
                        candidates.extend(out.candidates);
                    }
                    Err(PipelineError::NoResponses { errors }) if round > 1 => {
                        round_report.errors.extend(errors.into_iter().map(|error| {
                            SubproblemError {
                                subproblem: sub.clone(),
                                error,
                            }
                        }));
                    }
                    Err(e) => {
                        report.timings.stage1_ms += duration_ms(t1.elapsed());
                        if let PipelineError::NoResponses { errors } = &e {
                            round_report
                                .errors
                                .extend(errors.iter().cloned().map(|error| SubproblemError {
                                    subproblem: sub.clone(),
                                    error,
                                }));
                        }
                        report.rounds.push(round_report);
                        return self.fail(report, e);
                    }
                }
            }
            report.timings.stage1_ms += duration_ms(t1.elapsed());
            report.extracted_count += round_report.extracted;
            report.dedup_count += round_report.duplicates;
            report.candidate_count += candidates.len();
            round_report.candidates = candidates
                .iter()
                .map(|c| CandidateSummary {
                    name: c.name().to_string(),
                    digest: c.digest(),
                    statement: c.canonical.text.clone(),
                    response_index: c.provenance.response_index,
                    status: None,
                })
                .collect();
            report.rounds.push(round_report);

            self.checkpoint(&mut report, &format!("stage2:round{round}"));
            let t2 = Instant::now();
            let (records, outcomes) =
                match self.stage2_filter(problem, &candidates, &budget, &backend) {
                    Ok(r) => r,
                    Err(e) => return self.fail(report, e),
                };
            report.timings.stage2_ms += duration_ms(t2.elapsed());
            let round_report = report.rounds.last_mut().expect("pushed above");
            for (summary, record) in round_report.candidates.iter_mut().zip(&records) {
                summary.status = Some(record.status);
            }
            for (digest, outcome) in outcomes {
                report.stage2.attempts_total += u64::from(outcome.attempts_used);
                if outcome.status == LemmaStatus::Proved {
                    report.stage2.proved += 1;
                }
                report.stage2.outcomes.insert(digest, outcome);
            }
            all_records.extend(records.iter().cloned());
            previous = records;
        }

        self.checkpoint(&mut report, "stage3");
        let t3 = Instant::now();
        let assembled = if self.config.run.oracle_sorry {
            let context: Vec<LemmaRecord> = all_records
                .iter()
                .map(|r| {
                    if r.status == LemmaStatus::Proved {
                        r.clone()
                    } else {
                        LemmaRecord {
                            status: LemmaStatus::OracleSorry,
                            proof: Some(ORACLE_STUB.to_string()),
                            ..r.clone()
                        }
                    }
                })
                .collect();
            assemble_oracle_context(problem, &context)
        } else {
            let proved: Vec<LemmaRecord> = all_records
                .iter()
                .filter(|r| r.status == LemmaStatus::Proved)
                .cloned()
                .collect();
            assemble_context(problem, &proved)
        };
        let (final_source, renames) = match assembled {
            Ok(a) => a,
            Err(e) => return self.fail(report, e.into()),
        };
        let rendered = final_source.render();
        if let Err(e) = self.store.write_artifact(
            &format!("runs/{}/final_context.lean", problem.id),
            rendered.as_bytes(),
        ) {
            return self.fail(report, e.into());
        }
        let final_budget = self.config.final_stage.budget();
        let outcome = match self.stage3_final(problem, &final_source, &final_budget, &backend) {
            Ok(o) => o,
            Err(e) => return self.fail(report, e),
        };
        report.timings.stage3_ms = duration_ms(t3.elapsed());
        if let Some(source) = &outcome.winning_proof {
            if let Err(e) = self.store.write_artifact(
                &format!("runs/{}/final_proof.lean", problem.id),
                source.as_bytes(),
            ) {
                return self.fail(report, e.into());
            }
        }
        report.status = if outcome.status == LemmaStatus::Proved {
            PipelineStatus::Solved
        } else if report.stage2.proved > 0 {
            PipelineStatus::Partial
        } else {
            PipelineStatus::Unsolved
        };
        if !final_source.is_sound() {
            report.soundness = Soundness::NonSound;
        }
        report.stage3 = Some(Stage3Report {
            final_source_digest: Digest::of(&rendered),
            final_source: rendered,
            lemma_names: final_source.lemmas.iter().map(|r| r.name.clone()).collect(),
            renames,
            oracle_stubs: final_source.oracle_stubs(),
            model: self.final_model.model_id().to_string(),
            prompt_template: FINAL_TEMPLATE_VERSION.to_string(),
            assembly_template: final_source.template_version.clone(),
            outcome,
        });
        self.finish(report)
    }
}
