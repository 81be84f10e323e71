use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::problem::Rename;
use crate::prover::{Verdict, VerificationOutcome};
use crate::reasoner::RequestError;
use crate::statement::Digest;
use crate::store::{timestamp, LemmaStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineStatus {
    Solved,
    Unsolved,
    /// Lemmas verified but the final proof failed, or the run stopped early.
    Partial,
}

impl fmt::Display for PipelineStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStatus::Solved => "SOLVED",
            PipelineStatus::Unsolved => "UNSOLVED",
            PipelineStatus::Partial => "PARTIAL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Soundness {
    #[serde(rename = "SOUND")]
    Sound,
    /// Oracle stubs were placed in the final context.
    #[serde(rename = "NON-SOUND")]
    NonSound,
}

/// A stored raw response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRef {
    pub subproblem: String,
    pub index: usize,
    pub artifact: String,
    pub sha256: String,
    pub bytes: usize,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubproblemError {
    pub subproblem: String,
    #[serde(flatten)]
    pub error: RequestError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub name: String,
    pub digest: Digest,
    pub statement: String,
    pub response_index: usize,
    pub status: Option<LemmaStatus>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub subproblems: Vec<String>,
    pub responses: Vec<ResponseRef>,
    pub errors: Vec<SubproblemError>,
    /// Statements extracted before deduplication.
    pub extracted: usize,
    /// Statements dropped as duplicates.
    pub duplicates: usize,
    pub candidates: Vec<CandidateSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub k: u32,
    pub outcomes: BTreeMap<Digest, VerificationOutcome>,
    pub attempts_total: u64,
    pub proved: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage3Report {
    pub final_source_digest: Digest,
    pub final_source: String,
    pub lemma_names: Vec<String>,
    pub renames: Vec<Rename>,
    pub oracle_stubs: Vec<String>,
    pub model: String,
    pub prompt_template: String,
    pub assembly_template: String,
    pub outcome: VerificationOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1_ms: u64,
    pub stage2_ms: u64,
    pub stage3_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem_id: String,
    pub status: PipelineStatus,
    pub soundness: Soundness,
    /// Stage the run was about to enter when this copy was written; `None`
    /// once the run finished.
    pub checkpoint: Option<String>,
    pub error: Option<String>,
    #[serde(with = "timestamp")]
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<String>,
    pub extracted_count: usize,
    pub dedup_count: usize,
    pub candidate_count: usize,
    pub rounds: Vec<RoundReport>,
    pub stage2: Stage2Report,
    pub stage3: Option<Stage3Report>,
    pub timings: StageTimings,
    pub templates: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn proved_count(&self) -> usize {
        self.stage2.proved
    }

    pub fn final_attempts(&self) -> u32 {
        self.stage3.as_ref().map_or(0, |s| s.outcome.attempts_used)
    }

    /// `<problem_id> <status> candidates=<n> proved=<m> final_attempts=<a>`
    pub fn summary_line(&self) -> String {
        format!(
            "{} {} candidates={} proved={} final_attempts={}",
            self.problem_id,
            self.status,
            self.candidate_count,
            self.proved_count(),
            self.final_attempts()
        )
    }

    /// Cross-checks the report's own arithmetic.
    pub fn check_consistency(&self) -> Result<(), String> {
        let attempts: u64 = self
            .stage2
            .outcomes
            .values()
            .map(|o| u64::from(o.attempts_used))
            .sum();
        if attempts != self.stage2.attempts_total {
            return Err(format!(
                "attempts_total {} != sum {}",
                self.stage2.attempts_total, attempts
            ));
        }
        let proved = self
            .stage2
            .outcomes
            .values()
            .filter(|o| o.status == LemmaStatus::Proved)
            .count();
        if proved != self.stage2.proved {
            return Err(format!(
                "proved {} != recount {}",
                self.stage2.proved, proved
            ));
        }
        let candidates: usize = self.rounds.iter().map(|r| r.candidates.len()).sum();
        if candidates != self.candidate_count {
            return Err(format!(
                "candidate_count {} != {}",
                self.candidate_count, candidates
            ));
        }
        let extracted: usize = self.rounds.iter().map(|r| r.extracted).sum();
        let duplicates: usize = self.rounds.iter().map(|r| r.duplicates).sum();
        if extracted != self.extracted_count || duplicates != self.dedup_count {
            return Err("extraction counts do not reconcile".into());
        }
        if extracted != candidates + duplicates {
            return Err(format!(
                "extracted {extracted} != candidates {candidates} + duplicates {duplicates}"
            ));
        }
        for o in self.stage2.outcomes.values() {
            if o.attempts_used > o.k || o.results.len() != o.attempts_used as usize {
                return Err(format!("budget accounting broken for {}", o.name));
            }
        }
        let final_ok = self
            .stage3
            .as_ref()
            .is_some_and(|s| s.outcome.results.iter().any(|r| r.verdict == Verdict::Ok));
        if (self.status == PipelineStatus::Solved) != final_ok {
            return Err("SOLVED must coincide with an OK final check".into());
        }
        let stubs = self
            .stage3
            .as_ref()
            .is_some_and(|s| !s.oracle_stubs.is_empty());
        if stubs && self.soundness != Soundness::NonSound {
            return Err("oracle stubs present in a report marked SOUND".into());
        }
        Ok(())
    }
}
