use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoner::Provenance;
use crate::statement::{is_valid_identifier, mentions_sorry, parse_theorem_declaration, Digest};

/// Verification status of a stored lemma. The first three form the
/// lattice `UNPROVED < EXHAUSTED_DEADLINE < PROVED`; `ORACLE_SORRY` marks
/// a lemma stubbed with `by sorry` and sits outside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LemmaStatus {
    Unproved,
    ExhaustedDeadline,
    Proved,
    OracleSorry,
}

impl LemmaStatus {
    pub const ALL: [LemmaStatus; 4] = [
        LemmaStatus::Unproved,
        LemmaStatus::ExhaustedDeadline,
        LemmaStatus::Proved,
        LemmaStatus::OracleSorry,
    ];

    /// Position on the lattice, `None` for `ORACLE_SORRY`.
    pub fn rank(self) -> Option<u8> {
        match self {
            LemmaStatus::Unproved => Some(0),
            LemmaStatus::ExhaustedDeadline => Some(1),
            LemmaStatus::Proved => Some(2),
            LemmaStatus::OracleSorry => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LemmaStatus::Unproved => "UNPROVED",
            LemmaStatus::ExhaustedDeadline => "EXHAUSTED_DEADLINE",
            LemmaStatus::Proved => "PROVED",
            LemmaStatus::OracleSorry => "ORACLE_SORRY",
        }
    }
}

impl fmt::Display for LemmaStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LemmaStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LemmaStatus::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

/// Body of an oracle stub.
pub const ORACLE_STUB: &str = "by sorry";

/// A past verification, kept when a record is superseded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationEvent {
    pub status: LemmaStatus,
    pub prover_model: String,
    pub attempts_used: u32,
    pub k: u32,
    pub per_attempt_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verification {
    pub prover_model: String,
    pub attempts_used: u32,
    pub k: u32,
    /// Seconds.
    pub per_attempt_timeout: f64,
    pub history: Vec<VerificationEvent>,
    pub notes: Option<String>,
}

/// One dataset row. Field order is the export key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaRecord {
    pub problem_id: String,
    pub name: String,
    /// Canonical statement text.
    pub statement: String,
    pub digest: Digest,
    pub status: LemmaStatus,
    pub proof: Option<String>,
    pub provenance: Provenance,
    pub verification: Verification,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid record `{name}`: {reason}")]
pub struct InvariantViolation {
    pub name: String,
    pub reason: String,
}

impl LemmaRecord {
    /// Current time at the precision records are stored with.
    pub fn now() -> DateTime<Utc> {
        Utc::now().trunc_subsecs(6)
    }

    pub fn event(&self) -> VerificationEvent {
        VerificationEvent {
            status: self.status,
            prover_model: self.verification.prover_model.clone(),
            attempts_used: self.verification.attempts_used,
            k: self.verification.k,
            per_attempt_timeout: self.verification.per_attempt_timeout,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let fail = |reason: String| {
            Err(InvariantViolation {
                name: self.name.clone(),
                reason,
            })
        };
        if self.problem_id.is_empty() {
            return fail("empty problem_id".into());
        }
        if !is_valid_identifier(&self.name) {
            return fail("name is not an identifier".into());
        }
        let stmt = match parse_theorem_declaration(&self.statement) {
            Ok(s) => s,
            Err(e) => return fail(format!("statement does not parse: {e}")),
        };
        if stmt.name() != self.name {
            return fail(format!("statement declares `{}`", stmt.name()));
        }
        let canonical = stmt.canonical();
        if canonical.text != self.statement {
            return fail("statement is not in canonical form".into());
        }
        if canonical.digest != self.digest {
            return fail("digest does not match statement".into());
        }
        match (self.status, self.proof.as_deref()) {
            (LemmaStatus::Proved, Some(p)) if !p.trim().is_empty() && !mentions_sorry(p) => Ok(()),
            (LemmaStatus::Proved, _) => fail("PROVED requires a sorry-free proof".into()),
            (LemmaStatus::OracleSorry, Some(ORACLE_STUB)) => Ok(()),
            (LemmaStatus::OracleSorry, _) => {
                fail(format!("ORACLE_SORRY proof must be `{ORACLE_STUB}`"))
            }
            (_, Some(_)) => fail(format!("{} record carries a proof", self.status)),
            (_, None) => Ok(()),
        }
    }
}

/// RFC 3339 with microseconds and a `Z` suffix.
pub(crate) mod timestamp {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(t: &DateTime<Utc>) -> String {
        t.to_rfc3339_opts(SecondsFormat::Micros, true)
    }

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&text)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}
