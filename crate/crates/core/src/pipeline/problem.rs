use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prover::LemmaContext;
use crate::reasoner::{lean_prefix, render_lean_source, require_proved, UnverifiedLemma};
use crate::statement::{
    extract_declarations, parse_theorem_declaration, rename_theorem, Digest, TheoremStatement,
};
use crate::store::{LemmaRecord, LemmaStatus, ORACLE_STUB};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no theorem declaration found")]
    NoTheorem,
    #[error("the problem has no preamble before its main theorem")]
    EmptyPreamble,
    #[error("invalid problem id `{0}`")]
    InvalidId(String),
}

/// A problem file: preamble plus the main theorem (the last declaration).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub preamble: String,
    pub main_theorem: TheoremStatement,
    pub source_path: Option<PathBuf>,
}

impl Problem {
    pub fn from_source(id: impl Into<String>, text: &str) -> Result<Self, ProblemError> {
        let id = id.into();
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(ProblemError::InvalidId(id));
        }
        let main = extract_declarations(text)
            .pop()
            .ok_or(ProblemError::NoTheorem)?
            .statement;
        let preamble = text[..main.span().start].trim_end().to_string();
        if preamble.trim().is_empty() {
            return Err(ProblemError::EmptyPreamble);
        }
        Ok(Problem {
            id,
            preamble,
            main_theorem: main,
            source_path: None,
        })
    }

    /// Loads a `.lean` file; the id is the file stem unless given.
    pub fn load(path: &Path, id: Option<&str>) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let id = match id {
            Some(id) => id.to_string(),
            None => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let mut problem = Problem::from_source(id, &text)?;
        problem.source_path = Some(path.to_path_buf());
        Ok(problem)
    }

    /// Preamble and main theorem ending `:= by sorry`.
    pub fn source(&self) -> String {
        render_lean_source(&self.preamble, &[], &self.main_theorem, "by sorry")
    }

    pub fn lemma_context(&self) -> LemmaContext {
        LemmaContext {
            problem_id: self.id.clone(),
            preamble: self.preamble.clone(),
        }
    }

    pub fn main_digest(&self) -> Digest {
        self.main_theorem.canonical().digest
    }
}

pub const ASSEMBLY_VERSION: &str = "assembly/v1";

/// The stage-3 context: preamble, lemma declarations, main theorem slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSource {
    pub preamble: String,
    pub lemmas: Vec<LemmaRecord>,
    pub main: TheoremStatement,
    pub template_version: String,
}

impl FinalSource {
    /// The assembled file with the main proof left as `by sorry`.
    pub fn render(&self) -> String {
        render_lean_source(&self.preamble, &self.lemmas, &self.main, "by sorry")
    }

    pub fn render_with(&self, main_body: &str) -> String {
        render_lean_source(&self.preamble, &self.lemmas, &self.main, main_body)
    }

    /// Text before the main declaration.
    pub fn prefix(&self) -> String {
        lean_prefix(&self.preamble, &self.lemmas)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.render())
    }

    pub fn oracle_stubs(&self) -> Vec<String> {
        self.lemmas
            .iter()
            .filter(|r| r.status == LemmaStatus::OracleSorry)
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn is_sound(&self) -> bool {
        self.oracle_stubs().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rename {
    pub digest: Digest,
    pub from: String,
    pub to: String,
}

/// Builds the stage-3 context from proved records, keeping their order.
/// Colliding names get a `_dup<N>` suffix.
pub fn assemble_context(
    problem: &Problem,
    proved: &[LemmaRecord],
) -> Result<(FinalSource, Vec<Rename>), UnverifiedLemma> {
    proved.iter().try_for_each(require_proved)?;
    Ok(assemble(problem, proved))
}

/// Like [`assemble_context`] but also accepts `ORACLE_SORRY` stubs. The
/// result is not sound.
pub fn assemble_oracle_context(
    problem: &Problem,
    records: &[LemmaRecord],
) -> Result<(FinalSource, Vec<Rename>), UnverifiedLemma> {
    records
        .iter()
        .filter(|r| r.status != LemmaStatus::OracleSorry)
        .try_for_each(require_proved)?;
    if let Some(bad) = records
        .iter()
        .find(|r| r.status == LemmaStatus::OracleSorry && r.proof.as_deref() != Some(ORACLE_STUB))
    {
        return Err(UnverifiedLemma {
            name: bad.name.clone(),
            status: bad.status,
        });
    }
    Ok(assemble(problem, records))
}

fn assemble(problem: &Problem, records: &[LemmaRecord]) -> (FinalSource, Vec<Rename>) {
    let mut taken = std::collections::HashSet::from([problem.main_theorem.name().to_string()]);
    let mut renames = Vec::new();
    let mut lemmas = Vec::with_capacity(records.len());
    for record in records {
        let mut record = record.clone();
        if taken.contains(&record.name) {
            let fresh = (1..)
                .map(|n| format!("{}_dup{n}", record.name))
                .find(|c| !taken.contains(c))
                .expect("unbounded");
            let stmt =
                parse_theorem_declaration(&record.statement).expect("stored statements parse");
            let renamed = rename_theorem(&stmt, &fresh).expect("suffix keeps identifier valid");
            renames.push(Rename {
                digest: record.digest,
                from: record.name.clone(),
                to: fresh.clone(),
            });
            record.statement = renamed.canonical().text;
            record.name = fresh;
        }
        taken.insert(record.name.clone());
        lemmas.push(record);
    }
    (
        FinalSource {
            preamble: problem.preamble.clone(),
            lemmas,
            main: problem.main_theorem.clone(),
            template_version: ASSEMBLY_VERSION.to_string(),
        },
        renames,
    )
}
