//! Prompt templates. Each template is a versioned asset; the version string
//! is recorded in run reports.

use thiserror::Error;

use crate::statement::{mentions_sorry, TheoremStatement};
use crate::store::{LemmaRecord, LemmaStatus};

pub const DECOMPOSITION_TEMPLATE_VERSION: &str = "decomposition/v1";
pub const PROVER_TEMPLATE_VERSION: &str = "prover/v1";
pub const FINAL_TEMPLATE_VERSION: &str = "final/v1";

const DECOMPOSITION_TEMPLATE: &str = include_str!("../../assets/decomposition_prompt.v1.txt");
const PROVER_TEMPLATE: &str = include_str!("../../assets/prover_prompt.v1.txt");
const FINAL_TEMPLATE: &str = include_str!("../../assets/final_prompt.v1.txt");

/// The decomposition template, verbatim.
pub fn decomposition_template() -> &'static str {
    DECOMPOSITION_TEMPLATE
}

/// Stage-1 prompt: the template followed by the problem source.
pub fn build_decomposition_prompt(problem_source: &str) -> String {
    let mut out = String::with_capacity(DECOMPOSITION_TEMPLATE.len() + problem_source.len());
    out.push_str(DECOMPOSITION_TEMPLATE);
    out.push_str(problem_source);
    out
}

fn fill(template: &str, name: &str, source: &str) -> String {
    template
        .replace("{{name}}", name)
        .replace("{{source}}", source.trim_end())
}

/// Stage-2 prompt for one standalone lemma. `source` ends in `:= by sorry`.
pub fn build_prover_prompt(name: &str, source: &str) -> String {
    fill(PROVER_TEMPLATE, name, source)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lemma `{name}` is not verified ({status})")]
pub struct UnverifiedLemma {
    pub name: String,
    pub status: LemmaStatus,
}

/// Checks that `record` may be embedded as a proved lemma.
pub fn require_proved(record: &LemmaRecord) -> Result<(), UnverifiedLemma> {
    let sound = record.status == LemmaStatus::Proved
        && record.proof.as_deref().is_some_and(|p| !mentions_sorry(p));
    if sound {
        Ok(())
    } else {
        Err(UnverifiedLemma {
            name: record.name.clone(),
            status: record.status,
        })
    }
}

/// Lean source: preamble, one declaration per lemma record, then `main`
/// with the given proof body.
pub fn render_lean_source(
    preamble: &str,
    lemmas: &[LemmaRecord],
    main: &TheoremStatement,
    main_body: &str,
) -> String {
    let mut out = lean_prefix(preamble, lemmas);
    out.push_str(&main.with_body(main_body));
    out.push('\n');
    out
}

/// Everything [`render_lean_source`] emits before the main declaration.
pub fn lean_prefix(preamble: &str, lemmas: &[LemmaRecord]) -> String {
    let mut out = String::new();
    let preamble = preamble.trim_end();
    if !preamble.is_empty() {
        out.push_str(preamble);
        out.push_str("\n\n");
    }
    for record in lemmas {
        out.push_str(&record.statement);
        out.push_str(" := ");
        out.push_str(record.proof.as_deref().unwrap_or("by sorry").trim());
        out.push_str("\n\n");
    }
    out
}

/// Stage-3 prompt over an already assembled source ending in `:= by sorry`.
pub fn render_final_prompt(main_name: &str, source: &str) -> String {
    fill(FINAL_TEMPLATE, main_name, source)
}

/// Stage-3 prompt: the proved lemmas in the given order, then the main
/// theorem ending `:= by sorry`.
pub fn build_final_proof_prompt(
    preamble: &str,
    main: &TheoremStatement,
    verified: &[LemmaRecord],
) -> Result<String, UnverifiedLemma> {
    verified.iter().try_for_each(require_proved)?;
    let source = render_lean_source(preamble, verified, main, "by sorry");
    Ok(render_final_prompt(main.name(), &source))
}
