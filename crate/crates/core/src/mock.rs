//! Scripted fixtures for the deterministic mock backends.
//!
//! A fixture root holds one directory per problem id:
//!
//! ```text
//! <root>/<problem_id>/response_0.md    stage-1 reasoner output, sample 0
//! <root>/<problem_id>/response_1.md    ... one file per sample index
//! <root>/<problem_id>/script.json      prover replies and checker rules
//! ```
//!
//! Refinement rounds decompose lemmas under `<problem_id>/<lemma_name>`.
//! Rule and reply tables are keyed by a statement digest (hex) or, failing
//! that, by theorem name.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::statement::{extract_declarations, mentions_sorry, Digest};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid script {path}: {source}")]
    Script {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// How a scripted model call fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedFailure {
    Service,
    Transport,
    Timeout,
}

/// One scripted model reply: plain text, or a failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Failure { fail: ScriptedFailure },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedOutcome {
    Ok,
    #[default]
    Error,
    /// The worker process dies without answering.
    Crash,
    /// The worker answers with a line that is not JSON.
    Garbage,
}

/// Scripted checker behaviour for one proof.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ScriptedCheckRepr")]
pub struct ScriptedCheck {
    pub outcome: ScriptedOutcome,
    pub latency_ms: u64,
    pub message: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptedCheckRepr {
    Short(ScriptedOutcome),
    Full {
        outcome: ScriptedOutcome,
        #[serde(default)]
        latency_ms: u64,
        #[serde(default)]
        message: Option<String>,
    },
}

impl From<ScriptedCheckRepr> for ScriptedCheck {
    fn from(repr: ScriptedCheckRepr) -> Self {
        match repr {
            ScriptedCheckRepr::Short(outcome) => ScriptedCheck {
                outcome,
                ..Default::default()
            },
            ScriptedCheckRepr::Full {
                outcome,
                latency_ms,
                message,
            } => ScriptedCheck {
                outcome,
                latency_ms,
                message,
            },
        }
    }
}

impl ScriptedCheck {
    pub fn ok() -> Self {
        Self::of(ScriptedOutcome::Ok)
    }

    pub fn error() -> Self {
        Self::of(ScriptedOutcome::Error)
    }

    pub fn of(outcome: ScriptedOutcome) -> Self {
        ScriptedCheck {
            outcome,
            latency_ms: 0,
            message: None,
        }
    }

    pub fn after_ms(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }
}

/// Checker rules for one target theorem.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckerRule {
    /// Applies when nothing more specific matches.
    pub default: ScriptedCheck,
    /// Per-proof overrides, keyed by the whitespace-collapsed proof body.
    pub bodies: BTreeMap<String, ScriptedCheck>,
    /// When non-empty, a proof is accepted if it mentions every listed name
    /// and the checked file declares each of them before the target.
    pub ok_if_uses: Vec<String>,
}

/// Rule table for the mock checker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockCheckerTable {
    pub rules: BTreeMap<String, CheckerRule>,
    /// Applies to targets without a rule.
    pub default: ScriptedCheck,
    /// Report `declaration uses 'sorry'` warnings the way Lean does.
    pub emit_sorry_warnings: bool,
}

impl Default for MockCheckerTable {
    fn default() -> Self {
        MockCheckerTable {
            rules: BTreeMap::new(),
            default: ScriptedCheck::error(),
            emit_sorry_warnings: true,
        }
    }
}

/// What the mock checker says about one source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockVerdict {
    pub outcome: ScriptedOutcome,
    pub latency_ms: u64,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn mentions_name(body: &str, name: &str) -> bool {
    body.split(|c: char| !(crate::statement::is_ident_char(c) || c == '.'))
        .any(|tok| {
            tok == name
                || tok
                    .strip_prefix(name)
                    .is_some_and(|rest| rest.starts_with('.'))
        })
}

impl MockCheckerTable {
    pub fn rule(mut self, key: impl Into<String>, rule: CheckerRule) -> Self {
        self.rules.insert(key.into(), rule);
        self
    }

    fn lookup(&self, digest: &Digest, name: &str) -> Option<&CheckerRule> {
        self.rules
            .get(&digest.to_hex())
            .or_else(|| self.rules.get(name))
    }

    /// Judges the last theorem in `source` against the table.
    pub fn evaluate(&self, source: &str) -> MockVerdict {
        let decls = extract_declarations(source);
        let mut warnings = Vec::new();
        if self.emit_sorry_warnings {
            for d in decls.iter().filter(|d| mentions_sorry(&d.body)) {
                warnings.push(format!("declaration '{}' uses 'sorry'", d.statement.name()));
            }
        }
        let Some(target) = decls.last() else {
            return MockVerdict {
                outcome: ScriptedOutcome::Error,
                latency_ms: 0,
                errors: vec!["no theorem declaration found".into()],
                warnings,
            };
        };
        let digest = target.statement.canonical().digest;
        let body = collapse(&target.body);
        let check = match self.lookup(&digest, target.statement.name()) {
            None => self.default.clone(),
            Some(rule) => {
                if let Some(check) = rule.bodies.get(&body) {
                    check.clone()
                } else if !rule.ok_if_uses.is_empty() {
                    let declared: Vec<&str> = decls[..decls.len() - 1]
                        .iter()
                        .map(|d| d.statement.name())
                        .collect();
                    let satisfied = rule
                        .ok_if_uses
                        .iter()
                        .all(|n| declared.contains(&n.as_str()) && mentions_name(&target.body, n));
                    if satisfied {
                        ScriptedCheck {
                            outcome: ScriptedOutcome::Ok,
                            ..rule.default.clone()
                        }
                    } else {
                        rule.default.clone()
                    }
                } else {
                    rule.default.clone()
                }
            }
        };
        let errors = match check.outcome {
            ScriptedOutcome::Error => vec![check
                .message
                .clone()
                .unwrap_or_else(|| format!("unsolved goals in '{}'", target.statement.name()))],
            _ => Vec::new(),
        };
        MockVerdict {
            outcome: check.outcome,
            latency_ms: check.latency_ms,
            errors,
            warnings,
        }
    }
}

/// Everything the mock backends know about one problem.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    /// Simulated latency of stage-1 responses, by sample index.
    pub response_latency_ms: BTreeMap<usize, u64>,
    /// Every decomposition request fails with a transport error.
    pub unreachable: bool,
    /// Prover replies in attempt order, keyed by digest or name. Attempts
    /// past the end of a list answer `by mock_attempt_<n>`.
    pub proofs: BTreeMap<String, Vec<ScriptedReply>>,
    pub checker: MockCheckerTable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockProblem {
    pub responses: Vec<String>,
    pub script: MockScript,
}

/// Problem fixtures, loaded lazily from a directory or registered in memory.
#[derive(Debug, Default)]
pub struct MockFixtures {
    root: Option<PathBuf>,
    problems: Mutex<HashMap<String, Arc<MockProblem>>>,
}

pub const FIXTURES_ENV: &str = "DRP_MOCK_FIXTURES";

impl MockFixtures {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_dir(root: impl Into<PathBuf>) -> Self {
        MockFixtures {
            root: Some(root.into()),
            problems: Mutex::default(),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(FIXTURES_ENV).map(Self::from_dir)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn insert(&self, problem_id: impl Into<String>, problem: MockProblem) {
        self.problems
            .lock()
            .expect("fixture lock")
            .insert(problem_id.into(), Arc::new(problem));
    }

    /// The fixture for `problem_id`; empty when none exists.
    pub fn problem(&self, problem_id: &str) -> Result<Arc<MockProblem>, FixtureError> {
        if let Some(p) = self.problems.lock().expect("fixture lock").get(problem_id) {
            return Ok(p.clone());
        }
        let problem = match &self.root {
            Some(root) => Arc::new(load_problem(&root.join(problem_id))?),
            None => Arc::new(MockProblem::default()),
        };
        self.problems
            .lock()
            .expect("fixture lock")
            .entry(problem_id.to_string())
            .or_insert(problem.clone());
        Ok(problem)
    }
}

fn read(path: &Path) -> Result<String, FixtureError> {
    fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads checker rules from either a whole `script.json` or a bare table.
pub fn load_checker_table(path: &Path) -> Result<MockCheckerTable, FixtureError> {
    let text = read(path)?;
    serde_json::from_str::<MockScript>(&text)
        .map(|s| s.checker)
        .or_else(|_| serde_json::from_str(&text))
        .map_err(|source| FixtureError::Script {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_script(path: &Path) -> Result<MockScript, FixtureError> {
    serde_json::from_str(&read(path)?).map_err(|source| FixtureError::Script {
        path: path.to_path_buf(),
        source,
    })
}

fn load_problem(dir: &Path) -> Result<MockProblem, FixtureError> {
    let mut problem = MockProblem::default();
    if !dir.is_dir() {
        tracing::debug!(dir = %dir.display(), "no mock fixture directory");
        return Ok(problem);
    }
    for index in 0.. {
        let found = ["md", "txt", "lean"]
            .iter()
            .map(|ext| dir.join(format!("response_{index}.{ext}")))
            .find(|p| p.is_file());
        match found {
            Some(path) => problem.responses.push(read(&path)?),
            None => break,
        }
    }
    let script = dir.join("script.json");
    if script.is_file() {
        problem.script = load_script(&script)?;
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "import Mathlib\n\ntheorem helper : 1 = 1 := by sorry\n\ntheorem main_t (x : ℕ) : x = x := by\n  exact helper_use";

    #[test]
    fn default_is_error() {
        let v = MockCheckerTable::default().evaluate(SRC);
        assert_eq!(v.outcome, ScriptedOutcome::Error);
        assert_eq!(
            v.warnings,
            vec!["declaration 'helper' uses 'sorry'".to_string()]
        );
    }

    #[test]
    fn body_override_by_name() {
        let table = MockCheckerTable::default().rule(
            "main_t",
            CheckerRule {
                bodies: [(
                    "by exact helper_use".to_string(),
                    ScriptedCheck::ok().after_ms(7),
                )]
                .into(),
                ..Default::default()
            },
        );
        let v = table.evaluate(SRC);
        assert_eq!(v.outcome, ScriptedOutcome::Ok);
        assert_eq!(v.latency_ms, 7);
    }

    #[test]
    fn ok_if_uses_requires_declaration_and_mention() {
        let rule = |names: &[&str]| {
            MockCheckerTable::default().rule(
                "main_t",
                CheckerRule {
                    ok_if_uses: names.iter().map(|s| s.to_string()).collect(),
                    ..Default::default()
                },
            )
        };
        let src = "theorem helper : 1 = 1 := by rfl\n\ntheorem main_t : 2 = 2 := by\n  exact helper.trans rfl";
        assert_eq!(rule(&["helper"]).evaluate(src).outcome, ScriptedOutcome::Ok);
        assert_eq!(
            rule(&["other"]).evaluate(src).outcome,
            ScriptedOutcome::Error
        );
        let unused = "theorem helper : 1 = 1 := by rfl\n\ntheorem main_t : 2 = 2 := by\n  rfl";
        assert_eq!(
            rule(&["helper"]).evaluate(unused).outcome,
            ScriptedOutcome::Error
        );
    }

    #[test]
    fn script_json_shorthand() {
        let script: MockScript = serde_json::from_str(
            r#"{"proofs": {"foo": ["by simp", {"fail": "service"}]},
                "checker": {"rules": {"foo": {"bodies": {"by simp": "ok"}, "default": {"outcome": "crash", "latency_ms": 3}}}}}"#,
        )
        .unwrap();
        assert_eq!(
            script.proofs["foo"][1],
            ScriptedReply::Failure {
                fail: ScriptedFailure::Service
            }
        );
        let rule = &script.checker.rules["foo"];
        assert_eq!(rule.bodies["by simp"], ScriptedCheck::ok());
        assert_eq!(
            rule.default,
            ScriptedCheck::of(ScriptedOutcome::Crash).after_ms(3)
        );
        assert!(script.checker.emit_sorry_warnings);
    }

    #[test]
    fn loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prob");
        fs::create_dir_all(&p).unwrap();
        fs::write(p.join("response_0.md"), "zero").unwrap();
        fs::write(p.join("response_1.txt"), "one").unwrap();
        fs::write(p.join("response_3.md"), "gap").unwrap();
        let fx = MockFixtures::from_dir(dir.path());
        assert_eq!(fx.problem("prob").unwrap().responses, ["zero", "one"]);
        assert!(fx.problem("missing").unwrap().responses.is_empty());
    }
}
