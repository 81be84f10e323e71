//! Pipeline configuration: a TOML file, overridden by `DRP_<SECTION>__<KEY>`
//! environment variables, overridden in turn by command-line flags.
//!
//! ```toml
//! [reasoner]
//! provider = "gemini"
//! endpoint = "https://generativelanguage.googleapis.com/v1beta/models"
//! model = "gemini-2.5-pro"
//! api_key_ref = "GEMINI_API_KEY"
//!
//! [stage2]
//! k = 128
//! per_attempt_timeout = 300
//!
//! [backend]
//! kind = "external"
//! command = ["python3", "lean_worker.py"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::prover::{AttemptBudget, ExternalSpec, ProverBackend, DEFAULT_ATTEMPT_TIMEOUT_SECS};
use crate::reasoner::{
    ConfigError, ReasonerConfig, DECOMPOSITION_TEMPLATE_VERSION, FINAL_TEMPLATE_VERSION,
    PROVER_TEMPLATE_VERSION,
};
use crate::statement::ExtractionMode;

pub const ENV_PREFIX: &str = "DRP_";
pub const DEFAULT_FINAL_K: u32 = 8;

/// Which model writes the final proof.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalRoute {
    /// `final_model` if set, otherwise the reasoner.
    #[default]
    Reasoner,
    /// The stage-2 prover model.
    Prover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinalConfig {
    pub k: u32,
    pub per_attempt_timeout: f64,
    pub total_deadline: Option<f64>,
    pub route: FinalRoute,
}

impl Default for FinalConfig {
    fn default() -> Self {
        FinalConfig {
            k: DEFAULT_FINAL_K,
            per_attempt_timeout: DEFAULT_ATTEMPT_TIMEOUT_SECS,
            total_deadline: None,
            route: FinalRoute::Reasoner,
        }
    }
}

impl FinalConfig {
    pub fn budget(&self) -> AttemptBudget {
        AttemptBudget {
            k: self.k,
            per_attempt_timeout: self.per_attempt_timeout,
            total_deadline: self.total_deadline,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    External,
    #[default]
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "external" => Ok(BackendKind::External),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub command: Vec<String>,
    pub workdir: Option<PathBuf>,
    pub env_passthrough: Vec<String>,
    /// Mock rule table (JSON). Without it the mock checker uses the rules
    /// in the problem's fixture script.
    pub rules: Option<PathBuf>,
}

impl BackendConfig {
    pub fn external_spec(&self) -> ExternalSpec {
        ExternalSpec {
            command: self.command.clone(),
            workdir: self.workdir.clone(),
            env_passthrough: self.env_passthrough.clone(),
        }
    }

    /// The external backend, or `None` for the mock one.
    pub fn external(&self) -> Option<ProverBackend> {
        (self.kind == BackendKind::External).then(|| ProverBackend::External(self.external_spec()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateVersions {
    pub decomposition: String,
    pub prover: String,
    #[serde(rename = "final")]
    pub final_proof: String,
}

impl Default for TemplateVersions {
    fn default() -> Self {
        TemplateVersions {
            decomposition: DECOMPOSITION_TEMPLATE_VERSION.into(),
            prover: PROVER_TEMPLATE_VERSION.into(),
            final_proof: FINAL_TEMPLATE_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ExtractionMode,
    pub parallelism: usize,
    pub rounds: u32,
    pub store: PathBuf,
    pub oracle_sorry: bool,
    pub mock_fixtures: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: ExtractionMode::Balanced,
            parallelism: 4,
            rounds: 1,
            store: PathBuf::from("drp-store"),
            oracle_sorry: false,
            mock_fixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub reasoner: ReasonerConfig,
    pub prover_model: ReasonerConfig,
    /// Stage-3 model; defaults to the reasoner.
    pub final_model: Option<ReasonerConfig>,
    pub stage2: AttemptBudget,
    #[serde(rename = "final")]
    pub final_stage: FinalConfig,
    pub backend: BackendConfig,
    pub run: RunConfig,
    pub templates: TemplateVersions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            reasoner: ReasonerConfig::default(),
            prover_model: ReasonerConfig {
                model: "mock-prover".into(),
                ..ReasonerConfig::default()
            },
            final_model: None,
            stage2: AttemptBudget::default(),
            final_stage: FinalConfig::default(),
            backend: BackendConfig::default(),
            run: RunConfig::default(),
            templates: TemplateVersions::default(),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_overrides<I>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let Some((section, key)) = rest.split_once("__") else {
            continue;
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(section_table) = entry else {
            return Err(ConfigError::invalid(section, "is not a section"));
        };
        section_table.insert(key, override_value(&raw));
    }
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (if any) and applies environment overrides from `vars`.
    pub fn load<I>(path: Option<&Path>, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?,
            None => String::new(),
        };
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        apply_overrides(&mut table, vars)?;
        let config: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reasoner.validate("reasoner")?;
        self.prover_model.validate("prover_model")?;
        if let Some(m) = &self.final_model {
            m.validate("final_model")?;
        }
        self.stage2.validate("stage2")?;
        self.final_stage.budget().validate("final")?;
        if self.run.parallelism < 1 {
            return Err(ConfigError::invalid(
                "run.parallelism",
                "must be at least 1",
            ));
        }
        if self.run.rounds < 1 {
            return Err(ConfigError::invalid("run.rounds", "must be at least 1"));
        }
        if self.backend.kind == BackendKind::External && self.backend.command.is_empty() {
            return Err(ConfigError::invalid(
                "backend.command",
                "required for the external backend",
            ));
        }
        let supported = TemplateVersions::default();
        for (field, got, want) in [
            (
                "templates.decomposition",
                &self.templates.decomposition,
                &supported.decomposition,
            ),
            (
                "templates.prover",
                &self.templates.prover,
                &supported.prover,
            ),
            (
                "templates.final",
                &self.templates.final_proof,
                &supported.final_proof,
            ),
        ] {
            if got != want {
                return Err(ConfigError::invalid(
                    field,
                    format!("unsupported version `{got}`"),
                ));
            }
        }
        Ok(())
    }

    /// The stage-3 model config for the configured route.
    pub fn final_model_config(&self) -> &ReasonerConfig {
        match self.final_stage.route {
            FinalRoute::Prover => &self.prover_model,
            FinalRoute::Reasoner => self.final_model.as_ref().unwrap_or(&self.reasoner),
        }
    }

    /// JSON snapshot for reports with key references removed.
    pub fn redacted(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for section in ["reasoner", "prover_model", "final_model"] {
            if let Some(slot) = v.get_mut(section).and_then(|s| s.get_mut("api_key_ref")) {
                if !slot.is_null() {
                    *slot = serde_json::Value::String("<redacted>".into());
                }
            }
        }
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
