//! Pipeline configuration: TOML file loading, validation, and backend
//! assembly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    Backend, BackendError, CachingBackend, HttpBackend, HttpSettings, RetryingBackend,
    ScriptedStub,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend role routes missing for: {0}")]
    MissingRoles(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which stages of the pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Debate generation, clustering, and adjusted voting.
    #[default]
    Full,
    /// Skip inference generation entirely: vote directly on the tree.
    NoReasoner,
    /// Keep generation and clustering; replace the voting stage with one
    /// direct label per representative, combined by cluster weight.
    NoDecider,
    /// Generate with the first debate round only; the rest runs as full.
    AnalystOnly,
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Ablation::Full => "full",
            Ablation::NoReasoner => "no_reasoner",
            Ablation::NoDecider => "no_decider",
            Ablation::AnalystOnly => "analyst_only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_reasoner" => Ok(Ablation::NoReasoner),
            "no_decider" => Ok(Ablation::NoDecider),
            "analyst_only" => Ok(Ablation::AnalystOnly),
            other => Err(format!(
                "unknown ablation {other:?} (expected full, no_reasoner, no_decider, analyst_only)"
            )),
        }
    }
}

/// Transport and routing for live runs; ignored under `--stub`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSettings {
    /// Base URL of an OpenAI-style API, e.g. `https://host/v1`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    /// Logical role -> model identifier. Live runs must route every role.
    pub roles: BTreeMap<String, String>,
    pub embed_model: String,
    pub timeout_s: u64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: None,
            roles: BTreeMap::new(),
            embed_model: "embed-base".into(),
            timeout_s: 60,
        }
    }
}

/// Every tunable of the pipeline, loadable from a TOML file. Unknown keys
/// are rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Ordered risk levels, lowest first.
    pub labels: Vec<String>,
    /// Master seed; every stage seed is derived from it by hashing a
    /// stage-specific context string.
    pub seed: u64,
    /// Inference generations per tree (n).
    pub generations: usize,
    /// Mediator clusters (K).
    pub clusters: usize,
    /// Votes per representative (T).
    pub votes: usize,
    /// Rendering bounds for prompts.
    pub max_depth: usize,
    pub max_nodes: usize,
    /// Demonstrations retrieved per risk level.
    pub demonstrations_per_level: usize,
    /// Sampling temperature for debate generation.
    pub gen_temperature: f64,
    /// Sampling temperature for synthesis and decision calls.
    pub decision_temperature: f64,
    pub max_tokens: u32,
    /// Debates processed concurrently.
    pub max_inflight: usize,
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
    /// Stub embedding dimensionality.
    pub embedding_dim: usize,
    /// L2-normalize inference embeddings before clustering, making cluster
    /// geometry directional rather than magnitude-sensitive.
    pub normalize_embeddings: bool,
    pub kmeans_max_iters: usize,
    /// Drop failed generations (true) instead of failing the tree (false).
    pub skip_failed_generations: bool,
    /// Mark failed trees incomplete during experiments instead of aborting.
    pub skip_failed_trees: bool,
    /// Cross-validation folds for `eval`.
    pub folds: usize,
    pub cache_dir: PathBuf,
    /// Optional directory of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
    pub ablation: Ablation,
    pub backend: BackendSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            labels: vec!["L0".into(), "L1".into(), "L2".into(), "L3".into()],
            seed: 0,
            generations: 10,
            clusters: 3,
            votes: 3,
            max_depth: 6,
            max_nodes: 60,
            demonstrations_per_level: 1,
            gen_temperature: 0.9,
            decision_temperature: 0.2,
            max_tokens: 1024,
            max_inflight: 4,
            max_retries: 2,
            retry_backoff_ms: 500,
            embedding_dim: 1024,
            normalize_embeddings: false,
            kmeans_max_iters: 100,
            skip_failed_generations: false,
            skip_failed_trees: false,
            folds: 5,
            cache_dir: PathBuf::from(".riskpipe-cache"),
            prompts_dir: None,
            ablation: Ablation::Full,
            backend: BackendSettings::default(),
        }
    }
}

/// Logical chat roles the pipeline calls.
pub const CHAT_ROLES: [&str; 5] = ["analyst", "critic", "empiricist", "synthesizer", "decision"];

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let content = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::from_toml_str(&content)
    }

    pub fn from_toml_str(content: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let config: PipelineConfig =
            toml::from_str(content).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let warnings = config.validate()?;
        Ok((config, warnings))
    }

    /// Hard correctness checks error; suspicious-but-legal settings come
    /// back as warnings for the caller to surface.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if self.labels.len() < 2 {
            return Err(ConfigError::Invalid(format!(
                "need at least 2 labels, got {}",
                self.labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.labels {
            if l.is_empty() || !seen.insert(l) {
                return Err(ConfigError::Invalid(format!(
                    "labels must be unique and non-empty; offender {l:?}"
                )));
            }
        }
        if self.generations == 0 || self.clusters == 0 || self.votes == 0 {
            return Err(ConfigError::Invalid(
                "generations, clusters, and votes must all be >= 1".into(),
            ));
        }
        if self.max_depth == 0 || self.max_nodes == 0 {
            return Err(ConfigError::Invalid(
                "max_depth and max_nodes must be >= 1".into(),
            ));
        }
        if self.demonstrations_per_level == 0 {
            return Err(ConfigError::Invalid(
                "demonstrations_per_level must be >= 1".into(),
            ));
        }
        for (name, t) in [
            ("gen_temperature", self.gen_temperature),
            ("decision_temperature", self.decision_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) || !t.is_finite() {
                return Err(ConfigError::Invalid(format!("{name} {t} outside [0, 2]")));
            }
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::Invalid("max_tokens must be >= 1".into()));
        }
        if self.max_inflight == 0 {
            return Err(ConfigError::Invalid("max_inflight must be >= 1".into()));
        }
        if self.embedding_dim < 2 {
            return Err(ConfigError::Invalid("embedding_dim must be >= 2".into()));
        }
        if self.kmeans_max_iters == 0 {
            return Err(ConfigError::Invalid("kmeans_max_iters must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(ConfigError::Invalid("folds must be >= 2".into()));
        }
        let mut warnings = Vec::new();
        if self.clusters > self.generations {
            warnings.push(format!(
                "clusters ({}) exceeds generations ({}): the effective cluster \
                 count is clamped to the distinct inferences available",
                self.clusters, self.generations
            ));
        } else if self.generations < 2 * self.clusters {
            warnings.push(format!(
                "generations ({}) below 2x clusters ({}): clusters will be sparse",
                self.generations, self.clusters
            ));
        }
        if self.decision_temperature > self.gen_temperature {
            warnings.push(format!(
                "decision_temperature ({}) above gen_temperature ({}): votes will be noisier than generations",
                self.decision_temperature, self.gen_temperature
            ));
        }
        Ok(warnings)
    }

    pub fn label_set(&self) -> crate::tree::RiskLabelSet {
        crate::tree::RiskLabelSet::new(self.labels.clone()).expect("validated")
    }

    pub fn prompt_set(&self) -> Result<crate::prompts::PromptSet, crate::prompts::PromptError> {
        match &self.prompts_dir {
            Some(dir) => crate::prompts::PromptSet::with_overrides(dir),
            None => Ok(crate::prompts::PromptSet::builtin()),
        }
    }
}

/// Assemble the canonical backend stack `Caching(Retrying(base))`, where
/// the base is the offline stub (`stub = true`) or the HTTP client. Live
/// runs require a model route for every chat role.
pub fn build_backend(
    config: &PipelineConfig,
    stub: bool,
) -> Result<Arc<dyn Backend>, ConfigError> {
    let base: Box<dyn Backend> = if stub {
        Box::new(ScriptedStub::new(config.embedding_dim))
    } else {
        let missing: Vec<&str> = CHAT_ROLES
            .iter()
            .filter(|r| !config.backend.roles.contains_key(**r))
            .copied()
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::MissingRoles(missing.join(", ")));
        }
        Box::new(HttpBackend::new(HttpSettings {
            base_url: config.backend.base_url.clone(),
            api_key_env: config.backend.api_key_env.clone(),
            chat_models: config
                .backend
                .roles
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            embed_model: config.backend.embed_model.clone(),
            timeout: Duration::from_secs(config.backend.timeout_s),
        })?)
    };
    let retrying = RetryingBackend::new(
        base,
        config.max_retries,
        Duration::from_millis(config.retry_backoff_ms),
    );
    Ok(Arc::new(CachingBackend::new(
        retrying,
        config.cache_dir.clone(),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_cleanly() {
        let config = PipelineConfig::default();
        let warnings = config.validate().unwrap();
        assert!(warnings.is_empty(), "unexpected warnings: {warnings:?}");
        assert_eq!(config.generations, 10);
        assert_eq!(config.clusters, 3);
        assert_eq!(config.votes, 3);
        assert_eq!(config.max_depth, 6);
        assert_eq!(config.max_nodes, 60);
    }

    #[test]
    fn toml_round_trip_with_partial_file() {
        let (config, warnings) = PipelineConfig::from_toml_str(
            r#"
generations = 6
clusters = 3
votes = 5

[backend]
base_url = "https://api.example.test/v1"
"#,
        )
        .unwrap();
        assert_eq!(config.generations, 6);
        assert_eq!(config.votes, 5);
        assert_eq!(config.labels.len(), 4, "unset keys keep defaults");
        assert_eq!(config.backend.base_url, "https://api.example.test/v1");
        assert_eq!(warnings.len(), 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml_str("generatons = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "got {err}");
    }

    #[test]
    fn hard_limits_error() {
        for bad in [
            "clusters = 0",
            "votes = 0",
            "labels = [\"only\"]",
            "labels = [\"a\", \"a\"]",
            "gen_temperature = 3.0",
            "folds = 1",
            "max_inflight = 0",
        ] {
            assert!(
                PipelineConfig::from_toml_str(bad).is_err(),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn sparse_clusters_warn() {
        let (_, warnings) =
            PipelineConfig::from_toml_str("generations = 4\nclusters = 3\n").unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("sparse"));
    }

    #[test]
    fn clusters_above_generations_warn_instead_of_erroring() {
        let (config, warnings) =
            PipelineConfig::from_toml_str("generations = 2\nclusters = 5\n").unwrap();
        assert_eq!(config.clusters, 5);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("clamped"), "got {warnings:?}");
    }

    #[test]
    fn embedding_normalization_is_off_unless_requested() {
        assert!(!PipelineConfig::default().normalize_embeddings);
        let (config, _) =
            PipelineConfig::from_toml_str("normalize_embeddings = true\n").unwrap();
        assert!(config.normalize_embeddings);
    }

    #[test]
    fn ablation_parses_both_ways() {
        for (text, value) in [
            ("full", Ablation::Full),
            ("no_reasoner", Ablation::NoReasoner),
            ("no_decider", Ablation::NoDecider),
            ("analyst_only", Ablation::AnalystOnly),
        ] {
            assert_eq!(text.parse::<Ablation>().unwrap(), value);
            assert_eq!(value.to_string(), text);
        }
        assert!("nope".parse::<Ablation>().is_err());
        let (config, _) = PipelineConfig::from_toml_str("ablation = \"no_decider\"\n").unwrap();
        assert_eq!(config.ablation, Ablation::NoDecider);
    }

    #[test]
    fn stub_backend_builds_without_routes() {
        let config = PipelineConfig {
            cache_dir: tempfile::tempdir().unwrap().path().to_path_buf(),
            ..PipelineConfig::default()
        };
        assert!(build_backend(&config, true).is_ok());
    }

    #[test]
    fn live_backend_requires_all_roles() {
        let mut config = PipelineConfig::default();
        config
            .backend
            .roles
            .insert("analyst".into(), "model-a".into());
        let err = match build_backend(&config, false) {
            Ok(_) => panic!("expected missing-role error"),
            Err(e) => e,
        };
        match err {
            ConfigError::MissingRoles(missing) => {
                assert!(missing.contains("critic"));
                assert!(missing.contains("decision"));
                assert!(!missing.contains("analyst"));
            }
            other => panic!("expected missing roles, got {other}"),
        }
    }
}
