//! Run configuration: a TOML file, environment overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::WeightVector;
use crate::extraction::ExtractionPromptTemplate;
use crate::gateway::{GatewayClient, GatewayEndpoint, MockBackend, MockTable, ENV_API_KEY, ENV_GATEWAY_URL};
use crate::harness::{Gateways, PipelineConfig};
use crate::model::{OutputMode, QueryRecord, ThinkTags};
use crate::reasoning::AlignmentMeasure;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// TOML file with `system_text` and `user_format`.
    pub extraction_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub enabled: bool,
    pub seed: u64,
    /// JSON mock table; the synthetic backend alone when absent.
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: OutputMode,
    pub samples: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub threshold: f64,
    pub workers: usize,
    pub alignment: AlignmentMeasure,
    /// `[w_aa, w_ca, w_cc, w_coh]` for the `race_plus` score; equal by default.
    pub weights: Option<[f64; 4]>,
    pub label: bool,
    pub think_tags: ThinkTags,
    pub generation: GatewayEndpoint,
    pub judge: GatewayEndpoint,
    pub support: GatewayEndpoint,
    pub paths: PathsConfig,
    pub mock: MockConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            mode: p.mode,
            samples: p.samples,
            temperature: p.temperature,
            top_p: p.top_p,
            max_tokens: p.max_tokens,
            threshold: p.threshold,
            workers: 4,
            alignment: p.alignment,
            weights: Some([0.25; 4]),
            label: true,
            think_tags: ThinkTags::default(),
            generation: GatewayEndpoint::default(),
            judge: GatewayEndpoint::default(),
            support: GatewayEndpoint::default(),
            paths: PathsConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.dataset,
            &mut cfg.paths.scores,
            &mut cfg.paths.report,
            &mut cfg.paths.extraction_template,
            &mut cfg.mock.table,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }

    /// Applies `RACE_GATEWAY_URL` and `RACE_API_KEY` to all three endpoints.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        let url = var(ENV_GATEWAY_URL).filter(|v| !v.trim().is_empty());
        let key = var(ENV_API_KEY).filter(|v| !v.is_empty());
        for ep in [&mut self.generation, &mut self.judge, &mut self.support] {
            if let Some(url) = &url {
                ep.base_url = url.trim().to_string();
            }
            if let Some(key) = &key {
                ep.api_key = Some(key.clone());
            }
        }
    }

    pub fn weight_vector(&self) -> Result<Option<WeightVector>, ConfigError> {
        self.weights
            .map(|[a, b, c, d]| WeightVector::new(a, b, c, d).normalized().map_err(ConfigError::Invalid))
            .transpose()
    }

    pub fn extraction_template(&self) -> Result<ExtractionPromptTemplate, ConfigError> {
        match &self.paths.extraction_template {
            Some(p) => ExtractionPromptTemplate::from_toml_file(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(ExtractionPromptTemplate::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold must lie in (0, 1], got {}", self.threshold));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.think_tags.open.is_empty() || self.think_tags.close.is_empty() {
            return bad("think tags must be non-empty".into());
        }
        self.weight_vector()?;
        for (name, ep) in [("generation", &self.generation), ("judge", &self.judge), ("support", &self.support)] {
            ep.validate().map_err(|m| ConfigError::Invalid(format!("[{name}] {m}")))?;
        }
        self.extraction_template()?;
        if let Some(table) = &self.mock.table {
            MockTable::from_json_file(table).map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        Ok(PipelineConfig {
            mode: self.mode,
            samples: self.samples,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            threshold: self.threshold,
            alignment: self.alignment,
            weights: self.weight_vector()?,
            think_tags: self.think_tags.clone(),
            extraction: self.extraction_template()?,
            workers: self.workers,
            label: self.label,
        })
    }

    /// SHA-256 over every setting that can change scores. Worker count,
    /// paths and secrets are excluded.
    pub fn fingerprint(&self) -> Result<String, ConfigError> {
        let mock_table = match (&self.mock.enabled, &self.mock.table) {
            (true, Some(p)) => Some(hex::encode(Sha256::digest(std::fs::read(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })?))),
            _ => None,
        };
        let view = serde_json::json!({
            "mode": self.mode,
            "samples": self.samples,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "threshold": self.threshold,
            "alignment": self.alignment,
            "weights": self.weights,
            "label": self.label,
            "think_tags": self.think_tags,
            "extraction": self.extraction_template()?,
            "endpoints": [&self.generation.base_url, &self.judge.base_url, &self.support.base_url],
            "mock": { "enabled": self.mock.enabled, "seed": self.mock.seed, "table": mock_table },
        });
        Ok(hex::encode(Sha256::digest(view.to_string().as_bytes())))
    }

    /// Builds the three gateway clients. In mock mode one deterministic
    /// backend serves everything; `dataset` supplies the answers it "knows".
    pub fn gateways(&self, dataset: Option<&[QueryRecord]>) -> Result<Gateways, ConfigError> {
        if self.mock.enabled {
            let table = match &self.mock.table {
                Some(p) => MockTable::from_json_file(p).map_err(ConfigError::Invalid)?,
                None => MockTable::default(),
            };
            let facts = dataset
                .unwrap_or_default()
                .iter()
                .filter_map(|r| r.gold_answers.first().map(|g| (r.question.clone(), g.clone())));
            let backend = MockBackend::from_table(table, self.mock.seed).with_knowledge(facts);
            return Ok(Gateways::single(GatewayClient::mock(backend)));
        }
        let client = |ep: &GatewayEndpoint| GatewayClient::http(ep).map_err(|e| ConfigError::Invalid(e.to_string()));
        Ok(Gateways {
            generation: client(&self.generation)?,
            support: client(&self.support)?,
            judge: Some(client(&self.judge)?),
        })
    }
}
