//! Pipeline configuration file.
//!
//! ```toml
//! seed = 13
//! concurrency = 4
//! strategy = "human+gpt+claude"
//!
//! [paths]
//! run_dir = "run"
//! cache = "cache"
//! embeddings = "embeddings.jsonl"
//!
//! [[providers]]
//! name = "gpt"
//! model = "gpt-4o"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! temperature = 0.0
//!
//! [train]
//! epochs = 50
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::Strategy;
use crate::annotator::{ProviderConfig, DEFAULT_CONCURRENCY, DEFAULT_MAX_FAILURE_FRACTION};
use crate::snpro::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub run_dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub condition_prompt: Option<PathBuf>,
    pub rating_prompt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub concurrency: usize,
    pub max_failure_fraction: f64,
    pub strategy: Option<String>,
    pub paths: Paths,
    pub providers: Vec<ProviderConfig>,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            concurrency: DEFAULT_CONCURRENCY,
            max_failure_fraction: DEFAULT_MAX_FAILURE_FRACTION,
            strategy: None,
            paths: Paths::default(),
            providers: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.run_dir,
            &mut cfg.paths.cache,
            &mut cfg.paths.embeddings,
            &mut cfg.paths.condition_prompt,
            &mut cfg.paths.rating_prompt,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config(
                "max_failure_fraction must lie in [0, 1]".into(),
            ));
        }
        if let Some(s) = &self.strategy {
            s.parse::<Strategy>()?;
        }
        let mut names = std::collections::HashSet::new();
        for p in &self.providers {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::Config(format!("provider {} declared twice", p.name)));
            }
        }
        self.train.validate()?;
        for (key, p) in [
            ("paths.embeddings", &self.paths.embeddings),
            ("paths.condition_prompt", &self.paths.condition_prompt),
            ("paths.rating_prompt", &self.paths.rating_prompt),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "{key}: {} is not a file",
                        p.display()
                    )));
                }
            }
        }
        for (key, p) in [
            ("paths.run_dir", &self.paths.run_dir),
            ("paths.cache", &self.paths.cache),
        ] {
            if let Some(p) = p {
                if p.exists() && !p.is_dir() {
                    return Err(Error::Config(format!(
                        "{key}: {} is not a directory",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn provider(&self, name: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.name == name)
    }
}
