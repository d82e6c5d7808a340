//! TOML configuration for backends, router override and service.
//!
//! ```toml
//! [generator]
//! kind = "http"
//! base_url = "https://api.example.com/v1"
//! model = "gen-large"
//! api_key_env = "GEN_API_KEY"
//!
//! [model]
//! kind = "mock"
//!
//! [trainer]
//! kind = "command"
//! program = "python3"
//! args = ["train_lora.py"]
//!
//! [service]
//! bind = "127.0.0.1:8080"
//! token_env = "CURALOOP_TOKEN"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{HttpBackend, HttpBackendConfig, MockBackend, ScriptedBackend, TextBackend};
use crate::finetune::{AdapterConfig, CommandTrainer, MockTrainer, SearchGrid, TrainerBackend};
use crate::infer::KeywordRuleset;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Mock {
        #[serde(default = "default_mock_model")]
        model: String,
        /// Vignettes per generator call; ignored for answering models.
        #[serde(default = "default_per_call")]
        per_call: usize,
    },
    Scripted {
        /// JSON script fixture.
        script: PathBuf,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_mock_model() -> String {
    "mock-model".into()
}
fn default_per_call() -> usize {
    2
}
fn default_timeout() -> u64 {
    60
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock {
            model: default_mock_model(),
            per_call: default_per_call(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendRole {
    Generator,
    Model,
}

impl BackendSpec {
    pub fn build(&self, role: BackendRole, base_dir: &Path) -> Result<Arc<dyn TextBackend>, SettingsError> {
        Ok(match self {
            BackendSpec::Mock { model, per_call } => match role {
                BackendRole::Generator => Arc::new(MockBackend::vignettes(model.clone(), *per_call)),
                BackendRole::Model => Arc::new(MockBackend::answers(model.clone())),
            },
            BackendSpec::Scripted { script } => {
                let path = base_dir.join(script);
                let src = std::fs::read_to_string(&path).map_err(|e| SettingsError::Read {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                Arc::new(ScriptedBackend::from_json(&src).map_err(|e| SettingsError::Invalid(e.to_string()))?)
            }
            BackendSpec::Http {
                base_url,
                model,
                api_key_env,
                timeout_secs,
            } => Arc::new(HttpBackend::new(HttpBackendConfig {
                name: "http".into(),
                base_url: base_url.clone(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
                timeout_secs: *timeout_secs,
            })
            .map_err(|e| SettingsError::Invalid(e.to_string()))?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSpec {
    #[default]
    Mock,
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        /// Scratch directory for export and config files, relative to the store.
        #[serde(default = "default_work_dir")]
        work_dir: PathBuf,
    },
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("trainer-work")
}

impl TrainerSpec {
    pub fn build(&self, store_root: &Path) -> Arc<dyn TrainerBackend> {
        match self {
            TrainerSpec::Mock => Arc::new(MockTrainer::new()),
            TrainerSpec::Command { program, args, work_dir } => {
                Arc::new(CommandTrainer::new(program.clone(), args.clone(), store_root.join(work_dir)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterSettings {
    /// Keyword ruleset file replacing the shipped rules.
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: String,
    /// Environment variable holding a static bearer token. No auth when unset.
    pub token_env: Option<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            token_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub base_model: String,
    pub adapter: AdapterConfig,
    pub grid: SearchGrid,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            base_model: "llama-3.2-1b".into(),
            adapter: AdapterConfig::default(),
            grid: SearchGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub generator: BackendSpec,
    pub model: BackendSpec,
    pub trainer: TrainerSpec,
    pub router: RouterSettings,
    pub service: ServiceSettings,
    pub finetune: FinetuneSettings,
    /// Directory relative paths are resolved against; the config file's
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Settings {
    pub fn from_toml(src: &str) -> Result<Self, SettingsError> {
        toml::from_str(src).map_err(|e| SettingsError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let src = std::fs::read_to_string(path).map_err(|e| SettingsError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut s = Self::from_toml(&src)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn router(&self) -> Result<KeywordRuleset, SettingsError> {
        match &self.router.rules {
            None => Ok(KeywordRuleset::shipped()),
            Some(p) => {
                let path = self.base_dir.join(p);
                let src = std::fs::read_to_string(&path).map_err(|e| SettingsError::Read {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                KeywordRuleset::parse(&src).map_err(|e| SettingsError::Invalid(e.to_string()))
            }
        }
    }

    pub fn service_token(&self) -> Option<String> {
        self.service
            .token_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty())
    }
}
