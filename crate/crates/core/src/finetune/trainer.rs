use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{sft_jsonl, RunConfig, SftRecord};
use crate::backend::BackendError;

/// Inputs handed to a trainer. `records_digest` identifies the export.
pub struct TrainingJob<'a> {
    pub records: &'a [SftRecord],
    pub config: &'a RunConfig,
    pub export: String,
    pub records_digest: String,
}

impl<'a> TrainingJob<'a> {
    pub fn new(records: &'a [SftRecord], config: &'a RunConfig) -> Self {
        let export = sft_jsonl(records);
        let records_digest = format!("sha256:{}", hex::encode(Sha256::digest(export.as_bytes())));
        Self {
            records,
            config,
            export,
            records_digest,
        }
    }
}

/// Metadata reported by a trainer after a successful run.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct TrainerOutput {
    #[serde(default)]
    pub artifact_id: Option<String>,
    pub storage_ref: String,
    #[serde(default)]
    pub report: BTreeMap<String, serde_json::Value>,
}

pub trait TrainerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn train(&self, job: &TrainingJob<'_>) -> Result<TrainerOutput, BackendError>;
}

pub(crate) fn derived_artifact_id(records_digest: &str, config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(records_digest.as_bytes());
    h.update(b"\n");
    h.update(config.to_canonical_json().as_bytes());
    format!("adapter-{}", &hex::encode(h.finalize())[..24])
}

/// Hash-based trainer: no weights, deterministic artifact ids.
#[derive(Debug, Default)]
pub struct MockTrainer {
    fail_with: Option<BackendError>,
}

impl MockTrainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every run fails with `err`.
    pub fn failing(err: BackendError) -> Self {
        Self { fail_with: Some(err) }
    }
}

impl TrainerBackend for MockTrainer {
    fn name(&self) -> &str {
        "mock"
    }

    fn train(&self, job: &TrainingJob<'_>) -> Result<TrainerOutput, BackendError> {
        if let Some(err) = &self.fail_with {
            return Err(err.clone());
        }
        let id = derived_artifact_id(&job.records_digest, job.config);
        let steps = job.records.len() as u64 * u64::from(job.config.epochs);
        Ok(TrainerOutput {
            storage_ref: format!("mock://{id}"),
            artifact_id: Some(id),
            report: BTreeMap::from([
                ("trainer".to_owned(), "mock".into()),
                ("records".to_owned(), job.records.len().into()),
                ("steps".to_owned(), steps.into()),
            ]),
        })
    }
}

/// Shells out to an external training program:
/// `program [args..] <export.jsonl> <config.json>`.
///
/// The program prints a metadata JSON object (`storage_ref`, optional
/// `artifact_id` and `report`) on stdout. Exit status 2 means the config was
/// rejected; any other failure is treated as transient.
#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
}

impl CommandTrainer {
    pub fn new(program: impl Into<String>, args: Vec<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args,
            work_dir: work_dir.into(),
        }
    }
}

impl TrainerBackend for CommandTrainer {
    fn name(&self) -> &str {
        "command"
    }

    fn train(&self, job: &TrainingJob<'_>) -> Result<TrainerOutput, BackendError> {
        let run_id = &derived_artifact_id(&job.records_digest, job.config)["adapter-".len()..];
        let dir = self.work_dir.join(format!("job-{run_id}"));
        let io_err = |e: std::io::Error| BackendError::Transport(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(&dir).map_err(io_err)?;
        let export_path = dir.join("export.jsonl");
        let config_path = dir.join("config.json");
        std::fs::write(&export_path, &job.export).map_err(io_err)?;
        std::fs::write(&config_path, job.config.to_canonical_json()).map_err(io_err)?;

        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&export_path)
            .arg(&config_path)
            .output()
            .map_err(|e| BackendError::Config(format!("cannot run {}: {e}", self.program)))?;
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_owned();
        match out.status.code() {
            Some(0) => {}
            Some(2) => return Err(BackendError::Config(format!("trainer rejected config: {stderr}"))),
            code => {
                return Err(BackendError::Transport(format!(
                    "trainer exited with {}: {stderr}",
                    code.map_or("signal".to_owned(), |c| c.to_string())
                )))
            }
        }
        serde_json::from_slice::<TrainerOutput>(&out.stdout)
            .map_err(|e| BackendError::Failed(format!("bad trainer metadata: {e}")))
    }
}
