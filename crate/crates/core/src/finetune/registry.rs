use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use super::{AdapterArtifact, FinetuneError};
use crate::fsio::{is_safe_name, write_atomic};

/// Registered adapters, optionally persisted as `artifacts/<id>.json`.
/// Registration is serialized; reads share the lock.
pub struct ArtifactRegistry {
    dir: Option<PathBuf>,
    artifacts: RwLock<BTreeMap<String, Arc<AdapterArtifact>>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> FinetuneError {
    FinetuneError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl ArtifactRegistry {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            artifacts: RwLock::default(),
        }
    }

    pub fn open(root: &Path) -> Result<Self, FinetuneError> {
        let dir = root.join("artifacts");
        let mut artifacts = BTreeMap::new();
        if dir.is_dir() {
            let entries = std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| io_err(&dir, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                let a: AdapterArtifact = serde_json::from_str(&raw).map_err(|e| io_err(&path, e))?;
                artifacts.insert(a.artifact_id.clone(), Arc::new(a));
            }
        }
        Ok(Self {
            dir: Some(dir),
            artifacts: RwLock::new(artifacts),
        })
    }

    /// Registering the same artifact twice is a no-op; a different artifact
    /// under an existing id is rejected.
    pub fn register(&self, artifact: AdapterArtifact) -> Result<Arc<AdapterArtifact>, FinetuneError> {
        if !is_safe_name(&artifact.artifact_id) {
            return Err(FinetuneError::InvalidConfig(format!(
                "artifact id {:?} is not a safe name",
                artifact.artifact_id
            )));
        }
        let mut map = self.artifacts.write();
        if let Some(existing) = map.get(&artifact.artifact_id) {
            return if **existing == artifact {
                Ok(existing.clone())
            } else {
                Err(FinetuneError::DuplicateArtifact(artifact.artifact_id))
            };
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.json", artifact.artifact_id));
            let body = serde_json::to_vec_pretty(&artifact).expect("artifact serializes");
            write_atomic(&path, &body).map_err(|e| io_err(&path, e))?;
        }
        let a = Arc::new(artifact);
        map.insert(a.artifact_id.clone(), a.clone());
        Ok(a)
    }

    pub fn get(&self, id: &str) -> Result<Arc<AdapterArtifact>, FinetuneError> {
        self.artifacts
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| FinetuneError::UnknownArtifact(id.to_owned()))
    }

    pub fn list(&self) -> Vec<Arc<AdapterArtifact>> {
        self.artifacts.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.artifacts.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
