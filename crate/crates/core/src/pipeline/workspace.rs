//! On-disk stage cache. Each stage writes one artifact file; the manifest
//! records the hash of the stage's inputs and of the file it produced, so a
//! resumed run can reload a stage instead of recomputing it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_json, sha256_hex, write_json};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    input_hash: String,
    artifact: PathBuf,
    artifact_hash: String,
}

pub(crate) struct Workspace {
    dir: PathBuf,
    resume: bool,
    manifest: Manifest,
    /// Stage name to artifact hash, for report lineage.
    pub artifacts: BTreeMap<String, String>,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Workspace {
    pub fn open(dir: &Path, resume: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST);
        let manifest = if resume && path.exists() {
            read_json(&path)?
        } else {
            Manifest::default()
        };
        Ok(Workspace {
            dir: dir.to_owned(),
            resume,
            manifest,
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self, relative: &str) -> Result<PathBuf> {
        let p = self.dir.join(relative);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn hash_of(&self, stage: &str) -> &str {
        self.artifacts.get(stage).map_or("", String::as_str)
    }

    fn record(&mut self, stage: &str, input_hash: String, artifact: &Path) -> Result<()> {
        let artifact_hash = file_hash(artifact)?;
        self.artifacts.insert(stage.to_owned(), artifact_hash.clone());
        self.manifest.stages.insert(
            stage.to_owned(),
            StageRecord {
                input_hash,
                artifact: artifact.strip_prefix(&self.dir).unwrap_or(artifact).to_owned(),
                artifact_hash,
            },
        );
        write_json(&self.dir.join(MANIFEST), &self.manifest)
    }

    /// Runs `compute` unless a resumable record with the same input key and
    /// an intact artifact exists, in which case the artifact is loaded.
    pub fn stage<T>(
        &mut self,
        stage: &str,
        key: &str,
        artifact: &str,
        compute: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&T, &Path) -> Result<()>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let input_hash = sha256_hex(format!("{stage}\n{key}").as_bytes());
        let path = self.path(artifact)?;
        if self.resume {
            if let Some(rec) = self.manifest.stages.get(stage) {
                if rec.input_hash == input_hash && path.exists() && file_hash(&path)? == rec.artifact_hash {
                    log::info!("stage {stage}: reusing {}", path.display());
                    let value = load(&path)?;
                    self.artifacts.insert(stage.to_owned(), rec.artifact_hash.clone());
                    return Ok(value);
                }
            }
        }
        log::info!("stage {stage}: computing");
        let value = compute()?;
        save(&value, &path)?;
        self.record(stage, input_hash, &path)?;
        Ok(value)
    }

    /// Writes a cheap derived artifact (always recomputed) and records it.
    pub fn write(&mut self, stage: &str, artifact: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(artifact)?;
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        let input_hash = sha256_hex(contents.as_bytes());
        self.record(stage, input_hash, &path)?;
        Ok(path)
    }
}
