//! Per-stage provenance records and the bundled run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hashing::file_sha256;
use crate::{Error, Result};

pub const STAGES_DIR: &str = "stages";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the run directory when the file lives inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: Vec<StageRecord>,
    /// Every distinct file mentioned by any stage.
    pub files: Vec<FileDigest>,
}

fn display_path(run_dir: &Path, path: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (root, file) = (abs(run_dir), abs(path));
    match file.strip_prefix(&root) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => file.to_string_lossy().into_owned(),
    }
}

pub fn digest(run_dir: &Path, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: display_path(run_dir, path),
        sha256: file_sha256(path)?,
    })
}

pub struct StageBuilder {
    run_dir: PathBuf,
    record: StageRecord,
}

impl StageBuilder {
    pub fn new(run_dir: &Path, stage: &str, seed: u64) -> Self {
        StageBuilder {
            run_dir: run_dir.to_path_buf(),
            record: StageRecord {
                stage: stage.into(),
                seed,
                parameters: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                summary: None,
            },
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.record.parameters.insert(key.into(), v);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.record.inputs.push(digest(&self.run_dir, path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.record.outputs.push(digest(&self.run_dir, path)?);
        Ok(self)
    }

    pub fn summary(&mut self, value: impl Serialize) -> &mut Self {
        self.record.summary = serde_json::to_value(value).ok();
        self
    }

    /// Writes `stages/<stage>__<first output>.json` under the run directory,
    /// replacing the record of an earlier identical invocation.
    pub fn finish(self) -> Result<StageRecord> {
        let dir = self.run_dir.join(STAGES_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tag: String = self
            .record
            .outputs
            .first()
            .map(|d| d.path.as_str())
            .unwrap_or("none")
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = dir.join(format!("{}__{tag}.json", self.record.stage));
        write_json(&path, &self.record)?;
        Ok(self.record)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Collects every stage record under `run_dir`, ordered by file name.
pub fn collect_manifest(run_dir: &Path) -> Result<RunManifest> {
    let dir = run_dir.join(STAGES_DIR);
    let mut names: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
            .collect::<Result<_>>()?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    names.retain(|p| p.extension().is_some_and(|x| x == "json"));
    names.sort();
    let mut stages = Vec::with_capacity(names.len());
    let mut files = BTreeMap::new();
    for p in names {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let rec: StageRecord = serde_json::from_slice(&bytes)?;
        for d in rec.inputs.iter().chain(&rec.outputs) {
            files.insert(d.path.clone(), d.clone());
        }
        stages.push(rec);
    }
    Ok(RunManifest {
        stages,
        files: files.into_values().collect(),
    })
}
