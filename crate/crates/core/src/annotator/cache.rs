//! Append-only, content-addressed reply cache (JSONL).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub const CACHE_FILE: &str = "replies.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub prompt_hash: String,
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub reply: String,
}

/// Cache key over everything that determines a reply: template digest,
/// rendered prompt digest (which covers the instance fields), provider,
/// model and temperature.
pub fn cache_key(
    template_sha256: &str,
    prompt_hash: &str,
    provider: &str,
    model: &str,
    temperature: f64,
) -> String {
    sha256_hex(format!(
        "{template_sha256}\n{prompt_hash}\n{provider}\n{model}\n{temperature:?}"
    ))
}

pub struct ReplyCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
    writer: Mutex<File>,
}

impl ReplyCache {
    /// Opens (creating if needed) `<dir>/replies.jsonl`. A truncated trailing
    /// line from an interrupted run is ignored.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.reply);
                    }
                    Err(e) => {
                        log::warn!("skipping unreadable cache line in {}: {e}", path.display())
                    }
                }
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(ReplyCache {
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, record: CacheRecord) -> Result<()> {
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            w.write_all(line.as_bytes())
                .map_err(|e| Error::io(&self.path, e))?;
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(record.key, record.reply);
        Ok(())
    }
}
