//! Offline transcripts: recorded prompt-hash → reply maps.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::{LlmClient, SendError};
use crate::hashing::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub prompt_hash: String,
    pub reply: String,
    /// Entries without a provider serve every provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            field: "<transcript>".into(),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Serves recorded replies instead of calling a provider. When a prompt hash
/// has several recorded replies they are returned in recorded order, wrapping
/// around after the last one.
pub struct ReplayClient {
    provider: String,
    model: String,
    temperature: f64,
    replies: HashMap<String, Vec<String>>,
    served: Mutex<HashMap<String, usize>>,
}

impl ReplayClient {
    pub fn new(
        provider: impl Into<String>,
        model: impl Into<String>,
        temperature: f64,
        records: &[TranscriptRecord],
    ) -> Self {
        let provider = provider.into();
        let mut specific: HashMap<String, Vec<String>> = HashMap::new();
        let mut generic: HashMap<String, Vec<String>> = HashMap::new();
        for rec in records {
            match &rec.provider {
                Some(p) if *p == provider => specific
                    .entry(rec.prompt_hash.clone())
                    .or_default()
                    .push(rec.reply.clone()),
                Some(_) => {}
                None => generic
                    .entry(rec.prompt_hash.clone())
                    .or_default()
                    .push(rec.reply.clone()),
            }
        }
        for (hash, replies) in generic {
            specific.entry(hash).or_insert(replies);
        }
        ReplayClient {
            provider,
            model: model.into(),
            temperature,
            replies: specific,
            served: Mutex::new(HashMap::new()),
        }
    }
}

impl LlmClient for ReplayClient {
    fn provider(&self) -> &str {
        &self.provider
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn send(&self, prompt: &str) -> Result<String, SendError> {
        let hash = sha256_hex(prompt);
        let replies = self.replies.get(&hash).ok_or_else(|| {
            SendError::Fatal(format!(
                "no recorded reply for prompt hash {hash} (provider {})",
                self.provider
            ))
        })?;
        let mut served = self.served.lock().expect("replay counter lock");
        let n = served.entry(hash).or_insert(0);
        let reply = replies[*n % replies.len()].clone();
        *n += 1;
        Ok(reply)
    }
}

/// Wraps a live client and keeps every successful exchange so it can be
/// written out as a transcript.
pub struct RecordingClient<C> {
    inner: C,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingClient {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("recording lock").clone()
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn provider(&self) -> &str {
        self.inner.provider()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn send(&self, prompt: &str) -> Result<String, SendError> {
        let reply = self.inner.send(prompt)?;
        self.records
            .lock()
            .expect("recording lock")
            .push(TranscriptRecord {
                prompt_hash: sha256_hex(prompt),
                reply: reply.clone(),
                provider: Some(self.inner.provider().to_string()),
            });
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(prompt: &str, reply: &str, provider: Option<&str>) -> TranscriptRecord {
        TranscriptRecord {
            prompt_hash: sha256_hex(prompt),
            reply: reply.into(),
            provider: provider.map(str::to_string),
        }
    }

    #[test]
    fn provider_specific_entries_win() {
        let records = vec![
            rec("p", "generic", None),
            rec("p", "for-b", Some("b")),
            rec("q", "only-a", Some("a")),
        ];
        let a = ReplayClient::new("a", "m", 0.0, &records);
        let b = ReplayClient::new("b", "m", 0.0, &records);
        assert_eq!(a.send("p").unwrap(), "generic");
        assert_eq!(b.send("p").unwrap(), "for-b");
        assert_eq!(a.send("q").unwrap(), "only-a");
        assert!(matches!(b.send("q"), Err(SendError::Fatal(_))));
    }

    #[test]
    fn multiple_replies_cycle() {
        let records = vec![rec("p", "1", None), rec("p", "2", None)];
        let c = ReplayClient::new("a", "m", 0.0, &records);
        let got: Vec<String> = (0..3).map(|_| c.send("p").unwrap()).collect();
        assert_eq!(got, ["1", "2", "1"]);
    }

    #[test]
    fn recording_round_trips_byte_exact() {
        let weird = "{\"rating\": 3, \"justification\": \"naïve\\n–ok\"}\n";
        let live = ReplayClient::new("a", "m", 0.0, &[rec("prompt", weird, None)]);
        let recorder = RecordingClient::new(live);
        assert_eq!(recorder.send("prompt").unwrap(), weird);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_transcript(&path, &recorder.records()).unwrap();
        let replay = ReplayClient::new("a", "m", 0.0, &read_transcript(&path).unwrap());
        assert_eq!(replay.send("prompt").unwrap(), weird);
    }
}
