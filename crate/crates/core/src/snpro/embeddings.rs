//! Condition-aware embedding files and the condition-subtraction step.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Instruction used upstream to embed a sentence under a condition.
pub const SENTENCE_EMBEDDING_PROMPT: &str =
    "Retrieve semantically similar texts to the [CONDITION], given the Sentence: [SENTENCE].";
/// Instruction used upstream to embed the condition alone.
pub const CONDITION_EMBEDDING_PROMPT: &str =
    "Retrieve semantically similar texts to a given Sentence: [CONDITION].";

pub fn sentence_embedding_prompt(sentence: &str, condition: &str) -> String {
    SENTENCE_EMBEDDING_PROMPT
        .replace("[CONDITION]", condition)
        .replace("[SENTENCE]", sentence)
}

pub fn condition_embedding_prompt(condition: &str) -> String {
    CONDITION_EMBEDDING_PROMPT.replace("[CONDITION]", condition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub source_model: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub e_s1c: Vec<f64>,
    pub e_s2c: Vec<f64>,
    pub e_c: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.e_c.len()
    }

    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        let d = dim.unwrap_or(self.e_c.len());
        if self.e_s1c.len() != d || self.e_s2c.len() != d || self.e_c.len() != d {
            return Err(Error::Validation(format!(
                "embedding {}: dimensions {}/{}/{} do not all equal {d}",
                self.id,
                self.e_s1c.len(),
                self.e_s2c.len(),
                self.e_c.len()
            )));
        }
        if self
            .e_s1c
            .iter()
            .chain(&self.e_s2c)
            .chain(&self.e_c)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation(format!(
                "embedding {}: non-finite entry",
                self.id
            )));
        }
        Ok(())
    }
}

/// Subtracts the condition embedding from both sentence embeddings.
pub fn postprocess(rec: &EmbeddingRecord) -> Result<(Vec<f64>, Vec<f64>)> {
    rec.validate(None)?;
    let sub = |v: &[f64]| {
        v.iter()
            .zip(&rec.e_c)
            .map(|(a, c)| a - c)
            .collect::<Vec<_>>()
    };
    Ok((sub(&rec.e_s1c), sub(&rec.e_s2c)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub header: EmbeddingHeader,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn by_id(&self) -> HashMap<&str, &EmbeddingRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }
}

/// Reads a JSONL embedding file: a header object on the first line, then one
/// record per instance.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: EmbeddingHeader = loop {
        match lines.next() {
            None => {
                return Err(Error::Validation(format!(
                    "{}: missing header line",
                    path.display()
                )))
            }
            Some((idx, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Record {
                    line: idx + 1,
                    field: "<header>".into(),
                    message: e.to_string(),
                })?;
            }
        }
    };
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            field: "<embedding>".into(),
            message: e.to_string(),
        })?;
        rec.validate(Some(header.dim))
            .map_err(|e| Error::Validation(format!("line {}: {e}", idx + 1)))?;
        records.push(rec);
    }
    Ok(EmbeddingSet { header, records })
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &set.header)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for rec in &set.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Post-processed pair inputs with their gold labels, stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub ids: Vec<String>,
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    /// Gold ratings on the 1..5 scale.
    pub labels: Vec<f64>,
}

impl PairSet {
    pub fn from_records(records: &[EmbeddingRecord], labels: &[f64]) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::Precondition(format!(
                "{} embedding records but {} labels",
                records.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| !(1.0..=5.0).contains(*l)) {
            return Err(Error::Validation(format!("label {bad} outside [1,5]")));
        }
        let dim = records.first().map_or(0, EmbeddingRecord::dim);
        let mut left = Array2::zeros((records.len(), dim));
        let mut right = Array2::zeros((records.len(), dim));
        for (i, rec) in records.iter().enumerate() {
            rec.validate(Some(dim))?;
            let (a, b) = postprocess(rec)?;
            left.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
            right.row_mut(i).assign(&ndarray::ArrayView1::from(&b));
        }
        Ok(PairSet {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            left,
            right,
            labels: labels.to_vec(),
        })
    }

    /// Joins embeddings to dataset labels by id, in dataset order.
    pub fn join(set: &EmbeddingSet, dataset: &crate::corpus::Dataset) -> Result<Self> {
        let by_id = set.by_id();
        let mut records = Vec::with_capacity(dataset.len());
        let mut labels = Vec::with_capacity(dataset.len());
        for inst in &dataset.instances {
            let rec = by_id.get(inst.id.as_str()).ok_or_else(|| {
                Error::Validation(format!("no embedding for instance {}", inst.id))
            })?;
            let label = inst
                .label
                .ok_or_else(|| Error::Validation(format!("instance {} has no label", inst.id)))?;
            records.push((*rec).clone());
            labels.push(label as f64);
        }
        Self::from_records(&records, &labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.left.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> PairSet {
        PairSet {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            left: self.left.select(ndarray::Axis(0), rows),
            right: self.right.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s1: &[f64], s2: &[f64], c: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: "r".into(),
            e_s1c: s1.to_vec(),
            e_s2c: s2.to_vec(),
            e_c: c.to_vec(),
        }
    }

    #[test]
    fn subtraction() {
        let (a, b) = postprocess(&rec(&[1.0, 2.0], &[3.0, 5.0], &[1.0, 2.0])).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert_eq!(b, vec![2.0, 3.0]);
        let (a, b) = postprocess(&rec(&[1.5, -2.0], &[0.25, 7.0], &[0.0, 0.0])).unwrap();
        assert_eq!((a, b), (vec![1.5, -2.0], vec![0.25, 7.0]));
        let s1 = [0.3, -1.2, 4.4, 0.0];
        let s2 = [2.0, 0.1, -0.7, 9.5];
        let c = [1.1, 1.2, -3.3, 0.5];
        let (a, b) = postprocess(&rec(&s1, &s2, &c)).unwrap();
        for i in 0..4 {
            assert_eq!(a[i], s1[i] - c[i]);
            assert_eq!(b[i], s2[i] - c[i]);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(postprocess(&rec(&[1.0], &[1.0, 2.0], &[0.0, 0.0])).is_err());
        assert!(postprocess(&rec(&[f64::NAN, 0.0], &[1.0, 2.0], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn prompts_fill_placeholders() {
        assert_eq!(
            sentence_embedding_prompt("A dog runs.", "type of animal"),
            "Retrieve semantically similar texts to the type of animal, given the Sentence: A dog runs.."
        );
        assert_eq!(
            condition_embedding_prompt("type of animal"),
            "Retrieve semantically similar texts to a given Sentence: type of animal."
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let set = EmbeddingSet {
            header: EmbeddingHeader {
                dim: 2,
                source_model: "synthetic".into(),
                prompt: SENTENCE_EMBEDDING_PROMPT.into(),
            },
            records: vec![rec(&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6])],
        };
        write_embeddings(&p, &set).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), set);

        std::fs::write(&p, "{\"dim\":3,\"source_model\":\"x\",\"prompt\":\"p\"}\n{\"id\":\"a\",\"e_s1c\":[1,2],\"e_s2c\":[1,2],\"e_c\":[1,2]}\n").unwrap();
        assert!(read_embeddings(&p).is_err());
    }
}
