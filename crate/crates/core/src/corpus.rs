//! Canonical C-STS data model and file I/O.
//!
//! An [`Instance`] is one rated sentence pair under a condition. Files are
//! either JSONL (one object per line) or CSV with a header row; both carry the
//! columns `id`, `sentence1`, `sentence2`, `condition`, `label` and `pair_id`,
//! where `id`, `label` and `pair_id` are optional on input.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub const MIN_LABEL: u8 = 1;
pub const MAX_LABEL: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        sentence1: impl Into<String>,
        sentence2: impl Into<String>,
        condition: impl Into<String>,
        label: Option<u8>,
    ) -> Self {
        Instance {
            id: id.into(),
            sentence1: sentence1.into(),
            sentence2: sentence2.into(),
            condition: condition.into(),
            label,
            pair_id: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, text) in [
            ("sentence1", &self.sentence1),
            ("sentence2", &self.sentence2),
            ("condition", &self.condition),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "instance {}: {field} is empty",
                    self.id
                )));
            }
        }
        if let Some(label) = self.label {
            check_label(label)
                .map_err(|m| Error::Validation(format!("instance {}: {m}", self.id)))?;
        }
        Ok(())
    }

    /// The two sentences as an order-insensitive key.
    pub fn unordered_pair(&self) -> (&str, &str) {
        let (a, b) = (self.sentence1.as_str(), self.sentence2.as_str());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

fn check_label(label: u8) -> std::result::Result<(), String> {
    if (MIN_LABEL..=MAX_LABEL).contains(&label) {
        Ok(())
    } else {
        Err(format!("label {label} outside [{MIN_LABEL},{MAX_LABEL}]"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<Instance>,
}

impl Dataset {
    /// Builds a dataset, validating every instance and id uniqueness.
    pub fn new(name: impl Into<String>, instances: Vec<Instance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            inst.validate()?;
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {:?}", inst.id)));
            }
        }
        Ok(Dataset {
            name: name.into(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.instances.iter().map(|i| i.label).collect()
    }

    /// Links rows that share the same unordered sentence pair (the low- and
    /// high-similarity conditions of one pair). Rows that already carry a
    /// `pair_id` are left alone.
    pub fn link_pairs(&mut self) {
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (idx, inst) in self.instances.iter().enumerate() {
            let (a, b) = inst.unordered_pair();
            groups
                .entry((a.to_string(), b.to_string()))
                .or_default()
                .push(idx);
        }
        for members in groups.values().filter(|m| m.len() >= 2) {
            let pair_id = format!("pair-{}", self.instances[members[0]].id);
            for &idx in members {
                let inst = &mut self.instances[idx];
                if inst.pair_id.is_none() {
                    inst.pair_id = Some(pair_id.clone());
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Infers the format from a file extension (`.csv` → CSV, else JSONL).
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        })
    }
}

/// Fields of one input row before validation.
#[derive(Default)]
struct RawRow {
    id: Option<String>,
    sentence1: Option<String>,
    sentence2: Option<String>,
    condition: Option<String>,
    label: Option<u8>,
    pair_id: Option<String>,
}

impl RawRow {
    fn into_instance(self, line: usize, row_index: usize) -> Result<Instance> {
        let required = |field: &str, v: Option<String>| -> Result<String> {
            match v {
                Some(s) if !s.trim().is_empty() => Ok(s),
                Some(_) => Err(record_err(line, field, "empty text")),
                None => Err(record_err(line, field, "missing")),
            }
        };
        Ok(Instance {
            id: self.id.unwrap_or_else(|| row_index.to_string()),
            sentence1: required("sentence1", self.sentence1)?,
            sentence2: required("sentence2", self.sentence2)?,
            condition: required("condition", self.condition)?,
            label: self.label,
            pair_id: self.pair_id,
        })
    }
}

fn record_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_label_number(line: usize, value: f64) -> Result<u8> {
    if value.fract() != 0.0 {
        return Err(record_err(
            line,
            "label",
            format!("{value} is not an integer"),
        ));
    }
    if value < MIN_LABEL as f64 || value > MAX_LABEL as f64 {
        return Err(Error::Validation(format!(
            "line {line}: label {value} outside [{MIN_LABEL},{MAX_LABEL}]"
        )));
    }
    Ok(value as u8)
}

fn parse_json_row(line: usize, text: &str) -> Result<RawRow> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| record_err(line, "<record>", e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(record_err(line, "<record>", "expected a JSON object"));
    };
    let string_field = |field: &str| -> Result<Option<String>> {
        match map.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) if field == "id" => Ok(Some(n.to_string())),
            Some(other) => Err(record_err(
                line,
                field,
                format!("expected string, got {other}"),
            )),
        }
    };
    let label = match map.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            let v = n
                .as_f64()
                .ok_or_else(|| record_err(line, "label", "not a number"))?;
            Some(parse_label_number(line, v)?)
        }
        Some(other) => {
            return Err(record_err(
                line,
                "label",
                format!("expected integer, got {other}"),
            ))
        }
    };
    Ok(RawRow {
        id: string_field("id")?,
        sentence1: string_field("sentence1")?,
        sentence2: string_field("sentence2")?,
        condition: string_field("condition")?,
        label,
        pair_id: string_field("pair_id")?,
    })
}

/// Loads and validates a dataset. Missing ids become zero-based row indices;
/// rows sharing a sentence pair are linked through `pair_id`.
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut instances = Vec::new();
    match format {
        Format::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line_no = idx + 1;
                let text = line.map_err(|e| Error::io(path, e))?;
                if text.trim().is_empty() {
                    continue;
                }
                let row = parse_json_row(line_no, &text)?;
                instances.push(row.into_instance(line_no, instances.len())?);
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| record_err(1, "<header>", e.to_string()))?
                .clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let cols = [
                col("id"),
                col("sentence1"),
                col("sentence2"),
                col("condition"),
                col("label"),
                col("pair_id"),
            ];
            for (idx, record) in reader.records().enumerate() {
                // header occupies line 1
                let line_no = idx + 2;
                let record = record.map_err(|e| record_err(line_no, "<record>", e.to_string()))?;
                let get = |c: Option<usize>| -> Option<String> {
                    c.and_then(|i| record.get(i)).map(str::to_string)
                };
                let opt = |c: Option<usize>| get(c).filter(|s| !s.is_empty());
                let label = match opt(cols[4]) {
                    None => None,
                    Some(raw) => {
                        let v: f64 = raw.trim().parse().map_err(|_| {
                            record_err(line_no, "label", format!("{raw:?} is not a number"))
                        })?;
                        Some(parse_label_number(line_no, v)?)
                    }
                };
                let row = RawRow {
                    id: opt(cols[0]),
                    sentence1: get(cols[1]),
                    sentence2: get(cols[2]),
                    condition: get(cols[3]),
                    label,
                    pair_id: opt(cols[5]),
                };
                instances.push(row.into_instance(line_no, instances.len())?);
            }
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut dataset = Dataset::new(name, instances)?;
    dataset.link_pairs();
    Ok(dataset)
}

pub fn write_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Jsonl => {
            for inst in &dataset.instances {
                serde_json::to_writer(&mut out, inst)?;
                out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(&mut out);
            let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
            writer
                .write_record([
                    "id",
                    "sentence1",
                    "sentence2",
                    "condition",
                    "label",
                    "pair_id",
                ])
                .map_err(csv_err)?;
            for inst in &dataset.instances {
                let label = inst.label.map(|l| l.to_string()).unwrap_or_default();
                writer
                    .write_record([
                        inst.id.as_str(),
                        &inst.sentence1,
                        &inst.sentence2,
                        &inst.condition,
                        &label,
                        inst.pair_id.as_deref().unwrap_or(""),
                    ])
                    .map_err(csv_err)?;
            }
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Seeded random partition. The first part holds `round(fraction * N)`
/// instances; both parts keep the input order.
pub fn split_dataset(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.fraction > 0.0 && spec.fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "split fraction {} not in (0,1)",
            spec.fraction
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Precondition("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let first_len = (spec.fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut in_first = vec![false; n];
    for &i in &order[..first_len] {
        in_first[i] = true;
    }
    let (mut first, mut second) = (
        Vec::with_capacity(first_len),
        Vec::with_capacity(n - first_len),
    );
    for (inst, &pick) in dataset.instances.iter().zip(&in_first) {
        if pick {
            first.push(inst.clone());
        } else {
            second.push(inst.clone());
        }
    }
    Ok((
        Dataset {
            name: format!("{}-part1", dataset.name),
            instances: first,
        },
        Dataset {
            name: format!("{}-part2", dataset.name),
            instances: second,
        },
    ))
}
