//! Mean-and-round fusion of human and machine ratings.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, MAX_LABEL, MIN_LABEL};
use crate::{Error, Result};

/// One rating source: the original human label or a named provider.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Human,
    Provider(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Human => f.write_str("human"),
            Source::Provider(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSet {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<u8>,
    #[serde(default)]
    pub providers: BTreeMap<String, u8>,
}

impl RatingSet {
    pub fn get(&self, source: &Source) -> Option<u8> {
        match source {
            Source::Human => self.human,
            Source::Provider(name) => self.providers.get(name).copied(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.human.is_none() && self.providers.is_empty() {
            return Err(Error::Validation(format!(
                "rating set {} is empty",
                self.id
            )));
        }
        for r in self.human.iter().chain(self.providers.values()) {
            if !(MIN_LABEL..=MAX_LABEL).contains(r) {
                return Err(Error::Validation(format!(
                    "rating set {}: rating {r} outside [{MIN_LABEL},{MAX_LABEL}]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A non-empty set of sources to average, written `human+gpt+claude`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    sources: Vec<Source>,
}

impl Strategy {
    pub fn new(sources: Vec<Source>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config(
                "aggregation strategy needs at least one source".into(),
            ));
        }
        let mut deduped = Vec::with_capacity(sources.len());
        for s in sources {
            if deduped.contains(&s) {
                return Err(Error::Config(format!(
                    "source {s} listed twice in strategy"
                )));
            }
            deduped.push(s);
        }
        Ok(Strategy { sources: deduped })
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sources = s
            .split('+')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                if p.eq_ignore_ascii_case("human") {
                    Source::Human
                } else {
                    Source::Provider(p.to_string())
                }
            })
            .collect();
        Strategy::new(sources)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sources.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("+"))
    }
}

/// Rounds `sum / count` to the nearest integer, halves away from zero.
/// Exact integer arithmetic; `sum` and `count` are positive.
fn round_mean(sum: u32, count: u32) -> u8 {
    ((2 * sum + count) / (2 * count)) as u8
}

/// Arithmetic mean of the selected ratings, rounded to the nearest integer.
pub fn aggregate(ratings: &RatingSet, strategy: &Strategy) -> Result<u8> {
    let mut sum = 0u32;
    for source in &strategy.sources {
        let r = ratings.get(source).ok_or_else(|| {
            Error::Validation(format!(
                "instance {}: no rating from source {source}",
                ratings.id
            ))
        })?;
        if !(MIN_LABEL..=MAX_LABEL).contains(&r) {
            return Err(Error::Validation(format!(
                "instance {}: rating {r} from {source} outside [{MIN_LABEL},{MAX_LABEL}]",
                ratings.id
            )));
        }
        sum += r as u32;
    }
    Ok(round_mean(sum, strategy.sources.len() as u32))
}

/// Copy of `dataset` with every label replaced by its aggregated rating.
pub fn apply_strategy(
    dataset: &Dataset,
    ratings: &[RatingSet],
    strategy: &Strategy,
) -> Result<Dataset> {
    let by_id: HashMap<&str, &RatingSet> = ratings.iter().map(|r| (r.id.as_str(), r)).collect();
    if by_id.len() != ratings.len() {
        return Err(Error::Validation("duplicate ids among rating sets".into()));
    }
    let mut out = dataset.clone();
    for inst in &mut out.instances {
        let rs = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| Error::Validation(format!("no rating set for instance {}", inst.id)))?;
        inst.label = Some(aggregate(rs, strategy)?);
    }
    if ratings.len() != dataset.len() {
        return Err(Error::Validation(format!(
            "{} rating sets for {} instances",
            ratings.len(),
            dataset.len()
        )));
    }
    Ok(out)
}

/// One provenance row: every source rating plus the fused label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<u8>,
    pub providers: BTreeMap<String, u8>,
    pub strategy: String,
    pub label: u8,
}

pub fn provenance(ratings: &[RatingSet], strategy: &Strategy) -> Result<Vec<ProvenanceRow>> {
    ratings
        .iter()
        .map(|rs| {
            Ok(ProvenanceRow {
                id: rs.id.clone(),
                human: rs.human,
                providers: rs.providers.clone(),
                strategy: strategy.to_string(),
                label: aggregate(rs, strategy)?,
            })
        })
        .collect()
}
