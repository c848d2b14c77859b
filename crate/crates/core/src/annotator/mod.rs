//! LLM-driven condition rewriting and similarity rating.
//!
//! Every request goes through the same path: render a frozen prompt, look the
//! reply up in the content-addressed cache, otherwise send it with retries,
//! then parse the reply as strict JSON. Replies that parse and validate are
//! cached; nothing else is.

mod cache;
mod client;
mod prompt;
mod replay;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheRecord, ReplyCache, CACHE_FILE};
pub use client::{
    ApiStyle, HttpChatClient, LlmClient, ProviderConfig, RetryPolicy, SendError, Sleeper,
    ThreadSleeper, API_KEY_ENV_PREFIX,
};
pub use prompt::{PromptKind, PromptTemplate, CONDITION_TEMPLATE_SHA256, RATING_TEMPLATE_SHA256};
pub use replay::{
    read_transcript, write_transcript, RecordingClient, ReplayClient, TranscriptRecord,
};

use crate::agreement::{krippendorff_alpha, AlphaMetric};
use crate::condition_audit::strip_stopwords;
use crate::corpus::{Dataset, Instance, MAX_LABEL, MIN_LABEL};
use crate::hashing::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionEdit {
    pub id: String,
    pub original_condition: String,
    pub improved_condition: String,
    pub justification: String,
    pub changed: bool,
    pub prompt_hash: String,
    /// Set when the justification is empty but the edit is more than
    /// stopword removal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingAnnotation {
    pub id: String,
    pub rating: u8,
    pub justification: String,
    pub source: String,
    pub prompt_hash: String,
}

/// Why a reply was not accepted.
#[derive(Debug, Clone, PartialEq)]
enum ReplyError {
    /// Not the expected JSON object. Worth asking again.
    Malformed(String),
    /// Well-formed but violates a value rule (e.g. rating 6). Not retried.
    Invalid(String),
}

/// Removes a surrounding Markdown code fence, if any.
fn strip_code_fence(reply: &str) -> &str {
    let trimmed = reply.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return trimmed;
    };
    // drop an info string such as `json` on the opening line
    match body.find('\n') {
        Some(nl) if body[..nl].chars().all(|c| c.is_ascii_alphanumeric()) => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionReply {
    improved_condition: String,
    justification: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingReply {
    rating: serde_json::Value,
    justification: String,
}

fn parse_condition_reply(
    inst: &Instance,
    raw: &str,
    prompt_hash: &str,
) -> Result<ConditionEdit, ReplyError> {
    let reply: ConditionReply = serde_json::from_str(strip_code_fence(raw))
        .map_err(|e| ReplyError::Malformed(e.to_string()))?;
    let improved = reply.improved_condition.trim().to_string();
    if improved.is_empty() {
        return Err(ReplyError::Invalid("improved_condition is empty".into()));
    }
    let justification = reply.justification.trim().to_string();
    let warning = if justification.is_empty() {
        match strip_stopwords(&inst.condition) {
            Ok(stripped) if stripped == improved => None,
            _ => Some(format!(
                "empty justification but {:?} is not the stopword-stripped form of {:?}",
                improved, inst.condition
            )),
        }
    } else {
        None
    };
    if let Some(w) = &warning {
        log::warn!("instance {}: {w}", inst.id);
    }
    Ok(ConditionEdit {
        id: inst.id.clone(),
        original_condition: inst.condition.clone(),
        changed: improved != inst.condition.trim(),
        improved_condition: improved,
        justification,
        prompt_hash: prompt_hash.to_string(),
        warning,
    })
}

fn parse_rating_reply(
    inst: &Instance,
    raw: &str,
    prompt_hash: &str,
    source: &str,
) -> Result<RatingAnnotation, ReplyError> {
    let reply: RatingReply = serde_json::from_str(strip_code_fence(raw))
        .map_err(|e| ReplyError::Malformed(e.to_string()))?;
    let rating = reply.rating.as_i64().ok_or_else(|| {
        ReplyError::Malformed(format!("rating {} is not an integer", reply.rating))
    })?;
    if !(MIN_LABEL as i64..=MAX_LABEL as i64).contains(&rating) {
        return Err(ReplyError::Invalid(format!(
            "rating {rating} outside [{MIN_LABEL},{MAX_LABEL}]"
        )));
    }
    let justification = reply.justification.trim().to_string();
    if justification.is_empty() {
        return Err(ReplyError::Invalid("justification is empty".into()));
    }
    Ok(RatingAnnotation {
        id: inst.id.clone(),
        rating: rating as u8,
        justification,
        source: source.to_string(),
        prompt_hash: prompt_hash.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationOp {
    Conditions,
    Ratings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub id: String,
    pub error: String,
}

/// Outcome of annotating a dataset. `results` keeps dataset order; every
/// instance appears in exactly one of `results` and `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRun<T> {
    pub results: Vec<T>,
    pub failures: Vec<AnnotationFailure>,
    pub network_calls: usize,
    pub cache_hits: usize,
    /// More than the tolerated share of instances failed.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub sample_size: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub alpha: f64,
    pub ids: Vec<String>,
    /// One row per kept instance, one entry per repetition.
    pub ratings: Vec<Vec<Option<u8>>>,
    pub excluded: Vec<String>,
}

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_MAX_FAILURE_FRACTION: f64 = 0.05;

pub struct Annotator {
    condition_template: PromptTemplate,
    rating_template: PromptTemplate,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub max_failure_fraction: f64,
    sleeper: Arc<dyn Sleeper>,
}

impl Default for Annotator {
    fn default() -> Self {
        Annotator::new(
            PromptTemplate::builtin(PromptKind::Condition),
            PromptTemplate::builtin(PromptKind::Rating),
        )
    }
}

/// Send/parse with retries, shared by single-instance and dataset calls.
struct Attempt<'a> {
    client: &'a dyn LlmClient,
    retry: &'a RetryPolicy,
    sleeper: &'a dyn Sleeper,
    calls: &'a AtomicUsize,
}

impl Attempt<'_> {
    fn run<T>(
        &self,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, ReplyError>,
    ) -> Result<(T, String)> {
        let max = self.retry.max_attempts.max(1);
        let mut last_raw = None;
        let mut last_problem = String::new();
        for attempt in 1..=max {
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.client.send(prompt) {
                Ok(raw) => match parse(&raw) {
                    Ok(value) => return Ok((value, raw)),
                    Err(ReplyError::Invalid(msg)) => {
                        return Err(Error::Validation(format!(
                            "reply rejected: {msg}; reply: {raw:?}"
                        )))
                    }
                    Err(ReplyError::Malformed(msg)) => {
                        last_problem = format!("unparseable reply: {msg}");
                        last_raw = Some(raw);
                    }
                },
                Err(SendError::Fatal(msg)) => {
                    return Err(Error::Annotation {
                        attempts: attempt,
                        message: msg,
                        raw: last_raw,
                    })
                }
                Err(err) => {
                    last_problem = err.to_string();
                    if attempt < max {
                        let mut delay = self.retry.delay_after(attempt);
                        if let SendError::RateLimited {
                            retry_after: Some(hint),
                        } = err
                        {
                            delay = delay.max(hint);
                        }
                        self.sleeper.sleep(delay);
                    }
                }
            }
        }
        Err(Error::Annotation {
            attempts: max,
            message: last_problem,
            raw: last_raw,
        })
    }
}

impl Annotator {
    pub fn new(condition_template: PromptTemplate, rating_template: PromptTemplate) -> Self {
        assert_eq!(condition_template.kind(), PromptKind::Condition);
        assert_eq!(rating_template.kind(), PromptKind::Rating);
        Annotator {
            condition_template,
            rating_template,
            retry: RetryPolicy::default(),
            concurrency: DEFAULT_CONCURRENCY,
            max_failure_fraction: DEFAULT_MAX_FAILURE_FRACTION,
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn template(&self, kind: PromptKind) -> &PromptTemplate {
        match kind {
            PromptKind::Condition => &self.condition_template,
            PromptKind::Rating => &self.rating_template,
        }
    }

    pub fn render_condition_prompt(&self, inst: &Instance) -> String {
        self.condition_template.render(inst)
    }

    pub fn render_rating_prompt(&self, inst: &Instance) -> String {
        self.rating_template.render(inst)
    }

    fn attempt<'a>(&'a self, client: &'a dyn LlmClient, calls: &'a AtomicUsize) -> Attempt<'a> {
        Attempt {
            client,
            retry: &self.retry,
            sleeper: self.sleeper.as_ref(),
            calls,
        }
    }

    pub fn modify_condition(
        &self,
        inst: &Instance,
        client: &dyn LlmClient,
    ) -> Result<ConditionEdit> {
        let prompt = self.render_condition_prompt(inst);
        let hash = sha256_hex(&prompt);
        let calls = AtomicUsize::new(0);
        self.attempt(client, &calls)
            .run(&prompt, |raw| parse_condition_reply(inst, raw, &hash))
            .map(|(edit, _)| edit)
    }

    pub fn annotate_rating(
        &self,
        inst: &Instance,
        client: &dyn LlmClient,
    ) -> Result<RatingAnnotation> {
        let prompt = self.render_rating_prompt(inst);
        let hash = sha256_hex(&prompt);
        let calls = AtomicUsize::new(0);
        self.attempt(client, &calls)
            .run(&prompt, |raw| {
                parse_rating_reply(inst, raw, &hash, client.provider())
            })
            .map(|(ann, _)| ann)
    }

    pub fn annotate_conditions(
        &self,
        dataset: &Dataset,
        client: &dyn LlmClient,
        cache: Option<&ReplyCache>,
    ) -> AnnotationRun<ConditionEdit> {
        self.annotate_dataset(
            dataset,
            client,
            cache,
            PromptKind::Condition,
            parse_condition_reply,
        )
    }

    pub fn annotate_ratings(
        &self,
        dataset: &Dataset,
        client: &dyn LlmClient,
        cache: Option<&ReplyCache>,
    ) -> AnnotationRun<RatingAnnotation> {
        let source = client.provider().to_string();
        self.annotate_dataset(
            dataset,
            client,
            cache,
            PromptKind::Rating,
            move |inst, raw, hash| parse_rating_reply(inst, raw, hash, &source),
        )
    }

    fn annotate_dataset<T, P>(
        &self,
        dataset: &Dataset,
        client: &dyn LlmClient,
        cache: Option<&ReplyCache>,
        kind: PromptKind,
        parse: P,
    ) -> AnnotationRun<T>
    where
        T: Send,
        P: Fn(&Instance, &str, &str) -> Result<T, ReplyError> + Sync,
    {
        let template = self.template(kind);
        let prompts: Vec<(String, String, String)> = dataset
            .instances
            .iter()
            .map(|inst| {
                let prompt = template.render(inst);
                let hash = sha256_hex(&prompt);
                let key = cache_key(
                    template.sha256(),
                    &hash,
                    client.provider(),
                    client.model(),
                    client.temperature(),
                );
                (prompt, hash, key)
            })
            .collect();

        // Resolve from cache first; identical prompts are sent once.
        let mut outcomes: Vec<Option<Result<T>>> = Vec::with_capacity(dataset.len());
        let mut cache_hits = 0;
        let mut pending: Vec<usize> = Vec::new();
        let mut first_with_key: HashMap<&str, usize> = HashMap::new();
        let mut waiting_on: Vec<Option<usize>> = vec![None; dataset.len()];
        for (idx, (inst, (_, hash, key))) in dataset.instances.iter().zip(&prompts).enumerate() {
            let cached = cache
                .and_then(|c| c.get(key))
                .and_then(|raw| parse(inst, &raw, hash).ok());
            if let Some(value) = cached {
                cache_hits += 1;
                outcomes.push(Some(Ok(value)));
                continue;
            }
            outcomes.push(None);
            match first_with_key.get(key.as_str()) {
                Some(&first) => waiting_on[idx] = Some(first),
                None => {
                    first_with_key.insert(key, idx);
                    pending.push(idx);
                }
            }
        }

        let calls = AtomicUsize::new(0);
        let next = AtomicUsize::new(0);
        let fetched: Vec<Mutex<Option<Result<String>>>> =
            pending.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.concurrency.clamp(1, pending.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let slot = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&idx) = pending.get(slot) else { break };
                    let inst = &dataset.instances[idx];
                    let (prompt, hash, key) = &prompts[idx];
                    let result = self
                        .attempt(client, &calls)
                        .run(prompt, |raw| parse(inst, raw, hash))
                        .and_then(|(_, raw)| {
                            if let Some(c) = cache {
                                c.put(CacheRecord {
                                    key: key.clone(),
                                    prompt_hash: hash.clone(),
                                    provider: client.provider().to_string(),
                                    model: client.model().to_string(),
                                    temperature: client.temperature(),
                                    reply: raw.clone(),
                                })?;
                            }
                            Ok(raw)
                        });
                    *fetched[slot].lock().expect("result slot") = Some(result);
                });
            }
        });

        let raw_by_idx: HashMap<usize, Result<String>> = pending
            .iter()
            .zip(fetched)
            .map(|(&idx, m)| {
                (
                    idx,
                    m.into_inner()
                        .expect("result slot")
                        .expect("every slot filled"),
                )
            })
            .collect();

        let mut results = Vec::with_capacity(dataset.len());
        let mut failures = Vec::new();
        for (idx, inst) in dataset.instances.iter().enumerate() {
            let outcome = outcomes[idx].take().unwrap_or_else(|| {
                let source = waiting_on[idx].unwrap_or(idx);
                match &raw_by_idx[&source] {
                    Ok(raw) => parse(inst, raw, &prompts[idx].1).map_err(|e| match e {
                        ReplyError::Malformed(m) | ReplyError::Invalid(m) => Error::Validation(m),
                    }),
                    Err(e) => Err(Error::Validation(e.to_string())),
                }
            });
            match outcome {
                Ok(value) => results.push(value),
                Err(e) => {
                    log::warn!("instance {} failed: {e}", inst.id);
                    failures.push(AnnotationFailure {
                        id: inst.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let failed = !dataset.is_empty()
            && failures.len() as f64 / dataset.len() as f64 > self.max_failure_fraction;
        AnnotationRun {
            results,
            failures,
            network_calls: calls.into_inner(),
            cache_hits,
            failed,
        }
    }

    /// Rates a seeded sample `repetitions` times (bypassing the cache) and
    /// measures self-agreement with ordinal Krippendorff's alpha.
    pub fn consistency_run(
        &self,
        dataset: &Dataset,
        client: &dyn LlmClient,
        sample_size: usize,
        repetitions: usize,
        seed: u64,
    ) -> Result<ConsistencyResult> {
        if sample_size > dataset.len() {
            return Err(Error::Precondition(format!(
                "sample size {sample_size} exceeds dataset size {}",
                dataset.len()
            )));
        }
        if repetitions < 2 {
            return Err(Error::Precondition(
                "consistency needs at least two repetitions".into(),
            ));
        }
        let picked = sample_indices(dataset.len(), sample_size, seed);
        let calls = AtomicUsize::new(0);
        let mut ids = Vec::new();
        let mut ratings = Vec::new();
        let mut excluded = Vec::new();
        for idx in picked {
            let inst = &dataset.instances[idx];
            let prompt = self.render_rating_prompt(inst);
            let hash = sha256_hex(&prompt);
            let row: Vec<Option<u8>> = (0..repetitions)
                .map(|_| {
                    self.attempt(client, &calls)
                        .run(&prompt, |raw| {
                            parse_rating_reply(inst, raw, &hash, client.provider())
                        })
                        .map(|(a, _)| a.rating)
                        .map_err(|e| log::warn!("instance {}: repetition failed: {e}", inst.id))
                        .ok()
                })
                .collect();
            if row.iter().all(Option::is_none) {
                log::warn!("instance {} failed every repetition; excluded", inst.id);
                excluded.push(inst.id.clone());
            } else {
                ids.push(inst.id.clone());
                ratings.push(row);
            }
        }
        if ids.len() < 2 {
            return Err(Error::Precondition(format!(
                "only {} usable instance(s) for consistency",
                ids.len()
            )));
        }
        let alpha = consistency_alpha(&ratings, repetitions)?;
        Ok(ConsistencyResult {
            sample_size,
            repetitions,
            seed,
            alpha,
            ids,
            ratings,
            excluded,
        })
    }
}

/// Alpha over the repetitions x instances matrix.
pub fn consistency_alpha(per_instance: &[Vec<Option<u8>>], repetitions: usize) -> Result<f64> {
    let matrix: Vec<Vec<Option<i64>>> = (0..repetitions)
        .map(|r| {
            per_instance
                .iter()
                .map(|row| row.get(r).copied().flatten().map(i64::from))
                .collect()
        })
        .collect();
    krippendorff_alpha(&matrix, AlphaMetric::Ordinal)
}

/// `n` distinct indices below `len`, drawn with the given seed, ascending.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, n).into_vec();
    picked.sort_unstable();
    picked
}

/// Replaces conditions with their improved versions. Instances without an
/// edit keep their condition, so the row count never changes.
pub fn apply_condition_edits(dataset: &Dataset, edits: &[ConditionEdit]) -> Dataset {
    let by_id: HashMap<&str, &ConditionEdit> = edits.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut out = dataset.clone();
    for inst in &mut out.instances {
        if let Some(edit) = by_id.get(inst.id.as_str()) {
            inst.condition = edit.improved_condition.clone();
        }
    }
    out
}

/// One row of the manual-audit sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub old_condition: String,
    pub new_condition: String,
    pub condition_justification: String,
    pub old_rating: Option<u8>,
    pub new_rating: Option<u8>,
    pub rating_justifications: String,
}

/// Joins original and revised datasets with the edits and rating
/// annotations that produced them, keyed by instance id.
pub fn review_rows(
    original: &Dataset,
    revised: &Dataset,
    edits: &[ConditionEdit],
    annotations: &[RatingAnnotation],
) -> Result<Vec<ReviewRow>> {
    let edits: HashMap<&str, &ConditionEdit> = edits.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut notes: HashMap<&str, Vec<String>> = HashMap::new();
    for a in annotations {
        notes
            .entry(a.id.as_str())
            .or_default()
            .push(format!("[{}: {}] {}", a.source, a.rating, a.justification));
    }
    original
        .instances
        .iter()
        .map(|orig| {
            let new = revised.get(&orig.id).ok_or_else(|| {
                Error::Validation(format!("instance {} missing from revised dataset", orig.id))
            })?;
            Ok(ReviewRow {
                id: orig.id.clone(),
                sentence1: orig.sentence1.clone(),
                sentence2: orig.sentence2.clone(),
                old_condition: orig.condition.clone(),
                new_condition: new.condition.clone(),
                condition_justification: edits
                    .get(orig.id.as_str())
                    .map(|e| e.justification.clone())
                    .unwrap_or_default(),
                old_rating: orig.label,
                new_rating: new.label,
                rating_justifications: notes
                    .get(orig.id.as_str())
                    .map(|v| v.join(" | "))
                    .unwrap_or_default(),
            })
        })
        .collect()
}

/// Writes a seeded sample of `n` review rows as CSV. `n = 0` produces an
/// empty file.
pub fn sample_for_review(
    rows: &[ReviewRow],
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<Vec<ReviewRow>> {
    if n > rows.len() {
        return Err(Error::Precondition(format!(
            "cannot sample {n} rows from {}",
            rows.len()
        )));
    }
    let sample: Vec<ReviewRow> = sample_indices(rows.len(), n, seed)
        .into_iter()
        .map(|i| rows[i].clone())
        .collect();
    if sample.is_empty() {
        std::fs::write(path, b"").map_err(|e| Error::io(path, e))?;
        return Ok(sample);
    }
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for row in &sample {
        writer
            .serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(sample)
}

#[cfg(test)]
mod tests;
