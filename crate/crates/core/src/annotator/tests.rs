use std::collections::VecDeque;
use std::time::Duration;

use super::*;

/// Replies from a fixed script, then repeats the last entry.
struct Scripted {
    script: Mutex<VecDeque<Result<String, SendError>>>,
    last: Mutex<Option<Result<String, SendError>>>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(script: Vec<Result<String, SendError>>) -> Self {
        Scripted {
            script: Mutex::new(script.into()),
            last: Mutex::new(None),
            calls: AtomicUsize::new(0),
        }
    }
}

impl LlmClient for Scripted {
    fn provider(&self) -> &str {
        "scripted"
    }
    fn model(&self) -> &str {
        "m"
    }
    fn temperature(&self) -> f64 {
        0.0
    }
    fn send(&self, _prompt: &str) -> Result<String, SendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.script.lock().unwrap().pop_front();
        match next {
            Some(r) => {
                *self.last.lock().unwrap() = Some(r.clone());
                r
            }
            None => self.last.lock().unwrap().clone().expect("script not empty"),
        }
    }
}

/// Answers every rating prompt with a rating derived from the condition text.
struct Echo {
    calls: AtomicUsize,
}

impl LlmClient for Echo {
    fn provider(&self) -> &str {
        "echo"
    }
    fn model(&self) -> &str {
        "m"
    }
    fn temperature(&self) -> f64 {
        0.0
    }
    fn send(&self, prompt: &str) -> Result<String, SendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let cond = prompt.rsplit("Condition: ").next().unwrap();
        let rating = cond.len() % 5 + 1;
        Ok(format!(
            "{{\"rating\": {rating}, \"justification\": \"len of {cond}\"}}"
        ))
    }
}

#[derive(Default)]
struct RecordingSleeper(Mutex<Vec<Duration>>);

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

fn quiet_annotator() -> (Annotator, Arc<RecordingSleeper>) {
    let sleeper = Arc::new(RecordingSleeper::default());
    let a = Annotator::default().with_sleeper(sleeper.clone());
    (a, sleeper)
}

fn inst(id: &str, condition: &str) -> Instance {
    Instance::new(
        id,
        "A man rides a horse.",
        "A woman walks a dog.",
        condition,
        Some(3),
    )
}

fn dataset(n: usize) -> Dataset {
    Dataset::new(
        "d",
        (0..n)
            .map(|i| inst(&format!("i{i:03}"), &format!("condition number {i}")))
            .collect(),
    )
    .unwrap()
}

#[test]
fn fence_stripping() {
    assert_eq!(strip_code_fence("```json\n{\"a\":1}\n```"), "{\"a\":1}");
    assert_eq!(strip_code_fence("```\n{\"a\":1}```"), "{\"a\":1}");
    assert_eq!(strip_code_fence("  {\"a\":1} "), "{\"a\":1}");
}

#[test]
fn condition_reply_parsing() {
    let i = inst("1", "The animal.");
    let e = parse_condition_reply(
        &i,
        r#"{"improved_condition": "type of animal", "justification": "More specific."}"#,
        "h",
    )
    .unwrap();
    assert_eq!(e.improved_condition, "type of animal");
    assert!(e.changed);
    assert!(e.warning.is_none());

    let fenced = "```json\n{\"improved_condition\": \"animal\", \"justification\": \"\"}\n```";
    let e = parse_condition_reply(&i, fenced, "h").unwrap();
    assert_eq!(e.improved_condition, "animal");
    assert!(e.warning.is_none());

    let e = parse_condition_reply(
        &i,
        r#"{"improved_condition": "species", "justification": ""}"#,
        "h",
    )
    .unwrap();
    assert!(e.warning.is_some());

    let same = inst("2", "type of animal");
    let e = parse_condition_reply(
        &same,
        r#"{"improved_condition": "type of animal", "justification": ""}"#,
        "h",
    )
    .unwrap();
    assert!(!e.changed);

    assert!(matches!(
        parse_condition_reply(
            &i,
            r#"{"improved_condition": " ", "justification": "x"}"#,
            "h"
        ),
        Err(ReplyError::Invalid(_))
    ));
    assert!(matches!(
        parse_condition_reply(
            &i,
            r#"{"improved_condition": "a", "justification": "x", "extra": 1}"#,
            "h"
        ),
        Err(ReplyError::Malformed(_))
    ));
    assert!(matches!(
        parse_condition_reply(
            &i,
            "Sure! {\"improved_condition\": \"a\", \"justification\": \"x\"}",
            "h"
        ),
        Err(ReplyError::Malformed(_))
    ));
}

#[test]
fn rating_reply_parsing() {
    let i = inst("1", "x");
    let a = parse_rating_reply(&i, r#"{"rating": 4, "justification": "close"}"#, "h", "p").unwrap();
    assert_eq!((a.rating, a.source.as_str()), (4, "p"));
    assert!(matches!(
        parse_rating_reply(&i, r#"{"rating": 6, "justification": "j"}"#, "h", "p"),
        Err(ReplyError::Invalid(_))
    ));
    assert!(matches!(
        parse_rating_reply(&i, r#"{"rating": 0, "justification": "j"}"#, "h", "p"),
        Err(ReplyError::Invalid(_))
    ));
    assert!(matches!(
        parse_rating_reply(&i, r#"{"rating": 3, "justification": ""}"#, "h", "p"),
        Err(ReplyError::Invalid(_))
    ));
    assert!(matches!(
        parse_rating_reply(&i, r#"{"rating": 3.5, "justification": "j"}"#, "h", "p"),
        Err(ReplyError::Malformed(_))
    ));
    assert!(matches!(
        parse_rating_reply(&i, r#"{"rating": "3", "justification": "j"}"#, "h", "p"),
        Err(ReplyError::Malformed(_))
    ));
}

#[test]
fn non_json_three_times_is_annotation_error() {
    let (a, sleeper) = quiet_annotator();
    let client = Scripted::new(vec![Ok("not json".into())]);
    match a
        .modify_condition(&inst("1", "The animal."), &client)
        .unwrap_err()
    {
        Error::Annotation { attempts, raw, .. } => {
            assert_eq!(attempts, 3);
            assert_eq!(raw.as_deref(), Some("not json"));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(client.calls.load(Ordering::SeqCst), 3);
    assert!(sleeper.0.lock().unwrap().is_empty());
}

#[test]
fn rate_limit_then_success_backs_off() {
    let (a, sleeper) = quiet_annotator();
    let client = Scripted::new(vec![
        Err(SendError::RateLimited { retry_after: None }),
        Ok(r#"{"rating": 2, "justification": "j"}"#.into()),
    ]);
    let ann = a.annotate_rating(&inst("1", "c"), &client).unwrap();
    assert_eq!(ann.rating, 2);
    let sleeps = sleeper.0.lock().unwrap().clone();
    assert_eq!(sleeps.len(), 1);
    assert!(sleeps[0] >= a.retry.base_delay);
}

#[test]
fn transient_failures_follow_exponential_schedule() {
    let (a, sleeper) = quiet_annotator();
    let client = Scripted::new(vec![Err(SendError::Transient("boom".into()))]);
    assert!(matches!(
        a.annotate_rating(&inst("1", "c"), &client),
        Err(Error::Annotation { attempts: 3, .. })
    ));
    assert_eq!(
        *sleeper.0.lock().unwrap(),
        vec![Duration::from_secs(1), Duration::from_secs(2)]
    );
}

#[test]
fn fatal_and_invalid_are_not_retried() {
    let (a, _) = quiet_annotator();
    let client = Scripted::new(vec![Err(SendError::Fatal("401".into()))]);
    assert!(matches!(
        a.annotate_rating(&inst("1", "c"), &client),
        Err(Error::Annotation { attempts: 1, .. })
    ));
    let client = Scripted::new(vec![Ok(r#"{"rating": 6, "justification": "j"}"#.into())]);
    assert!(matches!(
        a.annotate_rating(&inst("1", "c"), &client),
        Err(Error::Validation(_))
    ));
    assert_eq!(client.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn dataset_run_is_ordered_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let (mut a, _) = quiet_annotator();
    a.concurrency = 8;
    let d = dataset(100);
    let client = Echo {
        calls: AtomicUsize::new(0),
    };
    let cache = ReplyCache::open(dir.path()).unwrap();
    let run = a.annotate_ratings(&d, &client, Some(&cache));
    assert_eq!(run.results.len(), 100);
    assert!(run.failures.is_empty());
    assert_eq!(run.network_calls, 100);
    let ids: Vec<&str> = run.results.iter().map(|r| r.id.as_str()).collect();
    let expected: Vec<&str> = d.instances.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, expected);

    drop(cache);
    let cache = ReplyCache::open(dir.path()).unwrap();
    let again = a.annotate_ratings(&d, &client, Some(&cache));
    assert_eq!(again.network_calls, 0);
    assert_eq!(again.cache_hits, 100);
    assert_eq!(again.results, run.results);
    assert_eq!(client.calls.load(Ordering::SeqCst), 100);
}

#[test]
fn identical_prompts_sent_once() {
    let (a, _) = quiet_annotator();
    let d = Dataset::new(
        "d",
        vec![inst("a", "same"), inst("b", "same"), inst("c", "other")],
    )
    .unwrap();
    let client = Echo {
        calls: AtomicUsize::new(0),
    };
    let run = a.annotate_ratings(&d, &client, None);
    assert_eq!(run.results.len(), 3);
    assert_eq!(client.calls.load(Ordering::SeqCst), 2);
    assert_eq!(run.results[1].id, "b");
}

#[test]
fn failures_are_collected() {
    let (mut a, _) = quiet_annotator();
    a.max_failure_fraction = 0.4;
    let d = dataset(3);
    let records: Vec<TranscriptRecord> = d.instances[..2]
        .iter()
        .map(|i| TranscriptRecord {
            prompt_hash: sha256_hex(a.render_rating_prompt(i)),
            reply: r#"{"rating": 5, "justification": "same"}"#.into(),
            provider: None,
        })
        .collect();
    let client = ReplayClient::new("r", "m", 0.0, &records);
    let run = a.annotate_ratings(&d, &client, None);
    assert_eq!(run.results.len() + run.failures.len(), 3);
    assert_eq!(run.failures[0].id, "i002");
    assert!(!run.failed);
    a.max_failure_fraction = 0.2;
    assert!(a.annotate_ratings(&d, &client, None).failed);
}

#[test]
fn consistency_with_identical_repetitions_is_one() {
    let (a, _) = quiet_annotator();
    let d = dataset(20);
    let client = Echo {
        calls: AtomicUsize::new(0),
    };
    let r = a.consistency_run(&d, &client, 10, 5, 42).unwrap();
    assert_eq!(r.alpha, 1.0);
    assert_eq!(r.ratings.len(), 10);
    assert_eq!(client.calls.load(Ordering::SeqCst), 50);
    assert_eq!(r, a.consistency_run(&d, &client, 10, 5, 42).unwrap());
}

#[test]
fn consistency_preconditions() {
    let (a, _) = quiet_annotator();
    let client = Echo {
        calls: AtomicUsize::new(0),
    };
    assert!(matches!(
        a.consistency_run(&dataset(50), &client, 100, 5, 0),
        Err(Error::Precondition(_))
    ));
    assert!(matches!(
        a.consistency_run(&dataset(50), &client, 10, 1, 0),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn consistency_alpha_matches_matrix_layout() {
    // three instances, two repetitions that disagree on one of them
    let rows = vec![
        vec![Some(1), Some(1)],
        vec![Some(5), Some(5)],
        vec![Some(3), Some(4)],
    ];
    let alpha = consistency_alpha(&rows, 2).unwrap();
    let matrix = vec![
        vec![Some(1), Some(5), Some(3)],
        vec![Some(1), Some(5), Some(4)],
    ];
    assert_eq!(
        alpha,
        krippendorff_alpha(&matrix, AlphaMetric::Ordinal).unwrap()
    );
    assert!(alpha < 1.0);
}

#[test]
fn review_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(400);
    let rows = review_rows(&d, &d, &[], &[]).unwrap();
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    let s = sample_for_review(&rows, 300, 9, &p1).unwrap();
    sample_for_review(&rows, 300, 9, &p2).unwrap();
    let ids: std::collections::HashSet<_> = s.iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), 300);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let empty = dir.path().join("e.csv");
    sample_for_review(&rows, 0, 9, &empty).unwrap();
    assert_eq!(std::fs::read(&empty).unwrap().len(), 0);
    assert!(sample_for_review(&rows, 401, 9, &empty).is_err());
}

#[test]
fn condition_edits_preserve_row_count() {
    let d = dataset(3);
    let edit = ConditionEdit {
        id: "i001".into(),
        original_condition: "condition number 1".into(),
        improved_condition: "number of conditions".into(),
        justification: "x".into(),
        changed: true,
        prompt_hash: "h".into(),
        warning: None,
    };
    let out = apply_condition_edits(&d, &[edit]);
    assert_eq!(out.len(), 3);
    assert_eq!(out.instances[1].condition, "number of conditions");
    assert_eq!(out.instances[0], d.instances[0]);
}
