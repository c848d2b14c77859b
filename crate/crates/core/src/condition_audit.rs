//! Deterministic condition analysis: category classification, imbalance
//! reporting, stopword stripping and phrasing checks.
//!
//! Nothing here rewrites a condition's meaning. Semantic repairs belong to
//! the LLM pass in [`crate::annotator`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::{Error, Result};

/// Function words dropped by [`strip_stopwords`]. Prepositions such as "of",
/// "in", "on" and "with" are kept.
pub const STOPWORDS: &[&str] = &[
    "the", "a", "an", "that", "this", "these", "those", "is", "are", "be", "being",
];

pub const DEFAULT_TOP_K: usize = 15;

/// Conditions longer than this many tokens are flagged as verbose.
pub const VERBOSE_TOKEN_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionCategory {
    NumberOf,
    TypeOf,
    ColorOf,
    Action,
    PositionOf,
    Other,
}

impl ConditionCategory {
    pub const ALL: [ConditionCategory; 6] = [
        ConditionCategory::NumberOf,
        ConditionCategory::TypeOf,
        ConditionCategory::ColorOf,
        ConditionCategory::Action,
        ConditionCategory::PositionOf,
        ConditionCategory::Other,
    ];

    /// Label in the "number of #" style used in category tables.
    pub fn display_label(self) -> &'static str {
        match self {
            ConditionCategory::NumberOf => "number of #",
            ConditionCategory::TypeOf => "type of #",
            ConditionCategory::ColorOf => "color of #",
            ConditionCategory::Action => "action",
            ConditionCategory::PositionOf => "position of #",
            ConditionCategory::Other => "other",
        }
    }
}

impl fmt::Display for ConditionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_label())
    }
}

fn is_terminal_punct(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn strip_pass(text: &str) -> String {
    let lowered = text.to_lowercase();
    let trimmed = lowered.trim_end_matches(|c: char| c.is_whitespace() || is_terminal_punct(c));
    let kept: Vec<&str> = trimmed
        .split_whitespace()
        .filter(|tok| !STOPWORDS.contains(tok))
        .collect();
    kept.join(" ")
}

/// Lowercases, drops terminal punctuation and stopword tokens, and collapses
/// whitespace. Idempotent.
pub fn strip_stopwords(condition: &str) -> Result<String> {
    let mut current = strip_pass(condition);
    loop {
        let next = strip_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(Error::Validation(format!(
            "condition {condition:?} consists only of stopwords"
        )));
    }
    Ok(current)
}

/// Alphanumeric tokens of the lowercased condition with stopwords removed.
fn content_tokens(condition: &str) -> Vec<String> {
    condition
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

fn contains_phrase(tokens: &[String], phrase: &[&str]) -> bool {
    tokens
        .windows(phrase.len())
        .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// Maps a condition onto its general category. Matching runs on the
/// stopword-free token sequence, so `classify(strip(x)) == classify(x)`.
pub fn classify_condition(condition: &str) -> ConditionCategory {
    let tokens = content_tokens(condition);
    if contains_phrase(&tokens, &["number", "of"]) {
        ConditionCategory::NumberOf
    } else if contains_phrase(&tokens, &["type", "of"]) {
        ConditionCategory::TypeOf
    } else if contains_phrase(&tokens, &["color", "of"]) {
        ConditionCategory::ColorOf
    } else if contains_phrase(&tokens, &["position", "of"]) {
        ConditionCategory::PositionOf
    } else if tokens.iter().any(|t| t == "action") {
        ConditionCategory::Action
    } else {
        ConditionCategory::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryHistogram {
    pub total: usize,
    pub counts: BTreeMap<ConditionCategory, usize>,
    pub percentages: BTreeMap<ConditionCategory, f64>,
    pub top_conditions: Vec<(String, usize)>,
}

fn percent_one_decimal(count: usize, total: usize) -> f64 {
    (1000.0 * count as f64 / total as f64).round() / 10.0
}

pub fn imbalance_report(dataset: &Dataset, top_k: usize) -> Result<CategoryHistogram> {
    if dataset.is_empty() {
        return Err(Error::Precondition(
            "imbalance report needs a non-empty dataset".into(),
        ));
    }
    let total = dataset.len();
    let mut counts: BTreeMap<ConditionCategory, usize> =
        ConditionCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let mut exact: HashMap<&str, usize> = HashMap::new();
    for inst in &dataset.instances {
        *counts
            .entry(classify_condition(&inst.condition))
            .or_default() += 1;
        *exact.entry(inst.condition.as_str()).or_default() += 1;
    }
    let percentages = counts
        .iter()
        .map(|(&c, &n)| (c, percent_one_decimal(n, total)))
        .collect();
    let mut top: Vec<(String, usize)> =
        exact.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(top_k);
    Ok(CategoryHistogram {
        total,
        counts,
        percentages,
        top_conditions: top,
    })
}

impl CategoryHistogram {
    /// Two plain-text tables: general condition types by frequency, then the
    /// most frequent exact condition strings.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut rows: Vec<_> = self
            .counts
            .iter()
            .filter(|(c, _)| **c != ConditionCategory::Other)
            .collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>11}",
            "Condition Type", "Count", "Percentage"
        );
        for (cat, n) in rows {
            let _ = writeln!(
                out,
                "{:<20} {:>8} {:>10.1}%",
                cat.display_label(),
                n,
                self.percentages[cat]
            );
        }
        let other = ConditionCategory::Other;
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>10.1}%",
            "(other)", self.counts[&other], self.percentages[&other]
        );
        let _ = writeln!(out);
        let width = self
            .top_conditions
            .iter()
            .map(|(c, _)| c.chars().count())
            .max()
            .unwrap_or(0)
            .max("Condition".len());
        let _ = writeln!(out, "{:<width$} {:>8}", "Condition", "Count");
        for (cond, n) in &self.top_conditions {
            let _ = writeln!(out, "{:<width$} {:>8}", cond, n);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhrasingIssue {
    /// Written as a full sentence or clause rather than a noun phrase.
    InconsistentPhrasing,
    Verbose,
    LeadingArticle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhrasingFlag {
    pub id: String,
    pub issue: PhrasingIssue,
}

const CLAUSE_OPENERS: &[&str] = &[
    "what", "where", "when", "who", "whom", "which", "why", "how", "if", "whether",
];
const FINITE_VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "has", "have", "had", "do", "does", "did", "can",
    "will", "move", "moves",
];
const WORDY_PHRASES: &[&[&str]] = &[
    &["the", "fact", "that"],
    &["being"],
    &["whether"],
    &["there", "is"],
    &["there", "are"],
    &["in", "which"],
    &["if", "a"],
    &["if", "the"],
];

fn phrasing_issues(condition: &str) -> Vec<PhrasingIssue> {
    let trimmed = condition.trim();
    let raw_tokens: Vec<String> = trimmed
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !(c.is_alphanumeric() || c == '\''))
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect();
    let mut issues = Vec::new();

    let capitalised = trimmed.chars().next().is_some_and(char::is_uppercase);
    let terminal = trimmed.ends_with('.');
    let has_verb = raw_tokens
        .iter()
        .any(|t| FINITE_VERBS.contains(&t.as_str()) || t.ends_with("'re") || t.ends_with("n't"));
    let clause_opener = raw_tokens
        .first()
        .is_some_and(|t| CLAUSE_OPENERS.contains(&t.as_str()));
    if (capitalised && terminal && has_verb) || clause_opener {
        issues.push(PhrasingIssue::InconsistentPhrasing);
    }

    let wordy = WORDY_PHRASES
        .iter()
        .any(|p| contains_phrase(&raw_tokens, p));
    if raw_tokens.len() > VERBOSE_TOKEN_LIMIT || wordy {
        issues.push(PhrasingIssue::Verbose);
    }

    if raw_tokens
        .first()
        .is_some_and(|t| matches!(t.as_str(), "the" | "a" | "an"))
    {
        issues.push(PhrasingIssue::LeadingArticle);
    }
    issues
}

/// Advisory flags for conditions that depart from the short noun-phrase style.
pub fn phrasing_consistency_check(dataset: &Dataset) -> Vec<PhrasingFlag> {
    dataset
        .instances
        .iter()
        .flat_map(|inst| {
            phrasing_issues(&inst.condition)
                .into_iter()
                .map(|issue| PhrasingFlag {
                    id: inst.id.clone(),
                    issue,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use proptest::prelude::*;

    fn dataset(conditions: &[&str]) -> Dataset {
        Dataset::new(
            "t",
            conditions
                .iter()
                .enumerate()
                .map(|(i, c)| Instance::new(i.to_string(), "s1", "s2", *c, Some(3)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn classifies_examples() {
        assert_eq!(
            classify_condition("The number of people."),
            ConditionCategory::NumberOf
        );
        assert_eq!(
            classify_condition("color of shirts"),
            ConditionCategory::ColorOf
        );
        assert_eq!(
            classify_condition("The weather today"),
            ConditionCategory::Other
        );
        assert_eq!(classify_condition("The action."), ConditionCategory::Action);
        assert_eq!(
            classify_condition("The type of animal."),
            ConditionCategory::TypeOf
        );
        assert_eq!(
            classify_condition("Position of the ball"),
            ConditionCategory::PositionOf
        );
        assert_eq!(classify_condition("transaction"), ConditionCategory::Other);
        // precedence: number_of wins over type_of
        assert_eq!(
            classify_condition("type of number of"),
            ConditionCategory::NumberOf
        );
    }

    #[test]
    fn imbalance_small() {
        let h = imbalance_report(
            &dataset(&["number of cats", "number of dogs", "the action"]),
            15,
        )
        .unwrap();
        assert_eq!(h.counts[&ConditionCategory::NumberOf], 2);
        assert_eq!(h.percentages[&ConditionCategory::NumberOf], 66.7);
        assert_eq!(h.percentages[&ConditionCategory::Action], 33.3);
        assert_eq!(h.counts.values().sum::<usize>(), 3);
        assert_eq!(h.top_conditions.len(), 3);
    }

    #[test]
    fn imbalance_top_conditions_sorted() {
        let h = imbalance_report(
            &dataset(&[
                "The number of people.",
                "The sport.",
                "The number of people.",
                "The animal.",
                "The sport.",
                "The number of people.",
            ]),
            2,
        )
        .unwrap();
        assert_eq!(
            h.top_conditions,
            vec![
                ("The number of people.".to_string(), 3),
                ("The sport.".to_string(), 2)
            ]
        );
        assert!(h.render_text().contains("number of #"));
    }

    #[test]
    fn imbalance_empty_errors() {
        assert!(imbalance_report(&Dataset::new("e", vec![]).unwrap(), 15).is_err());
    }

    #[test]
    fn strips_stopwords() {
        assert_eq!(
            strip_stopwords("The the size of the room.").unwrap(),
            "size of room"
        );
        assert_eq!(
            strip_stopwords("number of people").unwrap(),
            "number of people"
        );
        assert_eq!(
            strip_stopwords("The food with plate.").unwrap(),
            "food with plate"
        );
        assert_eq!(
            strip_stopwords("Specific areas of the home.").unwrap(),
            "specific areas of home"
        );
        assert!(strip_stopwords("The.").is_err());
        assert!(strip_stopwords("the a an").is_err());
    }

    #[test]
    fn phrasing_flags() {
        let issues = phrasing_issues("The fact that they're both girls.");
        assert!(issues.contains(&PhrasingIssue::Verbose), "{issues:?}");
        assert!(phrasing_issues("type of animal").is_empty());
        assert!(phrasing_issues("Where the dog is visible from.")
            .contains(&PhrasingIssue::InconsistentPhrasing));
        assert_eq!(
            phrasing_issues("The number of people."),
            vec![PhrasingIssue::LeadingArticle]
        );
        assert!(
            phrasing_issues("String instrument being played.").contains(&PhrasingIssue::Verbose)
        );
        let long = "color of the shirt worn by the man standing near the red car";
        assert!(phrasing_issues(long).contains(&PhrasingIssue::Verbose));

        let flags = phrasing_consistency_check(&dataset(&["type of animal", "The animal."]));
        assert_eq!(
            flags,
            vec![PhrasingFlag {
                id: "1".into(),
                issue: PhrasingIssue::LeadingArticle
            }]
        );
    }

    proptest! {
        #[test]
        fn strip_is_idempotent(s in "[A-Za-z .!?,']{1,40}") {
            if let Ok(once) = strip_stopwords(&s) {
                prop_assert_eq!(strip_stopwords(&once).unwrap(), once);
            }
        }

        #[test]
        fn strip_preserves_category(
            words in prop::collection::vec(
                prop::sample::select(vec!["The", "the", "a", "number", "of", "type", "color", "position",
                    "action", "people", "is", "that", "dog", "An", "shirt."]),
                1..10)
        ) {
            let s = words.join(" ");
            let cat = classify_condition(&s);
            if cat != ConditionCategory::Other {
                let stripped = strip_stopwords(&s).unwrap();
                prop_assert_eq!(classify_condition(&stripped), cat);
            }
        }

        #[test]
        fn histogram_partitions(conds in prop::collection::vec("[a-z ]{0,12}[a-z]", 1..40)) {
            let refs: Vec<&str> = conds.iter().map(String::as_str).collect();
            let d = dataset(&refs);
            let h = imbalance_report(&d, 15).unwrap();
            prop_assert_eq!(h.counts.values().sum::<usize>(), d.len());
            for (c, n) in &h.counts {
                prop_assert_eq!(h.percentages[c], percent_one_decimal(*n, d.len()));
            }
        }
    }
}
