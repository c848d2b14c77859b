//! Exact train/test overlap detection over five overlap types.
//!
//! Every count is over *distinct* test-side items that also occur anywhere in
//! the training set. Strings are compared after trimming surrounding
//! whitespace; case is preserved.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapType {
    SentenceOnly,
    ConditionOnly,
    SentenceWithCondition,
    SentencePairUnordered,
    SentencePairWithCondition,
}

impl OverlapType {
    pub const ALL: [OverlapType; 5] = [
        OverlapType::SentenceOnly,
        OverlapType::ConditionOnly,
        OverlapType::SentenceWithCondition,
        OverlapType::SentencePairUnordered,
        OverlapType::SentencePairWithCondition,
    ];

    fn title(self) -> (&'static str, &'static str) {
        match self {
            OverlapType::SentenceOnly => (
                "Sentence only",
                "The same sentence appears, possibly with different conditions.",
            ),
            OverlapType::ConditionOnly => (
                "Condition only",
                "The same condition text appears, possibly with different sentences.",
            ),
            OverlapType::SentenceWithCondition => (
                "Single sentence with condition",
                "A single sentence-condition pair is repeated.",
            ),
            OverlapType::SentencePairUnordered => (
                "Sentence pair (order-insensitive)",
                "The same pair of sentences appears, regardless of order.",
            ),
            OverlapType::SentencePairWithCondition => (
                "Sentence pair with condition",
                "A full instance (two sentences with a condition) is duplicated.",
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStat {
    pub count: usize,
    /// Distinct test-side items of this type.
    pub test_distinct: usize,
    pub test_side_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub sentence_only: OverlapStat,
    pub condition_only: OverlapStat,
    pub sentence_with_condition: OverlapStat,
    pub sentence_pair_unordered: OverlapStat,
    pub sentence_pair_with_condition: OverlapStat,
}

impl OverlapReport {
    pub fn get(&self, kind: OverlapType) -> &OverlapStat {
        match kind {
            OverlapType::SentenceOnly => &self.sentence_only,
            OverlapType::ConditionOnly => &self.condition_only,
            OverlapType::SentenceWithCondition => &self.sentence_with_condition,
            OverlapType::SentencePairUnordered => &self.sentence_pair_unordered,
            OverlapType::SentencePairWithCondition => &self.sentence_pair_with_condition,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for kind in OverlapType::ALL {
            let (title, blurb) = kind.title();
            let stat = self.get(kind);
            let _ = writeln!(out, "* {title}");
            let _ = writeln!(out, "  {blurb}");
            let _ = writeln!(out, "  Overlap count: {}", stat.count);
            let _ = writeln!(
                out,
                "  Test side: {:.3}% overlap ({} of {} distinct)",
                100.0 * stat.test_side_fraction,
                stat.count,
                stat.test_distinct
            );
        }
        out
    }
}

/// Distinct keys of every overlap type drawn from one dataset.
#[derive(Default)]
struct Keys<'a> {
    sentences: HashSet<&'a str>,
    conditions: HashSet<&'a str>,
    sentence_conditions: HashSet<(&'a str, &'a str)>,
    pairs: HashSet<(&'a str, &'a str)>,
    pair_conditions: HashSet<((&'a str, &'a str), &'a str)>,
}

fn unordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl<'a> Keys<'a> {
    fn from_instances(instances: &'a [Instance]) -> Self {
        let mut keys = Keys::default();
        for inst in instances {
            let s1 = inst.sentence1.trim();
            let s2 = inst.sentence2.trim();
            let c = inst.condition.trim();
            keys.sentences.insert(s1);
            keys.sentences.insert(s2);
            keys.conditions.insert(c);
            keys.sentence_conditions.insert((s1, c));
            keys.sentence_conditions.insert((s2, c));
            let pair = unordered(s1, s2);
            keys.pairs.insert(pair);
            keys.pair_conditions.insert((pair, c));
        }
        keys
    }
}

fn stat<T: Eq + std::hash::Hash>(test: &HashSet<T>, train: &HashSet<T>) -> OverlapStat {
    let count = test.iter().filter(|k| train.contains(*k)).count();
    let test_distinct = test.len();
    OverlapStat {
        count,
        test_distinct,
        test_side_fraction: if test_distinct == 0 {
            0.0
        } else {
            count as f64 / test_distinct as f64
        },
    }
}

pub fn detect_overlaps(train: &Dataset, test: &Dataset) -> OverlapReport {
    let train_keys = Keys::from_instances(&train.instances);
    let test_keys = Keys::from_instances(&test.instances);
    OverlapReport {
        sentence_only: stat(&test_keys.sentences, &train_keys.sentences),
        condition_only: stat(&test_keys.conditions, &train_keys.conditions),
        sentence_with_condition: stat(
            &test_keys.sentence_conditions,
            &train_keys.sentence_conditions,
        ),
        sentence_pair_unordered: stat(&test_keys.pairs, &train_keys.pairs),
        sentence_pair_with_condition: stat(&test_keys.pair_conditions, &train_keys.pair_conditions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: &[(&str, &str, &str)]) -> Dataset {
        Dataset::new(
            "d",
            rows.iter()
                .enumerate()
                .map(|(i, (a, b, c))| Instance::new(i.to_string(), *a, *b, *c, None))
                .collect(),
        )
        .unwrap()
    }

    fn counts(r: &OverlapReport) -> [usize; 5] {
        OverlapType::ALL.map(|k| r.get(k).count)
    }

    #[test]
    fn minimal_sentence_overlap() {
        let r = detect_overlaps(&ds(&[("a", "b", "c")]), &ds(&[("a", "x", "y")]));
        assert_eq!(counts(&r), [1, 0, 0, 0, 0]);
        assert_eq!(r.sentence_only.test_side_fraction, 0.5);
    }

    #[test]
    fn disjoint_is_zero() {
        let r = detect_overlaps(&ds(&[("a", "b", "c")]), &ds(&[("d", "e", "f")]));
        assert_eq!(counts(&r), [0; 5]);
    }

    #[test]
    fn trim_but_not_case() {
        let r = detect_overlaps(&ds(&[("a ", "b", "Cond")]), &ds(&[(" a", "B", "cond")]));
        assert_eq!(counts(&r), [1, 0, 0, 0, 0]);
    }

    #[test]
    fn self_overlap_is_total() {
        let d = ds(&[("a", "b", "c"), ("b", "d", "e"), ("f", "g", "c")]);
        let r = detect_overlaps(&d, &d);
        for k in OverlapType::ALL {
            assert_eq!(r.get(k).test_side_fraction, 1.0);
        }
    }

    fn rows() -> impl Strategy<Value = Vec<(String, String, String)>> {
        let tok = prop::sample::select(vec!["a", "b", "c", "d", "e"]);
        prop::collection::vec(
            (tok.clone(), tok.clone(), tok)
                .prop_map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())),
            1..8,
        )
    }

    fn owned(rows: &[(String, String, String)]) -> Dataset {
        let r: Vec<(&str, &str, &str)> = rows
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        ds(&r)
    }

    proptest! {
        #[test]
        fn monotone_in_train(train in rows(), extra in rows(), test in rows()) {
            let before = detect_overlaps(&owned(&train), &owned(&test));
            let mut bigger = train.clone();
            bigger.extend(extra);
            let after = detect_overlaps(&owned(&bigger), &owned(&test));
            for k in OverlapType::ALL {
                prop_assert!(after.get(k).count >= before.get(k).count);
            }
        }

        #[test]
        fn slot_symmetry(train in rows(), test in rows()) {
            let swapped: Vec<_> = train.iter().map(|(a, b, c)| (b.clone(), a.clone(), c.clone())).collect();
            prop_assert_eq!(detect_overlaps(&owned(&train), &owned(&test)), detect_overlaps(&owned(&swapped), &owned(&test)));
        }

        #[test]
        fn fractions_bounded(train in rows(), test in rows()) {
            let r = detect_overlaps(&owned(&train), &owned(&test));
            for k in OverlapType::ALL {
                let f = r.get(k).test_side_fraction;
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
