//! ROUGE-1, ROUGE-2 and ROUGE-L (sequence-level LCS).
//!
//! No stemming, no stopword removal: tokens are lowercase alphanumeric runs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::numfmt::round_half_up;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let ratio = |den: usize| {
            if den == 0 {
                0.0
            } else {
                overlap as f64 / den as f64
            }
        };
        Self::from_pr(ratio(candidate), ratio(reference))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub candidate_id: String,
    pub reference_id: String,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

/// One exported row: `metric, precision, recall, f1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        [
            ("rouge-1", self.r1),
            ("rouge-2", self.r2),
            ("rouge-l", self.rl),
        ]
        .into_iter()
        .map(|(metric, s)| MetricRow {
            metric: metric.to_string(),
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        })
        .collect()
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Lowercase, split on maximal runs of non-alphanumeric characters.
pub fn metric_tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |m: &HashMap<Vec<&str>, usize>| m.values().sum::<usize>();
    RougeScore::from_counts(overlap, total(&cand), total(&refs))
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_length<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    RougeScore::from_counts(
        lcs_length(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn score(
    candidate_id: &str,
    candidate: &str,
    reference_id: &str,
    reference: &str,
) -> RougeReport {
    let c = metric_tokenize(candidate);
    let r = metric_tokenize(reference);
    RougeReport {
        candidate_id: candidate_id.to_string(),
        reference_id: reference_id.to_string(),
        r1: rouge_n(&c, &r, 1),
        r2: rouge_n(&c, &r, 2),
        rl: rouge_l(&c, &r),
    }
}

/// Mean F1 per metric, ×100, rounded half-up to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

impl AggregateScores {
    pub fn from_means(r1: f64, r2: f64, rl: f64) -> Self {
        Self {
            r1: round_half_up(r1, 2),
            r2: round_half_up(r2, 2),
            rl: round_half_up(rl, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cannot aggregate an empty set of reports")]
pub struct EmptyAggregate;

pub fn aggregate(reports: &[RougeReport]) -> Result<AggregateScores, EmptyAggregate> {
    if reports.is_empty() {
        return Err(EmptyAggregate);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&RougeReport) -> f64| reports.iter().map(f).sum::<f64>() / n * 100.0;
    Ok(AggregateScores::from_means(
        mean(|r| r.r1.f1),
        mean(|r| r.r2.f1),
        mean(|r| r.rl.f1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(metric_tokenize("The cat, sat!"), vec!["the", "cat", "sat"]);
        assert!(metric_tokenize("").is_empty());
        assert_eq!(metric_tokenize("covid-19"), vec!["covid", "19"]);
    }

    #[test]
    fn rouge_n_examples() {
        let x = toks("a b c d");
        assert_eq!(
            rouge_n(&x, &x, 1),
            RougeScore {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(rouge_n(&x, &x, 2).f1, 1.0);
        assert_eq!(
            rouge_n(&toks("a b"), &toks("c d"), 1),
            RougeScore::default()
        );

        let s = rouge_n(
            &toks("the cat sat on the mat"),
            &toks("the cat on the mat"),
            1,
        );
        assert!((s.precision - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_n_clips_repeats() {
        let s = rouge_n(&toks("the the the"), &toks("the cat"), 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_examples() {
        let x = toks("a b c");
        assert_eq!(rouge_l(&x, &x).f1, 1.0);
        let s = rouge_l(&toks("a b c d"), &toks("a c b d"));
        assert_eq!((s.precision, s.recall, s.f1), (0.75, 0.75, 0.75));
        assert_eq!(rouge_l(&toks(""), &x), RougeScore::default());
        assert_eq!(rouge_l(&x, &toks("")), RougeScore::default());
    }

    #[test]
    fn aggregate_examples() {
        let report = |f: f64| RougeReport {
            candidate_id: "c".into(),
            reference_id: "r".into(),
            r1: RougeScore {
                precision: f,
                recall: f,
                f1: f,
            },
            r2: RougeScore {
                precision: f,
                recall: f,
                f1: f,
            },
            rl: RougeScore {
                precision: f,
                recall: f,
                f1: f,
            },
        };
        assert_eq!(
            aggregate(&[report(0.5)]).unwrap(),
            AggregateScores {
                r1: 50.0,
                r2: 50.0,
                rl: 50.0
            }
        );
        assert_eq!(aggregate(&[report(0.2), report(0.4)]).unwrap().r1, 30.0);
        assert_eq!(aggregate(&[]), Err(EmptyAggregate));
        let means = AggregateScores::from_means(32.18, 8.48, 28.56);
        assert_eq!(
            format!("{:.2} {:.2} {:.2}", means.r1, means.r2, means.rl),
            "32.18 8.48 28.56"
        );
    }

    #[test]
    fn csv_export_columns() {
        let r = score("c", "the cat sat", "r", "the cat");
        let csv = r.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("metric,precision,recall,f1"));
        assert!(lines.next().unwrap().starts_with("rouge-1,"));
    }

    proptest! {
        #[test]
        fn f1_bounds(a in proptest::collection::vec(0u8..6, 0..15), b in proptest::collection::vec(0u8..6, 0..15)) {
            let a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            let b: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            for s in [rouge_n(&a, &b, 1), rouge_n(&a, &b, 2), rouge_l(&a, &b)] {
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(s.f1 <= 1f64.min(2.0 * s.precision.min(s.recall)) + 1e-15);
            }
            let (ab, ba) = (rouge_l(&a, &b), rouge_l(&b, &a));
            prop_assert_eq!(ab.precision, ba.recall);
        }

        #[test]
        fn self_score_is_one(a in proptest::collection::vec("[a-e]", 2..12)) {
            prop_assert_eq!(rouge_n(&a, &a, 1).f1, 1.0);
            prop_assert_eq!(rouge_n(&a, &a, 2).f1, 1.0);
            prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
        }

        #[test]
        fn appending_reference_token_keeps_recall(c in proptest::collection::vec("[a-e]", 0..10), r in proptest::collection::vec("[a-e]", 1..10), pick in 0usize..10) {
            let before = rouge_n(&c, &r, 1).recall;
            let mut extended = c.clone();
            extended.push(r[pick % r.len()].clone());
            prop_assert!(rouge_n(&extended, &r, 1).recall >= before);
        }
    }
}
