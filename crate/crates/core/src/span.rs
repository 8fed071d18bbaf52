//! Turning raw locator output into valid turn ranges and summarizer inputs.

use serde::{Deserialize, Serialize};

use crate::ingest::{preprocess_text, GoldSpan, Meeting};
use crate::locator::SpanPrediction;

/// Default summarizer input budget in whitespace tokens.
pub const DEFAULT_TOKEN_BUDGET: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpanError {
    #[error("span prediction is not finite: ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("meeting has no turns")]
    EmptyMeeting,
    #[error("span ({start}, {end}) is not valid for a meeting of {length} turns")]
    OutOfRange {
        start: usize,
        end: usize,
        length: usize,
    },
    #[error("query is empty")]
    EmptyQuery,
    #[error("query alone needs {needed} tokens, budget is {budget}")]
    OversizedQuery { needed: usize, budget: usize },
}

/// Inclusive turn range with `start <= end < length` of its meeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteSpan {
    start: usize,
    end: usize,
}

impl DiscreteSpan {
    pub fn new(start: usize, end: usize, length: usize) -> Result<Self, SpanError> {
        if start <= end && end < length {
            Ok(Self { start, end })
        } else {
            Err(SpanError::OutOfRange { start, end, length })
        }
    }

    pub fn from_gold(gold: GoldSpan, length: usize) -> Result<Self, SpanError> {
        Self::new(gold.start, gold.end, length)
    }

    /// The whole meeting.
    pub fn full(length: usize) -> Result<Self, SpanError> {
        if length == 0 {
            return Err(SpanError::EmptyMeeting);
        }
        Ok(Self {
            start: 0,
            end: length - 1,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Rounds half-up, clamps into `[0, length - 1]`, then orders the pair.
/// The result is valid for any finite prediction.
pub fn discretize(pred: SpanPrediction, length: usize) -> Result<DiscreteSpan, SpanError> {
    if !pred.start_raw.is_finite() || !pred.end_raw.is_finite() {
        return Err(SpanError::NonFinite(pred.start_raw, pred.end_raw));
    }
    if length == 0 {
        return Err(SpanError::EmptyMeeting);
    }
    let last = (length - 1) as f64;
    let clamp = |x: f64| round_half_up(x).clamp(0.0, last) as usize;
    let (a, b) = (clamp(pred.start_raw), clamp(pred.end_raw));
    Ok(DiscreteSpan {
        start: a.min(b),
        end: a.max(b),
    })
}

/// Turns `start..=end`, each as `"<speaker>: <cleaned>"`, joined by spaces.
/// Speakers go through the same preprocessing as turn content.
pub fn extract_text(meeting: &Meeting, span: DiscreteSpan) -> Result<String, SpanError> {
    if span.end >= meeting.length() {
        return Err(SpanError::OutOfRange {
            start: span.start,
            end: span.end,
            length: meeting.length(),
        });
    }
    let parts: Vec<String> = meeting.turns[span.start..=span.end]
        .iter()
        .map(|t| format!("{}: {}", preprocess_text(&t.speaker), t.cleaned))
        .collect();
    Ok(parts.join(" "))
}

/// Mean absolute turn-index error `(|s − gs| + |e − ge|) / 2` against the
/// closest gold span. `None` when `golds` is empty.
pub fn index_error(span: DiscreteSpan, golds: &[GoldSpan]) -> Option<f64> {
    golds
        .iter()
        .map(|g| (span.start.abs_diff(g.start) + span.end.abs_diff(g.end)) as f64 / 2.0)
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizerInput {
    pub text: String,
    pub token_count: usize,
    pub truncated: bool,
    /// The query exactly as embedded in `text`.
    pub query: String,
}

impl SummarizerInput {
    /// Span portion of `text`, between the first and last `</s>`.
    pub fn span_text(&self) -> &str {
        let prefix = format!("<s> {} </s> ", self.query);
        self.text
            .strip_prefix(prefix.as_str())
            .and_then(|rest| rest.strip_suffix(" </s>"))
            .unwrap_or("")
    }
}

/// `"<s> " + query + " </s> " + span + " </s>"`, trimming span tokens from
/// the end until the whitespace token count fits `budget`.
pub fn build_summarizer_input(
    query: &str,
    span_text: &str,
    budget: usize,
) -> Result<SummarizerInput, SpanError> {
    let query_tokens = query.split_whitespace().count();
    if query_tokens == 0 {
        return Err(SpanError::EmptyQuery);
    }
    let fixed = query_tokens + 3;
    if fixed > budget {
        return Err(SpanError::OversizedQuery {
            needed: fixed,
            budget,
        });
    }
    let span_tokens: Vec<&str> = span_text.split_whitespace().collect();
    let room = budget - fixed;
    let (span, truncated) = if span_tokens.len() > room {
        (span_tokens[..room].join(" "), true)
    } else {
        (span_text.to_string(), false)
    };
    let text = format!("<s> {query} </s> {span} </s>");
    let token_count = text.split_whitespace().count();
    Ok(SummarizerInput {
        text,
        token_count,
        truncated,
        query: query.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Turn;
    use proptest::prelude::*;

    fn pred(s: f64, e: f64) -> SpanPrediction {
        SpanPrediction {
            start_raw: s,
            end_raw: e,
        }
    }

    fn span(s: usize, e: usize) -> (usize, usize) {
        (s, e)
    }

    fn as_pair(d: DiscreteSpan) -> (usize, usize) {
        (d.start(), d.end())
    }

    #[test]
    fn index_error_uses_closest_gold() {
        let s = DiscreteSpan::new(2, 6, 10).unwrap();
        assert_eq!(index_error(s, &[GoldSpan::new(2, 6)]), Some(0.0));
        assert_eq!(
            index_error(s, &[GoldSpan::new(0, 9), GoldSpan::new(3, 6)]),
            Some(0.5)
        );
        assert_eq!(index_error(s, &[]), None);
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(as_pair(discretize(pred(3.4, 7.8), 20).unwrap()), span(3, 8));
        assert_eq!(
            as_pair(discretize(pred(25.0, 30.0), 10).unwrap()),
            span(9, 9)
        );
        assert_eq!(as_pair(discretize(pred(7.6, 2.1), 20).unwrap()), span(2, 8));
        assert_eq!(as_pair(discretize(pred(2.5, 3.5), 20).unwrap()), span(3, 4));
        assert!(discretize(pred(f64::NAN, 1.0), 5).is_err());
        assert!(discretize(pred(1.0, f64::INFINITY), 5).is_err());
    }

    fn meeting(n: usize) -> Meeting {
        Meeting {
            id: "m".into(),
            turns: (0..n)
                .map(|i| Turn::new(format!("Speaker {i}"), format!("Line {i} {{vocalsound}}.")))
                .collect(),
            queries: vec![],
            topic_list: None,
        }
    }

    #[test]
    fn extraction() {
        let m = meeting(4);
        assert_eq!(
            extract_text(&m, DiscreteSpan::new(0, 0, 4).unwrap()).unwrap(),
            "speaker 0: line 0 ."
        );
        assert_eq!(
            extract_text(&m, DiscreteSpan::full(4).unwrap()).unwrap(),
            "speaker 0: line 0 . speaker 1: line 1 . speaker 2: line 2 . speaker 3: line 3 ."
        );
        assert!(DiscreteSpan::new(2, 4, 4).is_err());
        assert!(DiscreteSpan::new(3, 2, 4).is_err());
    }

    #[test]
    fn summarizer_input_short() {
        let inp = build_summarizer_input("what about x ?", "a: x is fine .", 1024).unwrap();
        assert_eq!(inp.text, "<s> what about x ? </s> a: x is fine . </s>");
        assert!(!inp.truncated);
        assert_eq!(inp.token_count, 4 + 5 + 3);
        assert_eq!(inp.span_text(), "a: x is fine .");
    }

    #[test]
    fn summarizer_input_truncates_span_tail() {
        let long: Vec<String> = (0..5000).map(|i| format!("w{i}")).collect();
        let inp = build_summarizer_input("summarize the budget", &long.join(" "), 1024).unwrap();
        assert_eq!(inp.token_count, 1024);
        assert!(inp.truncated);
        assert!(inp.text.starts_with("<s> summarize the budget </s> w0 w1 "));
        assert!(inp.text.ends_with(&format!("w{} </s>", 1024 - 3 - 3 - 1)));
    }

    #[test]
    fn summarizer_input_empty_span() {
        let inp = build_summarizer_input("q", "", 1024).unwrap();
        assert_eq!(inp.text, "<s> q </s>  </s>");
        assert_eq!(inp.token_count, 1 + 3);
        assert!(!inp.truncated);
    }

    #[test]
    fn summarizer_input_errors() {
        assert_eq!(
            build_summarizer_input("  ", "x", 10),
            Err(SpanError::EmptyQuery)
        );
        assert_eq!(
            build_summarizer_input("a b c d e f g h", "x", 10),
            Err(SpanError::OversizedQuery {
                needed: 11,
                budget: 10
            })
        );
    }

    proptest! {
        #[test]
        fn discretize_always_in_range(s in 0.0f64..1e6, e in 0.0f64..1e6, len in 1usize..500) {
            let d = discretize(pred(s, e), len).unwrap();
            prop_assert!(d.start() <= d.end() && d.end() < len);
        }

        #[test]
        fn discretize_idempotent(s in 0.0f64..1e4, e in 0.0f64..1e4, len in 1usize..300) {
            let d = discretize(pred(s, e), len).unwrap();
            let again = discretize(pred(d.start() as f64, d.end() as f64), len).unwrap();
            prop_assert_eq!(d, again);
        }

        #[test]
        fn input_within_budget(q in "[a-z]{1,5}( [a-z]{1,5}){0,5}", n in 0usize..300, budget in 10usize..200) {
            let span: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let inp = build_summarizer_input(&q, &span.join(" "), budget).unwrap();
            prop_assert!(inp.token_count <= budget);
            let prefix = format!("<s> {q} </s>");
            prop_assert!(inp.text.starts_with(&prefix));
            prop_assert!(inp.text.ends_with(" </s>"));
        }
    }
}
