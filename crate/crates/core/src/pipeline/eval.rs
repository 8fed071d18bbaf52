//! Gold-span, located-span and random-span evaluation runs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::ResultRow;
use super::PipelineError;
use crate::embedding::{embed_query, embed_transcript, EmbeddingBackend, UtteranceMatrix};
use crate::ingest::{Corpus, GoldSpan, Meeting, QueryKind, QueryRecord};
use crate::locator::{locator_forward, LocatorParams};
use crate::rouge::{self, RougeReport};
use crate::span::{
    build_summarizer_input, discretize, extract_text, index_error, DiscreteSpan,
    DEFAULT_TOKEN_BUDGET,
};
use crate::summarizer::Summarizer;

pub const GOLD_LABEL: &str = "gold";
pub const GENERAL_LABEL: &str = "whole meeting (general)";
pub const RANDOM_LABEL: &str = "random";

pub fn located_label(backend_name: &str) -> String {
    format!("located ({backend_name})")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub token_budget: usize,
    /// Fraction of failed (query, summarizer) attempts above which a run aborts.
    pub max_failure_rate: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_failure_rate: 0.1,
        }
    }
}

/// Audit record for one (query, summarizer) attempt that succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryArtifact {
    pub span_source: String,
    pub summarizer: String,
    pub meeting_id: String,
    pub query_index: usize,
    pub query: String,
    pub spans: Vec<[usize; 2]>,
    pub span_text: String,
    pub summarizer_input: String,
    pub input_truncated: bool,
    pub summary: String,
    pub reference_summary: String,
    pub scores: RougeReport,
    /// Turn-index error against the closest gold span (specific queries).
    pub index_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub span_source: String,
    pub summarizer: String,
    pub meeting_id: String,
    pub query_index: usize,
    pub cause: String,
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRun {
    pub rows: Vec<ResultRow>,
    pub artifacts: Vec<QueryArtifact>,
    pub failures: Vec<QueryFailure>,
}

impl EvalRun {
    pub fn merge(&mut self, other: EvalRun) {
        self.rows.extend(other.rows);
        self.artifacts.extend(other.artifacts);
        self.failures.extend(other.failures);
        self.sort();
    }

    fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (&a.span_source, &a.summarizer).cmp(&(&b.span_source, &b.summarizer)));
        let key = |a: &QueryArtifact| {
            (
                a.span_source.clone(),
                a.summarizer.clone(),
                a.meeting_id.clone(),
                a.query_index,
            )
        };
        self.artifacts.sort_by_key(key);
        self.failures.sort_by(|a, b| {
            (&a.span_source, &a.summarizer, &a.meeting_id, a.query_index).cmp(&(
                &b.span_source,
                &b.summarizer,
                &b.meeting_id,
                b.query_index,
            ))
        });
    }

    /// Mean turn-index error over artifacts of one span source and summarizer.
    pub fn mean_index_error(&self, span_source: &str) -> Option<f64> {
        let first = self
            .artifacts
            .iter()
            .find(|a| a.span_source == span_source)?
            .summarizer
            .clone();
        let errs: Vec<f64> = self
            .artifacts
            .iter()
            .filter(|a| a.span_source == span_source && a.summarizer == first)
            .filter_map(|a| a.index_error)
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }
}

/// Span choice for one query, with a failure message on error.
struct Selection {
    spans: Vec<DiscreteSpan>,
    index_error: Option<f64>,
}

struct Failure {
    cause: String,
    transport: bool,
}

impl Failure {
    fn new(cause: impl ToString) -> Self {
        Self {
            cause: cause.to_string(),
            transport: false,
        }
    }
}

fn check_nonempty(corpus: &Corpus) -> Result<(), PipelineError> {
    if corpus.meetings.is_empty() || corpus.query_count() == 0 {
        return Err(PipelineError::Contract(format!(
            "{} split has no queries to evaluate",
            corpus.split
        )));
    }
    Ok(())
}

/// Runs every selected query through span selection, extraction and each
/// summarizer, scoring against the reference summary.
fn run_block<F>(
    corpus: &Corpus,
    label: &str,
    kind: QueryKind,
    summarizers: &[&dyn Summarizer],
    opts: &EvalOptions,
    mut select: F,
) -> EvalRun
where
    F: FnMut(&Meeting, usize, &QueryRecord) -> Result<Selection, Failure>,
{
    let mut run = EvalRun::default();
    let mut reports: BTreeMap<String, Vec<RougeReport>> = BTreeMap::new();
    for meeting in &corpus.meetings {
        for (qi, query) in meeting
            .queries
            .iter()
            .enumerate()
            .filter(|(_, q)| q.kind == kind)
        {
            let fail_all = |run: &mut EvalRun, f: &Failure| {
                for s in summarizers {
                    run.failures.push(QueryFailure {
                        span_source: label.to_string(),
                        summarizer: s.name().to_string(),
                        meeting_id: meeting.id.clone(),
                        query_index: qi,
                        cause: f.cause.clone(),
                        transport: f.transport,
                    });
                }
            };
            let prepared = select(meeting, qi, query).and_then(|sel| {
                let mut parts = Vec::with_capacity(sel.spans.len());
                for s in &sel.spans {
                    parts.push(extract_text(meeting, *s).map_err(Failure::new)?);
                }
                let span_text = parts.join(" ");
                let input = build_summarizer_input(&query.text, &span_text, opts.token_budget)
                    .map_err(Failure::new)?;
                Ok((sel, span_text, input))
            });
            let (sel, span_text, input) = match prepared {
                Ok(p) => p,
                Err(f) => {
                    log::warn!("{label}: {} query {qi}: {}", meeting.id, f.cause);
                    fail_all(&mut run, &f);
                    continue;
                }
            };
            for s in summarizers {
                match s.summarize(&input) {
                    Ok(result) => {
                        let query_id = format!("{}#{qi}", meeting.id);
                        let scores = rouge::score(
                            &query_id,
                            &result.summary,
                            &query_id,
                            &query.reference_summary,
                        );
                        reports
                            .entry(s.name().to_string())
                            .or_default()
                            .push(scores.clone());
                        run.artifacts.push(QueryArtifact {
                            span_source: label.to_string(),
                            summarizer: s.name().to_string(),
                            meeting_id: meeting.id.clone(),
                            query_index: qi,
                            query: query.text.clone(),
                            spans: sel.spans.iter().map(|d| [d.start(), d.end()]).collect(),
                            span_text: span_text.clone(),
                            summarizer_input: input.text.clone(),
                            input_truncated: result.input_truncated,
                            summary: result.summary,
                            reference_summary: query.reference_summary.clone(),
                            scores,
                            index_error: sel.index_error,
                        });
                    }
                    Err(e) => {
                        log::warn!("{label}/{}: {} query {qi}: {e}", s.name(), meeting.id);
                        run.failures.push(QueryFailure {
                            span_source: label.to_string(),
                            summarizer: s.name().to_string(),
                            meeting_id: meeting.id.clone(),
                            query_index: qi,
                            cause: e.to_string(),
                            transport: e.is_transport(),
                        });
                    }
                }
            }
        }
    }
    for (name, reps) in reports {
        let agg = rouge::aggregate(&reps).expect("non-empty by construction");
        run.rows
            .push(ResultRow::new(label, &name, agg.r1, agg.r2, agg.rl));
    }
    run.sort();
    run
}

fn enforce_failure_budget(run: &EvalRun, opts: &EvalOptions) -> Result<(), PipelineError> {
    let failed = run.failures.len();
    let total = failed + run.artifacts.len();
    if total == 0 {
        return Ok(());
    }
    if failed as f64 > opts.max_failure_rate * total as f64 {
        let mut causes: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &run.failures {
            *causes.entry(f.cause.as_str()).or_default() += 1;
        }
        let summary = causes
            .iter()
            .map(|(c, n)| format!("{n}× {c}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(PipelineError::TooManyFailures {
            failed,
            total,
            summary,
            transport: run.failures.iter().all(|f| f.transport),
        });
    }
    Ok(())
}

fn gold_selection(meeting: &Meeting, query: &QueryRecord) -> Result<Selection, Failure> {
    let mut golds: Vec<GoldSpan> = query.gold_spans.clone();
    golds.sort_by_key(|g| (g.start, g.end));
    let spans = golds
        .iter()
        .map(|g| DiscreteSpan::from_gold(*g, meeting.length()).map_err(Failure::new))
        .collect::<Result<Vec<_>, _>>()?;
    if spans.is_empty() {
        return Err(Failure::new("specific query without gold spans"));
    }
    Ok(Selection {
        spans,
        index_error: Some(0.0),
    })
}

/// Summarizes each specific query's gold-span text (all gold spans in turn
/// order) and each general query's whole meeting, in separate blocks.
pub fn run_gold_eval(
    corpus: &Corpus,
    summarizers: &[&dyn Summarizer],
    opts: &EvalOptions,
) -> Result<EvalRun, PipelineError> {
    check_nonempty(corpus)?;
    let mut run = run_block(
        corpus,
        GOLD_LABEL,
        QueryKind::Specific,
        summarizers,
        opts,
        |m, _, q| gold_selection(m, q),
    );
    let general = run_block(
        corpus,
        GENERAL_LABEL,
        QueryKind::General,
        summarizers,
        opts,
        |m, _, _| {
            DiscreteSpan::full(m.length())
                .map(|s| Selection {
                    spans: vec![s],
                    index_error: None,
                })
                .map_err(Failure::new)
        },
    );
    run.merge(general);
    enforce_failure_budget(&run, opts)?;
    Ok(run)
}

/// Locates a span for every specific query, then summarizes and scores it.
pub fn run_located_eval(
    corpus: &Corpus,
    backend: &dyn EmbeddingBackend,
    params: &LocatorParams,
    summarizers: &[&dyn Summarizer],
    opts: &EvalOptions,
) -> Result<EvalRun, PipelineError> {
    check_nonempty(corpus)?;
    if params.in_dim() != backend.descriptor().dimension {
        return Err(PipelineError::Config(format!(
            "locator expects {}-dimensional embeddings, backend {} produces {}",
            params.in_dim(),
            backend.descriptor().name,
            backend.descriptor().dimension
        )));
    }
    let label = located_label(&backend.descriptor().name);
    let mut transcripts: BTreeMap<String, Result<UtteranceMatrix, (String, bool)>> =
        BTreeMap::new();
    let mut invariant: Option<String> = None;
    let run = run_block(
        corpus,
        &label,
        QueryKind::Specific,
        summarizers,
        opts,
        |meeting, qi, query| {
            let transcript = transcripts.entry(meeting.id.clone()).or_insert_with(|| {
                embed_transcript(backend, meeting).map_err(|e| (e.to_string(), e.is_transport()))
            });
            let transcript = match transcript {
                Ok(t) => t,
                Err((cause, transport)) => {
                    return Err(Failure {
                        cause: cause.clone(),
                        transport: *transport,
                    })
                }
            };
            let q = embed_query(backend, &query.text).map_err(|e| Failure {
                cause: e.to_string(),
                transport: e.is_transport(),
            })?;
            let pred = locator_forward(params, &transcript.0, &q.rows, meeting.length())
                .map_err(Failure::new)?;
            let span = discretize(pred, meeting.length()).map_err(Failure::new)?;
            // re-check at the boundary; a failure here is a bug, not a data error
            if let Err(e) = DiscreteSpan::new(span.start(), span.end(), meeting.length()) {
                invariant.get_or_insert(format!("{} query {qi}: {e}", meeting.id));
                return Err(Failure::new(e));
            }
            Ok(Selection {
                spans: vec![span],
                index_error: index_error(span, &query.gold_spans),
            })
        },
    );
    if let Some(msg) = invariant {
        return Err(PipelineError::Invariant(msg));
    }
    enforce_failure_budget(&run, opts)?;
    Ok(run)
}

/// Uniformly random spans for every specific query, seeded.
pub fn run_random_eval(
    corpus: &Corpus,
    summarizers: &[&dyn Summarizer],
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalRun, PipelineError> {
    check_nonempty(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = run_block(
        corpus,
        RANDOM_LABEL,
        QueryKind::Specific,
        summarizers,
        opts,
        |meeting, _, query| {
            let l = meeting.length();
            if l == 0 {
                return Err(Failure::new("meeting has no turns"));
            }
            let (a, b) = (rng.gen_range(0..l), rng.gen_range(0..l));
            let span = DiscreteSpan::new(a.min(b), a.max(b), l).map_err(Failure::new)?;
            Ok(Selection {
                spans: vec![span],
                index_error: index_error(span, &query.gold_spans),
            })
        },
    );
    enforce_failure_budget(&run, opts)?;
    Ok(run)
}
