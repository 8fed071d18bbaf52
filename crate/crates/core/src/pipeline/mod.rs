//! End-to-end evaluation: gold spans first, then located spans, summarized
//! and scored per query, aggregated into report tables.

pub mod config;
pub mod eval;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, EmbeddingSpec, ExperimentConfig, SpanSource, SummarizerSpec};
pub use eval::{
    located_label, run_gold_eval, run_located_eval, run_random_eval, EvalOptions, EvalRun,
    QueryArtifact, QueryFailure, GENERAL_LABEL, GOLD_LABEL, RANDOM_LABEL,
};
pub use report::{
    apply_improvements, build_report, improvement_percent, parse_csv, render_report, MeanRow,
    Report, ReportError, ReportFormat, ResultRow,
};

use crate::embedding::{
    BackendDescriptor, EmbedError, EmbeddingBackend, EmbeddingCache, HashBackend, RemoteBackend,
};
use crate::ingest::{load_split_dir, validate_corpus, Corpus, IngestError, Split, Violation};
use crate::locator::{self, load_checkpoint, LocatorError, LocatorParams};
use crate::sidecar::{SidecarClient, SidecarError};
use crate::summarizer::{LeadK, RemoteSummarizer, SummarizeError, Summarizer};

/// Process exit codes.
pub mod exit_code {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const TRANSPORT: i32 = 4;
    pub const DIVERGENCE: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{} validation violation(s), first: {}", .0.len(), .0[0])]
    Validation(Vec<Violation>),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error(transparent)]
    Locator(#[from] LocatorError),
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
    #[error("{failed} of {total} query evaluations failed: {summary}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        summary: String,
        transport: bool,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.0)
    }
}

fn sidecar_code(e: &SidecarError) -> i32 {
    match e {
        SidecarError::Transport { .. } | SidecarError::Status { .. } => exit_code::TRANSPORT,
        SidecarError::Protocol(_) => exit_code::OTHER,
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => exit_code::CONFIG,
            PipelineError::Ingest(IngestError::Io { .. }) => exit_code::OTHER,
            PipelineError::Ingest(_)
            | PipelineError::Validation(_)
            | PipelineError::Contract(_) => exit_code::DATA,
            PipelineError::Sidecar(e) => sidecar_code(e),
            PipelineError::Embed(EmbedError::Sidecar(e)) => sidecar_code(e),
            PipelineError::Embed(e) if e.is_transport() => exit_code::TRANSPORT,
            PipelineError::Summarize(SummarizeError::Sidecar(e)) => sidecar_code(e),
            PipelineError::Summarize(SummarizeError::Config(_)) => exit_code::CONFIG,
            PipelineError::Locator(LocatorError::Divergence { .. }) => exit_code::DIVERGENCE,
            PipelineError::Locator(LocatorError::Config(_)) => exit_code::CONFIG,
            PipelineError::Locator(LocatorError::Embed(e)) if e.is_transport() => {
                exit_code::TRANSPORT
            }
            PipelineError::Locator(LocatorError::EmptyTrainingSet) => exit_code::DATA,
            PipelineError::TooManyFailures {
                transport: true, ..
            } => exit_code::TRANSPORT,
            PipelineError::Report(ReportError::UnknownFormat(_)) => exit_code::CONFIG,
            _ => exit_code::OTHER,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a split directory and fails on any invariant violation.
pub fn load_validated(dir: &Path, split: Split) -> Result<Corpus, PipelineError> {
    let corpus = load_split_dir(dir, split)?;
    let violations = validate_corpus(&corpus);
    if !violations.is_empty() {
        return Err(PipelineError::Validation(violations));
    }
    Ok(corpus)
}

pub fn build_backend(
    config: &ExperimentConfig,
) -> Result<Box<dyn EmbeddingBackend>, PipelineError> {
    match &config.embedding {
        EmbeddingSpec::Hash { dim, seed } => Ok(Box::new(HashBackend::new(*dim, *seed))),
        EmbeddingSpec::Remote { model } => {
            let cache = config
                .cache_dir
                .as_ref()
                .map(|d| EmbeddingCache::new(d.join("embeddings")));
            Ok(Box::new(RemoteBackend::connect(
                SidecarClient::new(&config.service_url),
                model,
                cache,
            )?))
        }
    }
}

pub fn build_summarizers(
    config: &ExperimentConfig,
) -> Result<Vec<Box<dyn Summarizer>>, PipelineError> {
    config
        .summarizers
        .iter()
        .map(|spec| -> Result<Box<dyn Summarizer>, PipelineError> {
            match spec {
                SummarizerSpec::Lead(k) => Ok(Box::new(LeadK::new(*k)?)),
                SummarizerSpec::Remote { model } => Ok(Box::new(RemoteSummarizer::connect(
                    SidecarClient::new(&config.service_url),
                    model,
                    config.cache_dir.as_ref().map(|d| d.join("summaries")),
                )?)),
            }
        })
        .collect()
}

/// Loads the configured checkpoint, checking it was trained for `backend`,
/// or trains one on `train_dir`.
pub fn obtain_locator(
    config: &ExperimentConfig,
    backend: &dyn EmbeddingBackend,
) -> Result<LocatorParams, PipelineError> {
    if let Some(path) = &config.checkpoint {
        let (params, sidecar) = load_checkpoint(path)?;
        check_checkpoint_backend(
            &params,
            sidecar.and_then(|s| s.backend).as_ref(),
            backend.descriptor(),
        )?;
        return Ok(params);
    }
    let dir = config
        .train_dir
        .as_ref()
        .ok_or_else(|| PipelineError::Config("no checkpoint and no train_dir".into()))?;
    let corpus = load_validated(dir, Split::Train)?;
    let (params, log) = locator::train(&corpus, backend, &config.locator)?;
    log::info!(
        "trained locator on {} queries, final loss {:.6}",
        log.examples,
        log.final_loss().unwrap_or(f64::NAN)
    );
    Ok(params)
}

pub fn check_checkpoint_backend(
    params: &LocatorParams,
    trained_with: Option<&BackendDescriptor>,
    backend: &BackendDescriptor,
) -> Result<(), PipelineError> {
    if params.in_dim() != backend.dimension {
        return Err(PipelineError::Config(format!(
            "checkpoint expects {}-dimensional embeddings, backend {} produces {}",
            params.in_dim(),
            backend.name,
            backend.dimension
        )));
    }
    if let Some(t) = trained_with {
        if t.name != backend.name {
            log::warn!(
                "checkpoint was trained with backend {}, evaluating with {}",
                t.name,
                backend.name
            );
        }
    }
    Ok(())
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub run: EvalRun,
    pub written: Vec<PathBuf>,
}

pub const ARTIFACTS_FILE: &str = "queries.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const REPORT_STEM: &str = "report";

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Writes reports in every configured format plus per-query artifacts.
pub fn write_outputs(
    config: &ExperimentConfig,
    report: &Report,
    run: &EvalRun,
) -> Result<Vec<PathBuf>, PipelineError> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for format in &config.formats {
        let path = dir.join(format!("{REPORT_STEM}.{}", format.extension()));
        std::fs::write(&path, render_report(report, *format)?).map_err(io_err(&path))?;
        written.push(path);
    }
    let artifacts = dir.join(ARTIFACTS_FILE);
    write_jsonl(&artifacts, &run.artifacts)?;
    written.push(artifacts);
    let failures = dir.join(FAILURES_FILE);
    if run.failures.is_empty() {
        let _ = std::fs::remove_file(&failures);
    } else {
        write_jsonl(&failures, &run.failures)?;
        written.push(failures);
    }
    Ok(written)
}

/// Runs the configured evaluation on the test split and writes outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, PipelineError> {
    config.validate_for_evaluation()?;
    let seed = config.seed.expect("validated");
    let test_dir = config.test_dir.as_ref().expect("validated");
    let corpus = load_validated(test_dir, Split::Test)?;
    let summarizers = build_summarizers(config)?;
    let refs: Vec<&dyn Summarizer> = summarizers.iter().map(|s| s.as_ref()).collect();
    let opts = EvalOptions {
        token_budget: config.token_budget,
        max_failure_rate: config.max_failure_rate,
    };

    let mut run = run_gold_eval(&corpus, &refs, &opts)?;
    if config.span_source == SpanSource::Located {
        let backend = build_backend(config)?;
        let params = obtain_locator(config, backend.as_ref())?;
        run.merge(run_located_eval(
            &corpus,
            backend.as_ref(),
            &params,
            &refs,
            &opts,
        )?);
        if config.random_baseline {
            run.merge(run_random_eval(&corpus, &refs, seed, &opts)?);
        }
    }
    let mut rows = run.rows.clone();
    apply_improvements(&mut rows, &config.improvement_pairs);
    let report = build_report(rows)?;
    let written = write_outputs(config, &report, &run)?;
    Ok(ExperimentOutcome {
        report,
        run,
        written,
    })
}
