use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spanloc::embedding::{embed_query, embed_transcript};
use spanloc::ingest::{
    parse_meeting, scan_split_dir, serialize_meeting, Meeting, QueryKind, Split,
};
use spanloc::locator::{
    self, locator_forward, save_checkpoint, CheckpointSidecar, CHECKPOINT_VERSION,
};
use spanloc::pipeline::config::parse_override;
use spanloc::pipeline::{
    apply_improvements, build_backend, build_report, build_summarizers, load_validated,
    obtain_locator, render_report, run_experiment, ExperimentConfig, PipelineError, Report,
    ReportFormat, ResultRow,
};
use spanloc::span::{build_summarizer_input, discretize, extract_text, DiscreteSpan};

#[derive(Parser)]
#[command(
    name = "spanloc",
    version,
    about = "Locate-then-summarize toolkit for query-based meeting summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Experiment config file (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set embedding=hash`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    fn load(&self, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig, PipelineError> {
        let mut overrides = self.overrides.clone();
        for (k, v) in extra {
            if let Some(v) = v {
                overrides.push((k.to_string(), v.clone()));
            }
        }
        Ok(ExperimentConfig::load(self.config.as_deref(), &overrides)?)
    }
}

fn quoted(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref()
        .map(|p| toml::Value::String(p.display().to_string()).to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a split directory; optionally dump it as normalized JSON.
    Ingest {
        dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write the normalized meetings here as a JSON array.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report every parse error and invariant violation in one or more split directories.
    Validate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Train a locator and write a checkpoint (plus `<checkpoint>.json`).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict spans for the specific queries of one meeting file.
    Locate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        meeting: PathBuf,
        /// Only this query (index into general-then-specific query order).
        #[arg(long)]
        query_index: Option<usize>,
    },
    /// Summarize one query's span with each configured summarizer.
    Summarize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        meeting: PathBuf,
        #[arg(long)]
        query_index: usize,
        /// `gold`, `whole`, or an inclusive turn range `START:END`.
        #[arg(long, default_value = "gold")]
        span: String,
    },
    /// Run the evaluation described by the config and write reports.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Re-render a JSON report, optionally with improvement pairs.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
        /// `BASE=TUNED` summarizer pair. Repeatable.
        #[arg(long = "pair", value_parser = parse_override)]
        pairs: Vec<(String, String)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_meeting(path: &Path) -> Result<Meeting, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("meeting");
    Ok(parse_meeting(&text, id)?)
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest { dir, split, out } => {
            let corpus = load_validated(&dir, split)?;
            eprintln!(
                "{}: {} meetings, {} queries",
                split,
                corpus.meetings.len(),
                corpus.query_count()
            );
            if let Some(out) = out {
                let dump: Vec<_> = corpus.meetings.iter().map(serialize_meeting).collect();
                let text = serde_json::to_string_pretty(&dump).expect("serializable");
                std::fs::write(&out, text + "\n").map_err(io_error(&out))?;
            }
            Ok(())
        }
        Command::Validate { dirs } => {
            let mut problems = 0;
            for dir in dirs {
                let scan = scan_split_dir(&dir, Split::Test)?;
                for e in &scan.errors {
                    println!("{}: {e}", dir.display());
                }
                for v in &scan.violations {
                    println!("{}: {v}", dir.display());
                }
                problems += scan.errors.len() + scan.violations.len();
                eprintln!(
                    "{}: {} meetings, {} queries, {} parse errors, {} violations",
                    dir.display(),
                    scan.corpus.meetings.len(),
                    scan.corpus.query_count(),
                    scan.errors.len(),
                    scan.violations.len()
                );
            }
            if problems > 0 {
                return Err(PipelineError::Contract(format!(
                    "{problems} problem(s) found"
                )));
            }
            Ok(())
        }
        Command::Train {
            cfg,
            seed,
            train_dir,
            out,
        } => {
            let config = cfg.load(&[
                ("seed", Some(seed.to_string())),
                ("train_dir", quoted(&train_dir)),
            ])?;
            let dir = config
                .train_dir
                .clone()
                .ok_or_else(|| PipelineError::Config("train_dir is required".into()))?;
            let corpus = load_validated(&dir, Split::Train)?;
            let backend = build_backend(&config)?;
            let (params, log) = locator::train(&corpus, backend.as_ref(), &config.locator)?;
            let sidecar = CheckpointSidecar {
                format_version: CHECKPOINT_VERSION,
                config: config.locator.clone(),
                backend: Some(backend.descriptor().clone()),
                training_log: log.clone(),
            };
            save_checkpoint(&out, &params, &sidecar)?;
            eprintln!(
                "trained on {} queries for {} epochs, final loss {:.6}; wrote {}",
                log.examples,
                log.epochs.len(),
                log.final_loss().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Locate {
            cfg,
            checkpoint,
            meeting,
            query_index,
        } => {
            let config = cfg.load(&[("checkpoint", quoted(&checkpoint))])?;
            if config.checkpoint.is_none() {
                return Err(PipelineError::Config("checkpoint is required".into()));
            }
            let meeting = read_meeting(&meeting)?;
            let backend = build_backend(&config)?;
            let params = obtain_locator(&config, backend.as_ref())?;
            let transcript = embed_transcript(backend.as_ref(), &meeting)?;
            for (qi, q) in meeting
                .specific_queries()
                .filter(|(i, _)| query_index.is_none_or(|w| w == *i))
            {
                let qm = embed_query(backend.as_ref(), &q.text)?;
                let pred = locator_forward(&params, &transcript.0, &qm.rows, meeting.length())?;
                let span = discretize(pred, meeting.length())
                    .map_err(|e| PipelineError::Invariant(e.to_string()))?;
                emit(&json!({
                    "meeting_id": meeting.id,
                    "query_index": qi,
                    "query": q.text,
                    "start_raw": pred.start_raw,
                    "end_raw": pred.end_raw,
                    "start": span.start(),
                    "end": span.end(),
                    "gold": q.gold_spans.iter().map(|g| [g.start, g.end]).collect::<Vec<_>>(),
                }));
            }
            Ok(())
        }
        Command::Summarize {
            cfg,
            meeting,
            query_index,
            span,
        } => {
            let config = cfg.load(&[])?;
            let meeting = read_meeting(&meeting)?;
            let query = meeting.queries.get(query_index).ok_or_else(|| {
                PipelineError::Config(format!("meeting has {} queries", meeting.queries.len()))
            })?;
            let data_err = |e: spanloc::span::SpanError| PipelineError::Contract(e.to_string());
            let spans: Vec<DiscreteSpan> = match span.as_str() {
                "gold" if query.kind == QueryKind::Specific => query
                    .gold_spans
                    .iter()
                    .map(|g| DiscreteSpan::from_gold(*g, meeting.length()))
                    .collect::<Result<_, _>>()
                    .map_err(data_err)?,
                "gold" | "whole" => vec![DiscreteSpan::full(meeting.length()).map_err(data_err)?],
                range => {
                    let (s, e) = range
                        .split_once(':')
                        .and_then(|(s, e)| Some((s.parse().ok()?, e.parse().ok()?)))
                        .ok_or_else(|| PipelineError::Config(format!("bad span {range:?}")))?;
                    vec![DiscreteSpan::new(s, e, meeting.length()).map_err(data_err)?]
                }
            };
            let text = spans
                .iter()
                .map(|s| extract_text(&meeting, *s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_err)?
                .join(" ");
            let input = build_summarizer_input(&query.text, &text, config.token_budget)
                .map_err(data_err)?;
            for s in build_summarizers(&config)? {
                let result = s.summarize(&input)?;
                emit(&json!({
                    "summarizer": result.backend_name,
                    "spans": spans.iter().map(|d| [d.start(), d.end()]).collect::<Vec<_>>(),
                    "input_truncated": result.input_truncated,
                    "summary": result.summary,
                }));
            }
            Ok(())
        }
        Command::Evaluate {
            cfg,
            seed,
            output_dir,
        } => {
            let config = cfg.load(&[
                ("seed", Some(seed.to_string())),
                ("output_dir", quoted(&output_dir)),
            ])?;
            let outcome = run_experiment(&config)?;
            if !outcome.run.failures.is_empty() {
                eprintln!(
                    "{} query evaluation(s) failed; see failures.jsonl",
                    outcome.run.failures.len()
                );
            }
            print!("{}", render_report(&outcome.report, ReportFormat::Text)?);
            for p in &outcome.written {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Report {
            input,
            format,
            pairs,
            out,
        } => {
            let format: ReportFormat = format.parse()?;
            let text = std::fs::read_to_string(&input).map_err(io_error(&input))?;
            let mut rows: Vec<ResultRow> = match serde_json::from_str::<Report>(&text) {
                Ok(r) => r.rows,
                Err(_) => serde_json::from_str(&text).map_err(|e| {
                    PipelineError::Contract(format!(
                        "{}: not a report or row list: {e}",
                        input.display()
                    ))
                })?,
            };
            if !pairs.is_empty() {
                apply_improvements(&mut rows, &pairs);
            }
            let rendered = render_report(&build_report(rows)?, format)?;
            match out {
                Some(path) => std::fs::write(&path, rendered).map_err(io_error(&path))?,
                None => print!("{rendered}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
