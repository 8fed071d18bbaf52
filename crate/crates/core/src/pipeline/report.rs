//! Result tables: one row per (span source, summarizer), a mean row per span
//! source block, and optional base→fine-tuned improvement percentages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numfmt::round_half_up;

pub const MEAN_LABEL: &str = "Mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub span_source: String,
    pub summarizer: String,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub improvement_r1: Option<f64>,
    pub improvement_r2: Option<f64>,
    pub improvement_rl: Option<f64>,
}

impl ResultRow {
    pub fn new(span_source: &str, summarizer: &str, r1: f64, r2: f64, rl: f64) -> Self {
        Self {
            span_source: span_source.to_string(),
            summarizer: summarizer.to_string(),
            r1,
            r2,
            rl,
            improvement_r1: None,
            improvement_r2: None,
            improvement_rl: None,
        }
    }

    fn improvements(&self) -> impl Iterator<Item = f64> {
        [
            self.improvement_r1,
            self.improvement_r2,
            self.improvement_rl,
        ]
        .into_iter()
        .flatten()
    }
}

/// Block mean; `improvement_mean` averages every improvement cell in the block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub span_source: String,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub improvement_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("improvement undefined for base score {0}")]
    UndefinedImprovement(f64),
    #[error("report has no rows")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
    #[error("unknown report format {0:?}")]
    UnknownFormat(String),
}

/// `(tuned − base) / base × 100`, rounded half-up to one decimal.
pub fn improvement_percent(base: f64, tuned: f64) -> Result<f64, ReportError> {
    if base.is_nan() || base <= 0.0 {
        return Err(ReportError::UndefinedImprovement(base));
    }
    Ok(round_half_up((tuned - base) / base * 100.0, 1))
}

/// Fills improvement columns on every `base` row whose block also contains
/// the paired `tuned` summarizer.
pub fn apply_improvements(rows: &mut [ResultRow], pairs: &[(String, String)]) {
    for (base, tuned) in pairs {
        let tuned_scores: BTreeMap<String, (f64, f64, f64)> = rows
            .iter()
            .filter(|r| &r.summarizer == tuned)
            .map(|r| (r.span_source.clone(), (r.r1, r.r2, r.rl)))
            .collect();
        for row in rows.iter_mut().filter(|r| &r.summarizer == base) {
            if let Some(&(t1, t2, tl)) = tuned_scores.get(&row.span_source) {
                row.improvement_r1 = improvement_percent(row.r1, t1).ok();
                row.improvement_r2 = improvement_percent(row.r2, t2).ok();
                row.improvement_rl = improvement_percent(row.rl, tl).ok();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub means: Vec<MeanRow>,
}

/// Groups rows by span source in first-appearance order and appends a mean
/// row per block (means rounded to one decimal).
pub fn build_report(rows: Vec<ResultRow>) -> Result<Report, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut order: Vec<String> = Vec::new();
    for r in &rows {
        if !order.contains(&r.span_source) {
            order.push(r.span_source.clone());
        }
    }
    let mut grouped = Vec::with_capacity(rows.len());
    let mut means = Vec::with_capacity(order.len());
    for source in order {
        let block: Vec<&ResultRow> = rows.iter().filter(|r| r.span_source == source).collect();
        let n = block.len() as f64;
        let mean = |f: fn(&ResultRow) -> f64| {
            round_half_up(block.iter().map(|r| f(r)).sum::<f64>() / n, 1)
        };
        let imps: Vec<f64> = block.iter().flat_map(|r| r.improvements()).collect();
        means.push(MeanRow {
            span_source: source.clone(),
            r1: mean(|r| r.r1),
            r2: mean(|r| r.r2),
            rl: mean(|r| r.rl),
            improvement_mean: (!imps.is_empty())
                .then(|| round_half_up(imps.iter().sum::<f64>() / imps.len() as f64, 1)),
        });
        grouped.extend(block.into_iter().cloned());
    }
    Ok(Report {
        rows: grouped,
        means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Text,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Text => "txt",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "text" | "txt" | "text-table" => Ok(ReportFormat::Text),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// Flat CSV record; mean rows carry `summarizer = "Mean"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub span_source: String,
    pub summarizer: String,
    pub r1: String,
    pub r2: String,
    pub rl: String,
    pub improvement_r1: String,
    pub improvement_r2: String,
    pub improvement_rl: String,
    pub improvement_mean: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

fn csv_records(report: &Report) -> Vec<CsvRecord> {
    let mut out = Vec::new();
    for mean in &report.means {
        for r in report
            .rows
            .iter()
            .filter(|r| r.span_source == mean.span_source)
        {
            out.push(CsvRecord {
                span_source: r.span_source.clone(),
                summarizer: r.summarizer.clone(),
                r1: format!("{:.2}", r.r1),
                r2: format!("{:.2}", r.r2),
                rl: format!("{:.2}", r.rl),
                improvement_r1: opt(r.improvement_r1),
                improvement_r2: opt(r.improvement_r2),
                improvement_rl: opt(r.improvement_rl),
                improvement_mean: String::new(),
            });
        }
        out.push(CsvRecord {
            span_source: mean.span_source.clone(),
            summarizer: MEAN_LABEL.to_string(),
            r1: format!("{:.1}", mean.r1),
            r2: format!("{:.1}", mean.r2),
            rl: format!("{:.1}", mean.rl),
            improvement_r1: String::new(),
            improvement_r2: String::new(),
            improvement_rl: String::new(),
            improvement_mean: opt(mean.improvement_mean),
        });
    }
    out
}

/// Parses CSV produced by [`render_report`] back into records.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRecord>, ReportError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ReportError::Csv(e.to_string()))
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for rec in csv_records(report) {
                w.serialize(rec)
                    .map_err(|e| ReportError::Csv(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| ReportError::Csv(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is utf-8"))
        }
        ReportFormat::Json => {
            Ok(serde_json::to_string_pretty(report).expect("report serializes") + "\n")
        }
        ReportFormat::Text => Ok(render_text(report)),
    }
}

fn render_text(report: &Report) -> String {
    let header = [
        "Spans",
        "Summarizer",
        "R-1",
        "R-2",
        "R-L",
        "Impr R-1 %",
        "Impr R-2 %",
        "Impr R-L %",
        "Impr mean %",
    ];
    let mut cells: Vec<[String; 9]> = Vec::new();
    for rec in csv_records(report) {
        cells.push([
            rec.span_source,
            rec.summarizer,
            rec.r1,
            rec.r2,
            rec.rl,
            rec.improvement_r1,
            rec.improvement_r2,
            rec.improvement_rl,
            rec.improvement_mean,
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let mut prev_source: Option<String> = None;
    for row in &cells {
        // print the span source once per block
        let mut shown: Vec<&str> = row.iter().map(String::as_str).collect();
        if prev_source.as_deref() == Some(row[0].as_str()) {
            shown[0] = "";
        }
        prev_source = Some(row[0].clone());
        line(&mut out, &shown);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_gold_block() -> Vec<ResultRow> {
        vec![
            ResultRow::new("gold", "MEETING SUM", 24.0, 5.8, 21.4),
            ResultRow::new("gold", "BART", 22.8, 5.4, 20.2),
            ResultRow::new("gold", "MEETING SUM*", 37.6, 13.2, 33.1),
            ResultRow::new("gold", "BART*", 36.2, 12.2, 31.2),
        ]
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_percent(24.0, 37.6).unwrap(), 56.7);
        assert_eq!(improvement_percent(5.4, 12.2).unwrap(), 125.9);
        assert_eq!(improvement_percent(7.0, 7.0).unwrap(), 0.0);
        assert!(improvement_percent(0.0, 3.0).is_err());
        assert!(improvement_percent(-1.0, 3.0).is_err());
    }

    #[test]
    fn gold_block_means_and_improvements() {
        let mut rows = fig_gold_block();
        apply_improvements(
            &mut rows,
            &[
                ("MEETING SUM".into(), "MEETING SUM*".into()),
                ("BART".into(), "BART*".into()),
            ],
        );
        assert_eq!(
            (
                rows[0].improvement_r1,
                rows[0].improvement_r2,
                rows[0].improvement_rl
            ),
            (Some(56.7), Some(127.6), Some(54.7))
        );
        assert_eq!(
            (
                rows[1].improvement_r1,
                rows[1].improvement_r2,
                rows[1].improvement_rl
            ),
            (Some(58.8), Some(125.9), Some(54.5))
        );
        assert_eq!(rows[2].improvement_r1, None);
        let report = build_report(rows).unwrap();
        let m = &report.means[0];
        assert_eq!((m.r1, m.r2, m.rl), (30.2, 9.2, 26.5));
        assert_eq!(m.improvement_mean, Some(79.7));
    }

    #[test]
    fn single_row_gets_identical_mean() {
        let report =
            build_report(vec![ResultRow::new("gold", "lead-3", 40.0, 12.5, 30.0)]).unwrap();
        assert_eq!(report.rows.len(), 1);
        let m = &report.means[0];
        assert_eq!((m.r1, m.r2, m.rl), (40.0, 12.5, 30.0));
        let text = render_report(&report, ReportFormat::Text).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(3).unwrap().contains("Mean"));
    }

    #[test]
    fn blocks_grouped_in_first_seen_order() {
        let rows = vec![
            ResultRow::new("gold", "a", 1.0, 1.0, 1.0),
            ResultRow::new("located (hash)", "a", 2.0, 2.0, 2.0),
            ResultRow::new("gold", "b", 3.0, 3.0, 3.0),
        ];
        let r = build_report(rows).unwrap();
        let order: Vec<(&str, &str)> = r
            .rows
            .iter()
            .map(|r| (r.span_source.as_str(), r.summarizer.as_str()))
            .collect();
        assert_eq!(
            order,
            vec![("gold", "a"), ("gold", "b"), ("located (hash)", "a")]
        );
        assert_eq!(r.means[0].r1, 2.0);
        assert_eq!(r.means[1].r1, 2.0);
        assert!(build_report(vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = fig_gold_block();
        apply_improvements(&mut rows, &[("BART".into(), "BART*".into())]);
        let report = build_report(rows).unwrap();
        let csv = render_report(&report, ReportFormat::Csv).unwrap();
        let records = parse_csv(&csv).unwrap();
        assert_eq!(records, csv_records(&report));
        assert_eq!(records.len(), 5);
        assert_eq!(records[1].improvement_r2, "125.9");
        assert_eq!(records[4].summarizer, MEAN_LABEL);
        assert_eq!(
            (
                records[4].r1.as_str(),
                records[4].r2.as_str(),
                records[4].rl.as_str()
            ),
            ("30.2", "9.2", "26.5")
        );
        let again = render_report(&report, ReportFormat::Csv).unwrap();
        assert_eq!(csv, again);
    }

    #[test]
    fn json_round_trip() {
        let report = build_report(fig_gold_block()).unwrap();
        let json = render_report(&report, ReportFormat::Json).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
