//! QMSum meeting ingestion: parsing, preprocessing and validation.
//!
//! A QMSum meeting object carries a transcript (`meeting_transcripts`) plus
//! general and specific query lists. Specific queries point at inclusive,
//! zero-based turn ranges via `relevant_text_span`, written as pairs of
//! decimal strings (`[["0", "19"]]`).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed JSON in meeting {id} at byte {offset}: {message}")]
    Parse {
        id: String,
        offset: usize,
        message: String,
    },
    #[error("schema error in meeting {id}: {message}")]
    Schema { id: String, message: String },
    #[error("validation error: {0}")]
    Validation(Violation),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub content: String,
    pub cleaned: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, content: impl Into<String>) -> Self {
        let content = content.into();
        Self {
            speaker: speaker.into(),
            cleaned: preprocess_text(&content),
            content,
        }
    }
}

/// Inclusive, zero-based turn range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
}

impl GoldSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    General,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub text: String,
    pub reference_summary: String,
    pub kind: QueryKind,
    pub gold_spans: Vec<GoldSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meeting {
    pub id: String,
    pub turns: Vec<Turn>,
    /// General queries first, then specific ones, each in file order.
    pub queries: Vec<QueryRecord>,
    /// `topic_list` is carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_list: Option<Value>,
}

impl Meeting {
    pub fn length(&self) -> usize {
        self.turns.len()
    }

    pub fn specific_queries(&self) -> impl Iterator<Item = (usize, &QueryRecord)> {
        self.queries
            .iter()
            .enumerate()
            .filter(|(_, q)| q.kind == QueryKind::Specific)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub meetings: Vec<Meeting>,
}

impl Corpus {
    pub fn query_count(&self) -> usize {
        self.meetings.iter().map(|m| m.queries.len()).sum()
    }
}

/// One broken invariant. `query_index` indexes [`Meeting::queries`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub meeting_id: String,
    pub query_index: Option<usize>,
    pub invariant: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.query_index {
            Some(q) => write!(
                f,
                "meeting {} query {}: violates \"{}\"",
                self.meeting_id, q, self.invariant
            ),
            None => write!(
                f,
                "meeting {}: violates \"{}\"",
                self.meeting_id, self.invariant
            ),
        }
    }
}

pub const NOISE_TOKENS: [&str; 3] = ["vocalsound", "disfmarker", "nonvocalsound"];

fn noise_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[\{<\[\(]?\b(?:nonvocalsound|vocalsound|disfmarker)\b[\}>\]\)]?")
            .expect("static regex")
    })
}

/// Lowercases, removes transcription noise markers and normalizes whitespace.
///
/// Idempotent. Markers are replaced by a space rather than deleted so that
/// removal can never glue two fragments into a new marker.
pub fn preprocess_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let stripped = noise_pattern().replace_all(&lowered, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Deserialize)]
struct RawMeeting {
    #[serde(default)]
    topic_list: Option<Value>,
    #[serde(default)]
    general_query_list: Option<Vec<RawQuery>>,
    #[serde(default)]
    specific_query_list: Option<Vec<RawQuery>>,
    #[serde(default)]
    meeting_transcripts: Option<Vec<RawTurn>>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    content: String,
}

#[derive(Deserialize)]
struct RawQuery {
    query: String,
    answer: String,
    #[serde(default)]
    relevant_text_span: Vec<Vec<Value>>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_bound(v: &Value) -> Option<usize> {
    match v {
        Value::String(s) => s.trim().parse::<usize>().ok(),
        Value::Number(n) => n.as_u64().and_then(|n| usize::try_from(n).ok()),
        _ => None,
    }
}

/// Parses one QMSum meeting object. The result always satisfies every
/// [`validate_meeting`] invariant.
pub fn parse_meeting(json_text: &str, id: &str) -> Result<Meeting, IngestError> {
    let meeting = parse_meeting_unchecked(json_text, id)?;
    if let Some(v) = validate_meeting(&meeting).into_iter().next() {
        return Err(IngestError::Validation(v));
    }
    Ok(meeting)
}

/// Parses the JSON structure only; semantic invariants are left to
/// [`validate_meeting`].
pub fn parse_meeting_unchecked(json_text: &str, id: &str) -> Result<Meeting, IngestError> {
    let raw: RawMeeting = serde_json::from_str(json_text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            IngestError::Parse {
                id: id.to_string(),
                offset: byte_offset(json_text, e.line(), e.column()),
                message: e.to_string(),
            }
        } else {
            IngestError::Schema {
                id: id.to_string(),
                message: e.to_string(),
            }
        }
    })?;

    let schema = |message: String| IngestError::Schema {
        id: id.to_string(),
        message,
    };

    let transcript = raw
        .meeting_transcripts
        .ok_or_else(|| schema("missing \"meeting_transcripts\"".into()))?;
    if raw.general_query_list.is_none() && raw.specific_query_list.is_none() {
        return Err(schema("no query list present".into()));
    }

    let turns: Vec<Turn> = transcript
        .into_iter()
        .map(|t| Turn::new(t.speaker.trim(), t.content))
        .collect();

    let mut queries = Vec::new();
    for q in raw.general_query_list.unwrap_or_default() {
        queries.push(QueryRecord {
            text: q.query,
            reference_summary: q.answer,
            kind: QueryKind::General,
            gold_spans: Vec::new(),
        });
    }
    for (j, q) in raw
        .specific_query_list
        .unwrap_or_default()
        .into_iter()
        .enumerate()
    {
        let mut spans = Vec::with_capacity(q.relevant_text_span.len());
        for pair in &q.relevant_text_span {
            let bounds: Option<Vec<usize>> = pair.iter().map(parse_bound).collect();
            match bounds.as_deref() {
                Some(&[start, end]) => spans.push(GoldSpan { start, end }),
                _ => {
                    return Err(schema(format!(
                        "specific query {j} ({:?}): span {} is not a pair of integers",
                        q.query,
                        Value::Array(pair.clone())
                    )))
                }
            }
        }
        queries.push(QueryRecord {
            text: q.query,
            reference_summary: q.answer,
            kind: QueryKind::Specific,
            gold_spans: spans,
        });
    }

    Ok(Meeting {
        id: id.to_string(),
        turns,
        queries,
        topic_list: raw.topic_list,
    })
}

/// Renders a meeting back into the QMSum object layout.
pub fn serialize_meeting(meeting: &Meeting) -> Value {
    let query = |q: &QueryRecord| {
        let mut obj = serde_json::json!({ "query": q.text, "answer": q.reference_summary });
        if q.kind == QueryKind::Specific {
            obj["relevant_text_span"] = q
                .gold_spans
                .iter()
                .map(|s| serde_json::json!([s.start.to_string(), s.end.to_string()]))
                .collect();
        }
        obj
    };
    let mut obj = serde_json::json!({
        "general_query_list": meeting.queries.iter().filter(|q| q.kind == QueryKind::General).map(query).collect::<Vec<_>>(),
        "specific_query_list": meeting.queries.iter().filter(|q| q.kind == QueryKind::Specific).map(query).collect::<Vec<_>>(),
        "meeting_transcripts": meeting.turns.iter().map(|t| serde_json::json!({"speaker": t.speaker, "content": t.content})).collect::<Vec<_>>(),
    });
    if let Some(topics) = &meeting.topic_list {
        obj["topic_list"] = topics.clone();
    }
    obj
}

// ---------------------------------------------------------------------------
// Validation

pub fn validate_meeting(meeting: &Meeting) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = |q: Option<usize>, inv: &str| Violation {
        meeting_id: meeting.id.clone(),
        query_index: q,
        invariant: inv.to_string(),
    };
    let length = meeting.length();
    if length == 0 {
        out.push(v(None, "length ≥ 1"));
    }
    if meeting.turns.iter().any(|t| t.speaker.trim().is_empty()) {
        out.push(v(None, "speaker non-empty"));
    }
    for (qi, q) in meeting.queries.iter().enumerate() {
        if q.reference_summary.trim().is_empty() {
            out.push(v(Some(qi), "reference_summary non-empty"));
        }
        match q.kind {
            QueryKind::General if !q.gold_spans.is_empty() => {
                out.push(v(Some(qi), "general query has 0 gold spans"))
            }
            QueryKind::Specific if q.gold_spans.is_empty() => {
                out.push(v(Some(qi), "specific query has ≥1 gold span"))
            }
            _ => {}
        }
        for span in &q.gold_spans {
            if span.start > span.end {
                out.push(v(Some(qi), "start ≤ end"));
            }
            if span.end >= length {
                out.push(v(Some(qi), "end < length"));
            }
        }
    }
    out
}

/// Every invariant violation in the corpus, in meeting order. Empty iff the
/// corpus is well-formed.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in &corpus.meetings {
        if !seen.insert(m.id.as_str()) {
            out.push(Violation {
                meeting_id: m.id.clone(),
                query_index: None,
                invariant: "meeting id unique".into(),
            });
        }
        out.extend(validate_meeting(m));
    }
    out
}

// ---------------------------------------------------------------------------
// Directory loading

fn split_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| IngestError::Io {
            path: dir.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("json" | "jsonl")
                )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Calls `f(id, text)` for every meeting document in `path`.
fn for_each_document(
    path: &Path,
    mut f: impl FnMut(&str, &str) -> Result<(), IngestError>,
) -> Result<(), IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            f(&format!("{stem}_{i}"), line)?;
        }
        Ok(())
    } else {
        f(&stem, &text)
    }
}

/// Loads every `*.json` (one meeting per file, id = file stem) and `*.jsonl`
/// (one meeting per line, id = `<stem>_<line>`) file in `dir`, sorted by name.
/// Stops at the first malformed or invalid meeting.
pub fn load_split_dir(dir: &Path, split: Split) -> Result<Corpus, IngestError> {
    let mut meetings = Vec::new();
    for path in split_files(dir)? {
        for_each_document(&path, |id, text| {
            meetings.push(parse_meeting(text, id)?);
            Ok(())
        })?;
    }
    Ok(Corpus { split, meetings })
}

/// Everything wrong with a split directory, without stopping early.
#[derive(Debug)]
pub struct SplitScan {
    /// Meetings that parsed, valid or not.
    pub corpus: Corpus,
    /// Documents that could not be parsed at all.
    pub errors: Vec<IngestError>,
    pub violations: Vec<Violation>,
}

impl SplitScan {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.violations.is_empty()
    }
}

pub fn scan_split_dir(dir: &Path, split: Split) -> Result<SplitScan, IngestError> {
    let mut meetings = Vec::new();
    let mut errors = Vec::new();
    for path in split_files(dir)? {
        let res = for_each_document(&path, |id, text| {
            match parse_meeting_unchecked(text, id) {
                Ok(m) => meetings.push(m),
                Err(e) => errors.push(e),
            }
            Ok(())
        });
        if let Err(e) = res {
            errors.push(e);
        }
    }
    let corpus = Corpus { split, meetings };
    let violations = validate_corpus(&corpus);
    Ok(SplitScan {
        corpus,
        errors,
        violations,
    })
}
