//! Seeded synthetic meetings with known query-relevant spans.
//!
//! Every meeting walks through the same topics in the same order, one
//! contiguous section per topic. Each turn of a section mentions the topic
//! word, and each specific query names a topic, so the block of turns sharing
//! the most tokens with the query is exactly that topic's section.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{GoldSpan, Meeting, QueryKind, QueryRecord, Turn};

const TOPICS: [(&str, [&str; 6]); 4] = [
    (
        "budget",
        ["cost", "invoice", "spending", "price", "funds", "expenses"],
    ),
    (
        "design",
        [
            "prototype",
            "interface",
            "button",
            "layout",
            "colour",
            "sketch",
        ],
    ),
    (
        "schedule",
        [
            "deadline",
            "calendar",
            "milestone",
            "timeline",
            "delay",
            "date",
        ],
    ),
    (
        "hiring",
        [
            "candidate",
            "interview",
            "salary",
            "recruit",
            "resume",
            "applicant",
        ],
    ),
];

const FILLER: [&str; 20] = [
    "okay", "yeah", "so", "think", "maybe", "right", "um", "well", "just", "really", "thing",
    "good", "point", "agree", "sure", "know", "mean", "guess", "fine", "probably",
];

const SPEAKERS: [&str; 4] = [
    "Project Manager",
    "User Interface",
    "Marketing",
    "Industrial Designer",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub meetings: usize,
    pub min_section_turns: usize,
    pub max_section_turns: usize,
    pub seed: u64,
    /// Adds one general query per meeting.
    pub general_queries: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            meetings: 50,
            min_section_turns: 3,
            max_section_turns: 8,
            seed: 0,
            general_queries: false,
        }
    }
}

pub fn topic_count() -> usize {
    TOPICS.len()
}

fn turn_text(rng: &mut ChaCha8Rng, topic: usize) -> String {
    let (name, keywords) = TOPICS[topic];
    let mut words = vec![name, keywords[rng.gen_range(0..keywords.len())]];
    for _ in 0..rng.gen_range(3..=6) {
        words.push(FILLER[rng.gen_range(0..FILLER.len())]);
    }
    words[1..].shuffle(rng);
    format!("{} .", words.join(" "))
}

/// Generates `config.meetings` meetings with ids `synthetic_000`, ….
pub fn generate(config: &SyntheticConfig) -> Vec<Meeting> {
    assert!(config.min_section_turns >= 1 && config.min_section_turns <= config.max_section_turns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.meetings)
        .map(|i| generate_meeting(&mut rng, i, config))
        .collect()
}

fn generate_meeting(rng: &mut ChaCha8Rng, index: usize, config: &SyntheticConfig) -> Meeting {
    let mut turns = Vec::new();
    let mut sections = Vec::new();
    for topic in 0..TOPICS.len() {
        let n = rng.gen_range(config.min_section_turns..=config.max_section_turns);
        let start = turns.len();
        for _ in 0..n {
            let speaker = SPEAKERS[rng.gen_range(0..SPEAKERS.len())];
            turns.push(Turn::new(speaker, turn_text(rng, topic)));
        }
        sections.push(GoldSpan::new(start, turns.len() - 1));
    }
    let mut meeting = Meeting {
        id: format!("synthetic_{index:03}"),
        turns,
        queries: Vec::new(),
        topic_list: None,
    };
    if config.general_queries {
        meeting.queries.push(QueryRecord {
            text: "Summarize the whole meeting.".into(),
            reference_summary: TOPICS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(" "),
            kind: QueryKind::General,
            gold_spans: Vec::new(),
        });
    }
    for (topic, section) in sections.iter().enumerate() {
        let (name, keywords) = TOPICS[topic];
        let text = format!(
            "What did the group decide about the {name} and the {} ?",
            keywords[rng.gen_range(0..keywords.len())]
        );
        let gold =
            most_overlapping_block(&meeting, &text).expect("every section overlaps its query");
        debug_assert_eq!(gold, *section);
        let reference = meeting.turns[gold.start..=gold.end.min(gold.start + 1)]
            .iter()
            .map(|t| t.cleaned.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        meeting.queries.push(QueryRecord {
            text,
            reference_summary: reference,
            kind: QueryKind::Specific,
            gold_spans: vec![gold],
        });
    }
    meeting
}

/// The maximal run of consecutive turns that each share at least one token
/// with the query, choosing the run with the largest total number of shared
/// tokens (earliest on ties). `None` if no turn shares a token.
pub fn most_overlapping_block(meeting: &Meeting, query: &str) -> Option<GoldSpan> {
    let query_tokens: HashSet<String> = crate::ingest::preprocess_text(query)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let overlap: Vec<usize> = meeting
        .turns
        .iter()
        .map(|t| {
            t.cleaned
                .split_whitespace()
                .filter(|w| query_tokens.contains(*w))
                .count()
        })
        .collect();
    let mut best: Option<(usize, GoldSpan)> = None;
    let mut t = 0;
    while t < overlap.len() {
        if overlap[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        let mut total = 0;
        while t < overlap.len() && overlap[t] > 0 {
            total += overlap[t];
            t += 1;
        }
        if best.is_none_or(|(b, _)| total > b) {
            best = Some((total, GoldSpan::new(start, t - 1)));
        }
    }
    best.map(|(_, span)| span)
}
