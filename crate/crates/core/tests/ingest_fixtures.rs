use std::path::{Path, PathBuf};

use spanloc::ingest::{
    load_split_dir, parse_meeting, serialize_meeting, validate_corpus, Corpus, GoldSpan,
    IngestError, QueryKind, Split,
};
use spanloc::span::{extract_text, DiscreteSpan};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn committee_text() -> String {
    std::fs::read_to_string(fixtures().join("committee_opening.json")).unwrap()
}

/// Replaces the last occurrence, which sits in the specific query list.
fn replace_last(text: &str, from: &str, to: &str) -> String {
    let at = text.rfind(from).expect("pattern present");
    format!("{}{}{}", &text[..at], to, &text[at + from.len()..])
}

#[test]
fn committee_opening_parses() {
    let m = parse_meeting(&committee_text(), "committee_opening").unwrap();
    assert_eq!(m.length(), 22);
    assert_eq!(
        m.turns[0].speaker,
        "The Chair (Hon. Anthony Rota (NipissingTimiskaming, Lib.))"
    );
    assert!(m.turns[0]
        .content
        .starts_with("I call the meeting to order."));
    assert!(m.turns[0]
        .cleaned
        .starts_with("i call the meeting to order."));
    assert!(m.topic_list.is_some());

    assert_eq!(m.queries.len(), 2);
    assert_eq!(m.queries[0].kind, QueryKind::General);
    assert!(m.queries[0].gold_spans.is_empty());
    let (_, specific) = m.specific_queries().next().unwrap();
    assert_eq!(specific.gold_spans, vec![GoldSpan::new(0, 19)]);

    let corpus = Corpus {
        split: Split::Test,
        meetings: vec![m],
    };
    assert!(validate_corpus(&corpus).is_empty());
}

#[test]
fn gold_span_covers_opening_twenty_turns() {
    let m = parse_meeting(&committee_text(), "c").unwrap();
    let text = extract_text(
        &m,
        DiscreteSpan::from_gold(GoldSpan::new(0, 19), m.length()).unwrap(),
    )
    .unwrap();
    assert!(text.starts_with(
        "the chair (hon. anthony rota (nipissingtimiskaming, lib.)): i call the meeting to order."
    ));
    assert!(text.contains("ms. rachel blaney, you have the floor"));
    assert!(text.ends_with("government matters will take priority for the rest of this sitting."));
    assert!(!text.contains("emergency measures"));
    assert!(!text.contains("vocalsound"));
}

#[test]
fn brace_pair_spans_are_rejected_with_a_location() {
    // `{"0", "19"}` is a JSON object, not a pair
    let broken = replace_last(
        &committee_text(),
        "[\n          \"0\",\n          \"19\"\n        ]",
        "{\"0\", \"19\"}",
    );
    assert_ne!(broken, committee_text());
    let at = broken.find("{\"0\"").unwrap();
    let line = broken[..at].matches('\n').count() + 1;
    match parse_meeting(&broken, "broken") {
        Err(IngestError::Parse { id, offset, .. }) => {
            assert_eq!(id, "broken");
            assert!(
                offset >= at && offset <= at + 6,
                "offset {offset}, brace at {at}"
            );
        }
        Err(IngestError::Schema { id, message }) => {
            assert_eq!(id, "broken");
            assert!(message.contains(&format!("line {line}")), "{message}");
        }
        other => panic!("expected a parse or schema error, got {other:?}"),
    }
}

#[test]
fn span_beyond_transcript_is_rejected() {
    let short = replace_last(&committee_text(), "\"19\"", "\"22\"");
    match parse_meeting(&short, "short") {
        Err(IngestError::Validation(v)) => assert_eq!(v.invariant, "end < length"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn serialize_round_trip_on_fixture() {
    let m = parse_meeting(&committee_text(), "c").unwrap();
    let again = parse_meeting(&serialize_meeting(&m).to_string(), "c").unwrap();
    assert_eq!(again, m);
}

#[test]
fn two_meeting_split_loads() {
    let corpus = load_split_dir(&fixtures().join("two_meetings/test"), Split::Test).unwrap();
    let ids: Vec<&str> = corpus.meetings.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, vec!["committee", "product"]);
    assert_eq!(corpus.query_count(), 6);
    assert!(validate_corpus(&corpus).is_empty());
    let committee = &corpus.meetings[0];
    let (_, q) = committee.specific_queries().nth(1).unwrap();
    assert_eq!(
        q.gold_spans,
        vec![GoldSpan::new(14, 15), GoldSpan::new(18, 19)]
    );
}
