use std::path::Path;

use spanloc::ingest::serialize_meeting;
use spanloc::synthetic::{generate, SyntheticConfig};

/// Writes a seeded synthetic split as one JSON file per meeting.
pub fn write_synthetic_split(dir: &Path, meetings: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for m in generate(&SyntheticConfig {
        meetings,
        seed,
        general_queries: true,
        ..Default::default()
    }) {
        let text = serde_json::to_string_pretty(&serialize_meeting(&m)).unwrap();
        std::fs::write(dir.join(format!("{}.json", m.id)), text).unwrap();
    }
}
