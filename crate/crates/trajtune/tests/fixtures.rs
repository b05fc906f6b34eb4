//! Holds the parser and filters to hand-labeled fixture corpora. Labels
//! were assigned when each record was authored (every violating record
//! embeds exactly one known defect), so they are ground truth independent
//! of the implementation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use trajtune::container::{read_jsonl, RawRecord};
use trajtune::ingest::{ingest_records, parse_react, FewShotPolicy, FilterPolicy, MarkerGrammar};
use trajtune::pipeline::general_conversation;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn labels(name: &str) -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Runs the full ingest over a fixture and compares each record's fate
/// with its label, reporting every mismatch at once.
fn check_against_labels(corpus: &str, label_file: &str) {
    let records: Vec<RawRecord> = read_jsonl(&fixture(corpus)).unwrap();
    let expected = labels(label_file);
    assert_eq!(
        records.len(),
        expected.len(),
        "label file covers the corpus"
    );

    let policy = FilterPolicy {
        few_shot: FewShotPolicy::Drop,
    };
    let outcome = ingest_records(&records, &MarkerGrammar::default(), &policy);
    assert_eq!(
        outcome.kept.len() + outcome.drops.len(),
        records.len(),
        "every record lands in exactly one bucket"
    );

    let mut got: BTreeMap<String, String> = BTreeMap::new();
    for traj in &outcome.kept {
        got.insert(traj.raw_id.clone(), "kept".to_string());
    }
    for drop in &outcome.drops {
        got.insert(drop.id.clone(), drop.reason.code.as_str().to_string());
    }

    let mut mismatches = Vec::new();
    for (id, want) in &expected {
        let have = got.get(id).map(String::as_str).unwrap_or("<missing>");
        if have != want {
            mismatches.push(format!("{id}: labeled {want}, got {have}"));
        }
    }
    assert!(
        mismatches.is_empty(),
        "{corpus}: {} of {} labels disagree:\n{}",
        mismatches.len(),
        expected.len(),
        mismatches.join("\n")
    );
}

#[test]
fn parse_10_matches_labels() {
    let records: Vec<RawRecord> = read_jsonl(&fixture("parse_10.jsonl")).unwrap();
    let expected = labels("parse_10_labels.json");
    let grammar = MarkerGrammar::default();
    assert_eq!(records.len(), 10);
    for record in &records {
        let want = &expected[&record.id];
        match parse_react(record, &grammar) {
            Ok(traj) => {
                assert_eq!(want, "parsed", "{} parsed but labeled {want}", record.id);
                assert!(
                    !traj.steps.is_empty() || traj.final_answer.is_some(),
                    "{} parsed to an empty trajectory",
                    record.id
                );
            }
            Err(reason) => {
                assert_eq!(
                    want,
                    reason.code.as_str(),
                    "{} dropped as {} ({}) but labeled {want}",
                    record.id,
                    reason.code.as_str(),
                    reason.detail
                );
            }
        }
    }
}

#[test]
fn filter_20_matches_labels() {
    check_against_labels("filter_20.jsonl", "filter_20_labels.json");
}

#[test]
fn filter_100_matches_labels() {
    check_against_labels("filter_100.jsonl", "filter_100_labels.json");
}

#[test]
fn parsed_trajectories_carry_real_content() {
    let records: Vec<RawRecord> = read_jsonl(&fixture("corpus_50.jsonl")).unwrap();
    let outcome = ingest_records(
        &records,
        &MarkerGrammar::default(),
        &FilterPolicy::default(),
    );
    assert_eq!(outcome.kept.len(), 50, "the pipeline corpus is all clean");
    for traj in &outcome.kept {
        assert!(!traj.query.is_empty());
        for step in &traj.steps {
            assert!(!step.thought.is_empty());
            assert!(step.action_input.is_object());
        }
    }
    // Distinct queries keep the negative-synthesis pool at full size.
    let queries: std::collections::BTreeSet<&str> =
        outcome.kept.iter().map(|t| t.query.as_str()).collect();
    assert_eq!(queries.len(), 50);
}

#[test]
fn general_records_all_convert() {
    let records: Vec<RawRecord> = read_jsonl(&fixture("general_20.jsonl")).unwrap();
    assert_eq!(records.len(), 20);
    for record in &records {
        let conv = general_conversation(record).unwrap();
        assert_eq!(conv.source, "general");
        assert!(conv.turns.iter().any(|t| t.loss_mask));
    }
}
