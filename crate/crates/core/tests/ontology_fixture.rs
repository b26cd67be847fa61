mod common;

use common::*;
use ontoforge::ontology::{load_ontology, ConceptId, ContextCaps, DefinitionProvenance, OntologyError};
use std::collections::BTreeMap;
use std::path::Path;

fn id(s: &str) -> ConceptId {
    ConceptId::new(s).unwrap()
}

fn load_fixture() -> ontoforge::ontology::OntologyStore {
    load_ontology(
        &snomed("concepts.tsv"),
        &snomed("relations.tsv"),
        Some(&snomed("descriptions.tsv")),
    )
    .unwrap()
}

/// Fixture relations with `extra` appended, written to `dir`.
fn relations_with(dir: &Path, extra: &str) -> std::path::PathBuf {
    let mut text = std::fs::read_to_string(snomed("relations.tsv")).unwrap();
    text.push_str(extra);
    let path = dir.join("relations.tsv");
    std::fs::write(&path, text).unwrap();
    path
}

fn relation_lines() -> usize {
    std::fs::read_to_string(snomed("relations.tsv")).unwrap().lines().count()
}

#[test]
fn fixture_statistics() {
    let store = load_fixture();
    let stats = store.stats();
    assert_eq!((stats.concepts, stats.definitions, stats.isa_edges), (12, 4, 11));
    assert!(store.validate().is_clean());
    assert_eq!(store.roots().len(), 2);
    assert_eq!(store.missing_definition_concepts().len(), 8);
}

#[test]
fn self_loop_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let rel = relations_with(dir.path(), "195967001\t195967001\n");
    let err = load_ontology(&snomed("concepts.tsv"), &rel, None).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, OntologyError::Malformed { .. }), "{msg}");
    assert!(msg.contains(&format!("relations.tsv:{}", relation_lines() + 1)), "{msg}");
    assert!(msg.contains("self-loop"), "{msg}");
}

#[test]
fn dangling_hypernym_fails() {
    let dir = tempfile::tempdir().unwrap();
    let rel = relations_with(dir.path(), "195967001\t999999999\n");
    let msg = load_ontology(&snomed("concepts.tsv"), &rel, None).unwrap_err().to_string();
    assert!(msg.contains(&format!("relations.tsv:{}", relation_lines() + 1)), "{msg}");
    assert!(msg.contains("999999999"), "{msg}");
}

#[test]
fn cycle_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    // clinical finding becomes a child of asthma: a cycle through the root.
    let rel = relations_with(dir.path(), "404684003\t195967001\n");
    let store = load_ontology(&snomed("concepts.tsv"), &rel, None).unwrap();
    let report = store.validate();
    assert_eq!(report.cycles.len(), 1);
    assert!(report.cycles[0].contains(&id("195967001")));
}

#[test]
fn context_for_multi_parent_concept() {
    let store = load_fixture();
    let viral = id("75570004");
    let ctx = store.ontology_context(&viral, &BTreeMap::new(), ContextCaps::default()).unwrap();
    let mut hypernyms = ctx.hypernym_labels.clone();
    hypernyms.sort();
    assert_eq!(hypernyms, ["infectious disease", "pneumonia"]);
    assert_eq!(ctx.definition, "");

    let completed = BTreeMap::from([(viral.clone(), "Pneumonia caused by a virus.".to_owned())]);
    let ctx = store.ontology_context(&viral, &completed, ContextCaps::default()).unwrap();
    assert_eq!(ctx.definition_provenance, DefinitionProvenance::ModelCompleted);

    // Source definitions win over completed ones.
    let asthma = id("195967001");
    let completed = BTreeMap::from([(asthma.clone(), "other".to_owned())]);
    let ctx = store.ontology_context(&asthma, &completed, ContextCaps::default()).unwrap();
    assert_eq!(ctx.definition_provenance, DefinitionProvenance::Source);
    assert_eq!(ctx.synonym_labels, ["bronchial asthma"]);
}

#[test]
fn few_shot_examples_prefer_neighbours() {
    let store = load_fixture();
    // Siblings of bronchiolitis: asthma and pneumonia are both defined.
    let ex = store.few_shot_examples(&id("4120002"), 3);
    let labels: Vec<&str> = ex.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels.len(), 3);
    assert_eq!(&labels[..2], ["asthma", "pneumonia"]);
    assert!(!labels.contains(&"bronchiolitis"));
}
