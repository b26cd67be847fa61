mod common;

use common::*;
use ontoforge::curation::GenerationRecord;
use ontoforge::digest::file_sha256;
use ontoforge::gateway::{Gateway, MockBackend, MockScript, ResponseCache, ScriptRule};
use ontoforge::pipeline::{
    load_templates, Pipeline, PipelineConfig, PipelineError, RunLock, Stage, StageStatus, DPO_FILE, REPORT_FILE,
    SCORES_FILE, SELECTION_FILE, SFT_FILE,
};
use std::path::Path;
use std::sync::Arc;

const FINAL_OUTPUTS: [&str; 4] = [SFT_FILE, DPO_FILE, REPORT_FILE, SELECTION_FILE];

/// A pipeline over an instrumented mock so tests can count backend calls.
fn instrumented(cfg: PipelineConfig, backend: Arc<MockBackend>) -> Pipeline {
    let templates = load_templates(&cfg).unwrap();
    let gateway = Gateway::new(backend).with_cache(ResponseCache::new(cfg.cache_dir()));
    Pipeline::with_parts(cfg, templates, gateway).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn line_count(dir: &Path, name: &str) -> usize {
    String::from_utf8(read(dir, name)).unwrap().lines().count()
}

fn statuses(m: &ontoforge::pipeline::RunManifest) -> Vec<(StageStatus, bool)> {
    m.stages.iter().map(|s| (s.status, s.skipped)).collect()
}

#[test]
fn fresh_run_completes_and_manifest_is_honest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let m = Pipeline::from_config(fixture_config(&out)).unwrap().run(None).unwrap();
    assert!(m.stages.iter().all(|s| s.status == StageStatus::Done));
    assert_eq!(m.backend_id, "mock-v1");
    let planned = m.planned_calls.unwrap();
    assert_eq!((planned.generation, planned.definition_completion, planned.embedding), (72, 8, 72));
    for rec in &m.stages {
        for o in &rec.outputs {
            assert_eq!(file_sha256(&out.join(&o.path)).unwrap(), o.sha256, "{}", o.path);
        }
    }
    assert_eq!(line_count(&out, SFT_FILE), 36);
    assert!(!out.join(ontoforge::pipeline::LOCK_FILE).exists());
}

#[test]
fn rerun_skips_everything_without_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    instrumented(fixture_config(&out), Arc::new(MockBackend::new())).run(None).unwrap();
    let before: Vec<Vec<u8>> = FINAL_OUTPUTS.iter().map(|f| read(&out, f)).collect();

    let backend = Arc::new(MockBackend::new());
    let m = instrumented(fixture_config(&out), backend.clone()).run(None).unwrap();
    assert!(statuses(&m).iter().all(|(s, skipped)| *s == StageStatus::Done && *skipped));
    assert_eq!(backend.complete_calls() + backend.embed_calls(), 0);
    let after: Vec<Vec<u8>> = FINAL_OUTPUTS.iter().map(|f| read(&out, f)).collect();
    assert_eq!(before, after);
}

#[test]
fn corrupted_intermediate_reruns_that_stage_and_successors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let p = Pipeline::from_config(fixture_config(&out)).unwrap();
    p.run(None).unwrap();
    let before: Vec<Vec<u8>> = FINAL_OUTPUTS.iter().map(|f| read(&out, f)).collect();

    let mut scores = read(&out, SCORES_FILE);
    scores.extend_from_slice(b"\n");
    std::fs::write(out.join(SCORES_FILE), scores).unwrap();

    let m = p.run(None).unwrap();
    let skipped: Vec<bool> = m.stages.iter().map(|s| s.skipped).collect();
    assert_eq!(skipped, [true, true, true, false, false, false, false]);
    let after: Vec<Vec<u8>> = FINAL_OUTPUTS.iter().map(|f| read(&out, f)).collect();
    assert_eq!(before, after);
}

#[test]
fn interrupted_run_resumes_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    Pipeline::from_config(fixture_config(&full)).unwrap().run(None).unwrap();

    let partial = dir.path().join("partial");
    let p = Pipeline::from_config(fixture_config(&partial)).unwrap();
    let m = p.run(Some(Stage::Score)).unwrap();
    assert_eq!(m.stage(Stage::Select).status, StageStatus::Pending);
    assert!(!partial.join(SFT_FILE).exists());
    let m = p.run(None).unwrap();
    let skipped: Vec<bool> = m.stages.iter().map(|s| s.skipped).collect();
    assert_eq!(skipped, [true, true, true, true, false, false, false]);
    for f in FINAL_OUTPUTS {
        assert_eq!(read(&full, f), read(&partial, f), "{f}");
    }
}

#[test]
fn single_stages_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let p = Pipeline::from_config(fixture_config(&out)).unwrap();

    let err = p.run_stage(Stage::Select).unwrap_err();
    assert!(matches!(err, PipelineError::MissingInput { stage: "select", .. }), "{err}");
    assert_eq!(err.exit_code(), 1);

    p.run(Some(Stage::Generate)).unwrap();
    assert!(!out.join(SCORES_FILE).exists());
    let m = p.run_stage(Stage::Score).unwrap();
    assert!(out.join(SCORES_FILE).exists());
    assert_eq!(m.stage(Stage::Score).status, StageStatus::Done);
    assert_eq!(m.stage(Stage::Report).status, StageStatus::Pending);

    p.run_stage(Stage::Report).unwrap();
    assert!(out.join(REPORT_FILE).exists());
    assert!(!out.join(SFT_FILE).exists());
}

#[test]
fn changing_k_invalidates_previous_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    Pipeline::from_config(fixture_config(&out)).unwrap().run(None).unwrap();
    let mut cfg = fixture_config(&out);
    cfg.k = 2;
    let m = Pipeline::from_config(cfg).unwrap().run(None).unwrap();
    assert!(m.stages.iter().all(|s| !s.skipped));
    assert_eq!(line_count(&out, SFT_FILE), 6);
    // Responses came from the cache.
    assert_eq!(m.gateway.cache_misses, 0);
}

#[test]
fn empty_completions_become_flags_and_are_not_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let script = MockScript {
        rules: vec![ScriptRule {
            contains: "\"hypertension\"".into(),
            response: String::new(),
        }],
        fail_on: vec![],
    };
    let p = instrumented(fixture_config(&out), Arc::new(MockBackend::with_script(script)));
    let m = p.run(None).unwrap();
    assert!(m.stages.iter().all(|s| s.status == StageStatus::Done));

    let records: Vec<GenerationRecord> = String::from_utf8(read(&out, SCORES_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let flagged: Vec<&GenerationRecord> = records.iter().filter(|r| r.is_flagged()).collect();
    assert!(flagged.len() >= 3);
    assert!(flagged.iter().all(|r| r.scores.is_none()));
    assert!(records
        .iter()
        .filter(|r| r.concept_id.as_str() == "38341003")
        .all(|r| r.is_flagged()));
    assert_eq!(line_count(&out, SFT_FILE), records.len() - flagged.len());
    assert!(!String::from_utf8(read(&out, SFT_FILE)).unwrap().contains("Write a knowledge card for the medical concept \\\"hypertension\\\""));
}

#[test]
fn hard_backend_failure_halts_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let script = MockScript {
        rules: vec![],
        fail_on: vec!["allergic asthma".into()],
    };
    let p = instrumented(fixture_config(&out), Arc::new(MockBackend::with_script(script)));
    let err = p.run(None).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let m = ontoforge::pipeline::RunManifest::load(&out).unwrap();
    assert_eq!(m.stage(Stage::Ingest).status, StageStatus::Done);
    let failed: Vec<&str> = m
        .stages
        .iter()
        .filter(|s| s.status == StageStatus::Failed)
        .map(|s| s.name.as_str())
        .collect();
    assert_eq!(failed, ["complete-defs"]);
    assert!(m.stage(Stage::CompleteDefs).error.as_deref().unwrap().contains("400"));
}

#[test]
fn output_directory_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let _held = RunLock::acquire(&out).unwrap();
    let err = Pipeline::from_config(fixture_config(&out)).unwrap().run(None).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)), "{err}");
}

#[test]
fn invalid_config_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.parallelism = 0;
    assert_eq!(Pipeline::from_config(cfg).err().unwrap().exit_code(), 1);
    let mut cfg = fixture_config(dir.path());
    cfg.ontology.concepts = Some(dir.path().join("nope.tsv"));
    assert_eq!(Pipeline::from_config(cfg).err().unwrap().exit_code(), 1);
}
