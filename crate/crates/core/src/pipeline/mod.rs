//! Resumable stage runner: ingest → complete-defs → generate → score →
//! select → emit → report, plus the evaluation commands.
//!
//! Each stage reads and writes plain files in the output directory. The run
//! manifest records, per stage, a digest of its settings and input files and
//! the digests of its outputs; a stage is skipped when both still match.

pub mod config;
pub mod manifest;
mod stages;
mod tasks;

pub use config::{BackendConfig, BackendKind, OntologyPaths, PipelineConfig};
pub use manifest::{OutputDigest, PlannedCalls, RunLock, RunManifest, StageRecord, StageStatus, LOCK_FILE, MANIFEST_FILE};
pub use tasks::{EvalTask, EVAL_REPORT_FILE};

use crate::digest::{file_sha256, FieldDigest};
use crate::eval::EvalError;
use crate::gateway::{Backend, Gateway, GatewayError, GatewayStats, HttpBackend, MockBackend, MockScript, ResponseCache};
use crate::ontology::OntologyError;
use crate::prompts::{PromptError, TemplateSet};
use manifest::io_err;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const ONTOLOGY_FILE: &str = "ontology.json";
pub const DEFINITIONS_FILE: &str = "completed_definitions.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const SELECTION_FILE: &str = "selection_manifest.json";
pub const SFT_FILE: &str = "sft.jsonl";
pub const DPO_FILE: &str = "dpo.jsonl";
pub const REPORT_FILE: &str = "score_report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("stage {stage}: missing input {} (run the upstream stage first)", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error("output directory is locked by another run ({})", .0.display())]
    Locked(PathBuf),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Backend {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// 1 usage/config, 2 data/validation, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Usage(_)
            | PipelineError::MissingInput { .. }
            | PipelineError::Locked(_)
            | PipelineError::Prompt(_) => 1,
            PipelineError::Backend { .. } | PipelineError::Eval(EvalError::AllFailed(_)) => 3,
            PipelineError::Ontology(_) | PipelineError::Eval(_) | PipelineError::Io { .. } | PipelineError::Data(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    CompleteDefs,
    Generate,
    Score,
    Select,
    Emit,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::CompleteDefs,
        Stage::Generate,
        Stage::Score,
        Stage::Select,
        Stage::Emit,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::CompleteDefs => "complete-defs",
            Stage::Generate => "generate",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Emit => "emit",
            Stage::Report => "report",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Files in the output directory this stage reads.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[],
            Stage::CompleteDefs => &[ONTOLOGY_FILE],
            Stage::Generate => &[ONTOLOGY_FILE, DEFINITIONS_FILE],
            Stage::Score => &[GENERATIONS_FILE],
            Stage::Select | Stage::Report => &[SCORES_FILE],
            Stage::Emit => &[SCORES_FILE, SELECTION_FILE],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[ONTOLOGY_FILE],
            Stage::CompleteDefs => &[DEFINITIONS_FILE],
            Stage::Generate => &[GENERATIONS_FILE],
            Stage::Score => &[SCORES_FILE],
            Stage::Select => &[SELECTION_FILE],
            Stage::Emit => &[SFT_FILE, DPO_FILE],
            Stage::Report => &[REPORT_FILE],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
            PipelineError::Usage(format!("unknown stage {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Built-in templates overlaid with the configured directory, if any.
pub fn load_templates(config: &PipelineConfig) -> Result<TemplateSet, PipelineError> {
    let mut set = TemplateSet::defaults();
    if let Some(dir) = &config.templates {
        set.merge(TemplateSet::load_dir(dir)?);
    }
    Ok(set)
}

pub fn build_backend(config: &PipelineConfig) -> Result<Arc<dyn Backend>, PipelineError> {
    Ok(match config.backend.kind {
        BackendKind::Mock => Arc::new(MockBackend::new()),
        BackendKind::Scripted => {
            let path = config
                .backend
                .script
                .as_deref()
                .ok_or_else(|| PipelineError::Config("backend.script is not set".into()))?;
            Arc::new(MockBackend::with_script(MockScript::load(path).map_err(PipelineError::Config)?))
        }
        BackendKind::Http => Arc::new(
            HttpBackend::from_env(config.backend.http.clone()).map_err(|e| PipelineError::Config(e.to_string()))?,
        ),
    })
}

/// Gateway with the configured backend, cache and retry policy.
pub fn build_gateway(config: &PipelineConfig) -> Result<Gateway, PipelineError> {
    Ok(Gateway::new(build_backend(config)?)
        .with_cache(ResponseCache::new(config.cache_dir()))
        .with_retry(config.backend.retry)
        .with_max_tokens_ceiling(config.backend.max_tokens_ceiling))
}

fn stats_since(now: GatewayStats, start: GatewayStats) -> GatewayStats {
    GatewayStats {
        generate_requests: now.generate_requests - start.generate_requests,
        generate_attempts: now.generate_attempts - start.generate_attempts,
        embed_requests: now.embed_requests - start.embed_requests,
        embed_attempts: now.embed_attempts - start.embed_attempts,
        cache_hits: now.cache_hits - start.cache_hits,
        cache_misses: now.cache_misses - start.cache_misses,
    }
}

fn new_run_id() -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("run-{}-{:06}-{}", now.as_secs(), now.subsec_micros(), std::process::id())
}

pub struct Pipeline {
    config: PipelineConfig,
    templates: TemplateSet,
    gateway: Gateway,
}

impl Pipeline {
    /// Validates `config` and builds templates and gateway from it.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let templates = load_templates(&config)?;
        let gateway = build_gateway(&config)?;
        Ok(Pipeline {
            config,
            templates,
            gateway,
        })
    }

    /// Uses an externally built gateway (e.g. an instrumented mock).
    pub fn with_parts(config: PipelineConfig, templates: TemplateSet, gateway: Gateway) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline {
            config,
            templates,
            gateway,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    /// Runs every stage up to and including `until`, reusing stages whose
    /// inputs and outputs are unchanged. Once a stage re-runs, all later
    /// stages re-run too.
    pub fn run(&self, until: Option<Stage>) -> Result<RunManifest, PipelineError> {
        let last = until.unwrap_or(Stage::Report);
        let stages: Vec<Stage> = Stage::ALL.into_iter().filter(|s| *s <= last).collect();
        self.execute(&stages, false)
    }

    /// Runs exactly one stage, unconditionally. Its upstream outputs must exist.
    pub fn run_stage(&self, stage: Stage) -> Result<RunManifest, PipelineError> {
        self.execute(&[stage], true)
    }

    fn execute(&self, stages: &[Stage], force: bool) -> Result<RunManifest, PipelineError> {
        let dir = self.output_dir();
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let _lock = RunLock::acquire(dir)?;

        let config_digest = self.config.digest();
        let mut manifest = match RunManifest::load(dir) {
            Some(m) if m.config_digest == config_digest && m.stages.len() == Stage::ALL.len() => m,
            Some(_) => {
                tracing::info!("configuration changed; previous stage results are discarded");
                RunManifest::new(String::new(), config_digest, String::new(), Default::default())
            }
            None => RunManifest::new(String::new(), config_digest, String::new(), Default::default()),
        };
        manifest.run_id = new_run_id();
        manifest.backend_id = self.gateway.backend_id().to_owned();
        manifest.template_versions = self.templates.versions();
        for rec in &mut manifest.stages {
            rec.skipped = false;
        }

        let start = self.gateway.stats();
        let mut dirty = force;
        for &stage in stages {
            let input_digest = self.input_digest(stage)?;
            let reusable = !dirty
                && manifest.stage(stage).input_digest.as_deref() == Some(input_digest.as_str())
                && manifest.outputs_intact(stage, dir);
            if reusable {
                tracing::info!(stage = stage.name(), "outputs up to date; skipping");
                manifest.stage_mut(stage).skipped = true;
                continue;
            }
            dirty = true;
            tracing::info!(stage = stage.name(), "running");
            let t0 = Instant::now();
            let before = self.gateway.stats();
            let outcome = self.run_one(stage);
            let duration_ms = t0.elapsed().as_millis() as u64;
            let used = stats_since(self.gateway.stats(), before);
            match outcome {
                Ok(mut counts) => {
                    if used.generate_requests + used.embed_requests > 0 {
                        counts.insert("cache_hits".into(), used.cache_hits);
                        counts.insert("backend_generate_attempts".into(), used.generate_attempts);
                        counts.insert("backend_embed_attempts".into(), used.embed_attempts);
                    }
                    if stage == Stage::Ingest {
                        let n = counts.get("concepts").copied().unwrap_or(0);
                        manifest.planned_calls = Some(PlannedCalls {
                            generation: 6 * n,
                            definition_completion: counts.get("missing_definitions").copied().unwrap_or(0),
                            embedding: 6 * n,
                        });
                    }
                    let outputs = stage
                        .outputs()
                        .iter()
                        .map(|name| {
                            let path = dir.join(name);
                            Ok(OutputDigest {
                                path: (*name).to_owned(),
                                sha256: file_sha256(&path).map_err(|e| io_err(&path, e))?,
                            })
                        })
                        .collect::<Result<Vec<_>, PipelineError>>()?;
                    *manifest.stage_mut(stage) = StageRecord {
                        name: stage.name().to_owned(),
                        status: StageStatus::Done,
                        input_digest: Some(input_digest),
                        outputs,
                        counts,
                        duration_ms,
                        skipped: false,
                        error: None,
                    };
                    manifest.gateway = stats_since(self.gateway.stats(), start);
                    manifest.save(dir)?;
                }
                Err(e) => {
                    let rec = manifest.stage_mut(stage);
                    rec.status = StageStatus::Failed;
                    rec.input_digest = None;
                    rec.outputs.clear();
                    rec.duration_ms = duration_ms;
                    rec.error = Some(e.to_string());
                    manifest.gateway = stats_since(self.gateway.stats(), start);
                    manifest.save(dir)?;
                    return Err(e);
                }
            }
        }
        manifest.gateway = stats_since(self.gateway.stats(), start);
        manifest.save(dir)?;
        Ok(manifest)
    }

    /// Digest over the stage's settings and the contents of its inputs.
    fn input_digest(&self, stage: Stage) -> Result<String, PipelineError> {
        let settings = self.stage_settings(stage)?;
        let mut d = FieldDigest::new().field(stage.name()).field(settings.to_string());
        for name in stage.inputs() {
            let path = self.output_dir().join(name);
            if !path.is_file() {
                return Err(PipelineError::MissingInput {
                    stage: stage.name(),
                    path,
                });
            }
            d = d.field(name).field(file_sha256(&path).map_err(|e| io_err(&path, e))?);
        }
        Ok(d.hex())
    }

    fn stage_settings(&self, stage: Stage) -> Result<serde_json::Value, PipelineError> {
        use serde_json::json;
        let c = &self.config;
        let versions = self.templates.versions();
        let backend = self.gateway.backend_id();
        Ok(match stage {
            Stage::Ingest => {
                let mut files = vec![c.concepts_path()?, c.relations_path()?];
                files.extend(c.ontology.descriptions.as_deref());
                let digests = files
                    .into_iter()
                    .map(|p| file_sha256(p).map_err(|e| io_err(p, e)))
                    .collect::<Result<Vec<_>, _>>()?;
                json!({ "sources": digests, "has_descriptions": c.ontology.descriptions.is_some() })
            }
            Stage::CompleteDefs => json!({
                "backend": backend,
                "params": c.generation,
                "few_shot": c.few_shot,
                "template": versions.get(crate::prompts::DEFINITION_FEWSHOT),
            }),
            Stage::Generate => json!({
                "backend": backend,
                "params": c.generation,
                "caps": c.caps,
                "templates": crate::prompts::CorpusKind::ALL
                    .iter()
                    .flat_map(|k| [versions.get(k.plain_template()), versions.get(k.onto_template())])
                    .collect::<Vec<_>>(),
            }),
            Stage::Score => json!({ "backend": backend }),
            Stage::Select => json!({ "k": c.k }),
            Stage::Emit => json!({
                "k": c.k,
                "sentinels": crate::prompts::CorpusKind::ALL
                    .iter()
                    .map(|k| self.templates.ontology_sentinel(*k))
                    .collect::<Vec<_>>(),
            }),
            Stage::Report => json!({ "bin_width": c.bin_width }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert_eq!(Stage::ALL[s.index()], s);
        }
        let err = "bogus".parse::<Stage>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn every_input_is_an_earlier_output() {
        for s in Stage::ALL {
            for input in s.inputs() {
                assert!(Stage::ALL
                    .iter()
                    .any(|up| *up < s && up.outputs().contains(input)));
            }
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 2);
        let backend = PipelineError::Backend {
            context: "c".into(),
            source: GatewayError::Network("down".into()),
        };
        assert_eq!(backend.exit_code(), 3);
    }
}
