use super::{PipelineError, Stage};
use crate::digest::file_sha256;
use crate::gateway::GatewayStats;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".ontoforge.lock";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    #[default]
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    /// Digest of the stage's settings and input files when it last ran.
    pub input_digest: Option<String>,
    pub outputs: Vec<OutputDigest>,
    pub counts: BTreeMap<String, u64>,
    pub duration_ms: u64,
    /// True when the last invocation reused this stage's outputs.
    pub skipped: bool,
    pub error: Option<String>,
}

/// Expected backend traffic for a live run, known after ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedCalls {
    pub generation: u64,
    pub definition_completion: u64,
    pub embedding: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub backend_id: String,
    pub template_versions: BTreeMap<String, String>,
    pub planned_calls: Option<PlannedCalls>,
    /// Gateway counters of the most recent invocation.
    pub gateway: GatewayStats,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(run_id: String, config_digest: String, backend_id: String, template_versions: BTreeMap<String, String>) -> Self {
        RunManifest {
            run_id,
            config_digest,
            backend_id,
            template_versions,
            planned_calls: None,
            gateway: GatewayStats::default(),
            stages: Stage::ALL
                .iter()
                .map(|s| StageRecord {
                    name: s.name().to_owned(),
                    ..StageRecord::default()
                })
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        match serde_json::from_str(&text) {
            Ok(m) => Some(m),
            Err(e) => {
                tracing::warn!(error = %e, "ignoring unreadable run manifest");
                None
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())
    }

    pub fn stage(&self, stage: Stage) -> &StageRecord {
        &self.stages[stage.index()]
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageRecord {
        &mut self.stages[stage.index()]
    }

    /// Whether every recorded output of `stage` is on disk with its digest.
    pub fn outputs_intact(&self, stage: Stage, dir: &Path) -> bool {
        let rec = self.stage(stage);
        rec.status == StageStatus::Done
            && rec.outputs.len() == stage.outputs().len()
            && rec
                .outputs
                .iter()
                .all(|o| file_sha256(&dir.join(&o.path)).is_ok_and(|d| d == o.sha256))
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a sibling temp file so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| io_err(path, e))
}

/// Exclusive ownership of an output directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Takes the lock. A lock left behind by a process that no longer
    /// exists (e.g. a killed run) is reclaimed.
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !holder_is_gone(&path) {
                        return Err(PipelineError::Locked(path));
                    }
                    tracing::warn!(lock = %path.display(), "removing stale lock");
                    let _ = std::fs::remove_file(&path);
                }
                Err(e) => return Err(io_err(&path, e)),
            }
        }
        Err(PipelineError::Locked(path))
    }
}

/// Only decidable where `/proc` exists; elsewhere locks are never reclaimed.
fn holder_is_gone(lock: &Path) -> bool {
    let proc = Path::new("/proc");
    if !proc.join("self").exists() {
        return false;
    }
    match std::fs::read_to_string(lock).ok().and_then(|s| s.trim().parse::<u32>().ok()) {
        Some(pid) => !proc.join(pid.to_string()).exists(),
        None => false,
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        // Larger than any pid_max, so never a live process.
        std::fs::write(dir.path().join(LOCK_FILE), "999999999\n").unwrap();
        let lock = RunLock::acquire(dir.path());
        if Path::new("/proc/self").exists() {
            lock.unwrap();
        }
    }

    #[test]
    fn manifest_round_trip_and_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("r".into(), "c".into(), "mock-v1".into(), BTreeMap::new());
        assert_eq!(m.stages.len(), Stage::ALL.len());
        std::fs::write(dir.path().join("ontology.json"), "{}").unwrap();
        let rec = m.stage_mut(Stage::Ingest);
        rec.status = StageStatus::Done;
        rec.outputs.push(OutputDigest {
            path: "ontology.json".into(),
            sha256: file_sha256(&dir.path().join("ontology.json")).unwrap(),
        });
        assert!(m.outputs_intact(Stage::Ingest, dir.path()));
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);

        std::fs::write(dir.path().join("ontology.json"), "{ }").unwrap();
        assert!(!m.outputs_intact(Stage::Ingest, dir.path()));
        assert!(!m.outputs_intact(Stage::Score, dir.path()));
    }
}
