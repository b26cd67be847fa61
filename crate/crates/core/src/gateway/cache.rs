use super::{GatewayError, GenParams};
use crate::prompts::PromptText;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt: String,
    pub template_version: String,
    pub params: GenParams,
    pub text: String,
    pub backend_id: String,
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(prompt: &PromptText, params: &GenParams, text: &str, backend_id: &str) -> Self {
        CacheEntry {
            prompt: prompt.text.clone(),
            template_version: prompt.template_version.clone(),
            params: params.clone(),
            text: text.to_owned(),
            backend_id: backend_id.to_owned(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// On-disk store at `<root>/<first two hex chars>/<digest>.json`.
#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache {
            root: root.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{digest}.json"))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, digest: &str) -> Option<CacheEntry> {
        let path = self.path_for(digest);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring corrupt cache entry");
                None
            }
        }
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial entry.
    pub fn put(&self, digest: &str, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.path_for(digest);
        let err = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir).map_err(err)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{digest}.{}.{n}.tmp", std::process::id()));
        let body = serde_json::to_vec_pretty(entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        std::fs::write(&tmp, body).map_err(err)?;
        std::fs::rename(&tmp, &path).map_err(err)
    }
}
