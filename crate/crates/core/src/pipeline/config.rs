use super::PipelineError;
use crate::digest::sha256_hex;
use crate::gateway::{GenParams, HttpConfig, RetryPolicy};
use crate::ontology::ContextCaps;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const BASE_URL_ENV: &str = "ONTOFORGE_BASE_URL";
pub const MODEL_ENV: &str = "ONTOFORGE_MODEL";
pub const EMBED_MODEL_ENV: &str = "ONTOFORGE_EMBED_MODEL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OntologyPaths {
    pub concepts: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Deterministic offline backend.
    #[default]
    Mock,
    /// Mock backend with canned responses loaded from `script`.
    Scripted,
    /// OpenAI-compatible HTTP endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub script: Option<PathBuf>,
    pub http: HttpConfig,
    pub retry: RetryPolicy,
    pub max_tokens_ceiling: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            script: None,
            http: HttpConfig::default(),
            retry: RetryPolicy::default(),
            max_tokens_ceiling: crate::gateway::DEFAULT_MAX_TOKENS_CEILING,
        }
    }
}

/// Everything a run needs. Loaded from TOML; relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ontology: OntologyPaths,
    /// Directory of template overrides; built-in templates fill the gaps.
    pub templates: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub generation: GenParams,
    pub parallelism: usize,
    /// Records selected per corpus kind.
    pub k: usize,
    pub caps: ContextCaps,
    pub few_shot: usize,
    pub bin_width: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ontology: OntologyPaths::default(),
            templates: None,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            backend: BackendConfig::default(),
            generation: GenParams::default(),
            parallelism: 4,
            k: 100_000,
            caps: ContextCaps::default(),
            few_shot: 3,
            bin_width: 0.1,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase_paths(base);
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase_opt(base, &mut self.ontology.concepts);
        rebase_opt(base, &mut self.ontology.relations);
        rebase_opt(base, &mut self.ontology.descriptions);
        rebase_opt(base, &mut self.templates);
        rebase(base, &mut self.output_dir);
        rebase_opt(base, &mut self.cache_dir);
        rebase_opt(base, &mut self.backend.script);
    }

    /// Applies `ONTOFORGE_*` endpoint overrides. The API key itself is read
    /// by the HTTP backend and never stored in the config.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(BASE_URL_ENV) {
            self.backend.http.base_url = v;
        }
        if let Some(v) = get(MODEL_ENV) {
            self.backend.http.model = v;
        }
        if let Some(v) = get(EMBED_MODEL_ENV) {
            self.backend.http.embed_model = v;
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn concepts_path(&self) -> Result<&Path, PipelineError> {
        self.ontology
            .concepts
            .as_deref()
            .ok_or_else(|| PipelineError::Config("ontology.concepts is not set".into()))
    }

    pub fn relations_path(&self) -> Result<&Path, PipelineError> {
        self.ontology
            .relations
            .as_deref()
            .ok_or_else(|| PipelineError::Config("ontology.relations is not set".into()))
    }

    /// Checks value ranges and that input paths exist.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return bad(format!("bin_width must be positive, got {}", self.bin_width));
        }
        self.generation
            .check(self.backend.max_tokens_ceiling)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut inputs = vec![("ontology.concepts", self.concepts_path()?), ("ontology.relations", self.relations_path()?)];
        if let Some(d) = &self.ontology.descriptions {
            inputs.push(("ontology.descriptions", d));
        }
        if let Some(t) = &self.templates {
            inputs.push(("templates", t));
        }
        if self.backend.kind == BackendKind::Scripted {
            match &self.backend.script {
                Some(s) => inputs.push(("backend.script", s)),
                None => return bad("backend.kind = \"scripted\" requires backend.script".into()),
            }
        }
        for (name, p) in inputs {
            if !p.exists() {
                return bad(format!("{name}: {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Digest of the canonical JSON form. Output location and parallelism
    /// are excluded since they do not affect results.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        c.parallelism = 0;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
