use super::{Backend, GatewayError, GenParams};
use crate::digest::{sha256_hex, FieldDigest};
use crate::metrics::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

pub const MOCK_EMBED_DIM: usize = 16;

const FILLER: &[&str] = &[
    "clinical", "patients", "treatment", "symptoms", "diagnosis", "chronic", "acute", "therapy",
    "risk", "factors", "management", "studies", "evidence", "common", "severe", "condition",
    "associated", "including", "often", "may", "present", "with", "and", "the", "of", "is", "in",
    "a", "to", "research", "outcomes", "mechanism", "disease", "care", "signs", "typically",
];

/// A scripted reply: the first rule whose `contains` occurs in the prompt wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<ScriptRule>,
    /// Prompts or embedding inputs containing any of these fail with a
    /// permanent HTTP 400.
    pub fail_on: Vec<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Deterministic offline backend.
///
/// Completions are a pure function of (prompt, params): words are drawn from
/// the prompt's own tokens and a small filler vocabulary by a generator
/// seeded with the request digest. Embeddings are bag-of-words random
/// projections, see [`mock_embedding`].
pub struct MockBackend {
    id: String,
    script: MockScript,
    complete_calls: AtomicUsize,
    embed_calls: AtomicUsize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::with_script(MockScript::default())
    }

    pub fn with_script(script: MockScript) -> Self {
        let id = if script == MockScript::default() {
            "mock-v1".to_owned()
        } else {
            let body = serde_json::to_string(&script).expect("script serializes");
            format!("mock-v1+script:{}", &sha256_hex(body.as_bytes())[..12])
        };
        MockBackend {
            id,
            script,
            complete_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
        }
    }

    pub fn complete_calls(&self) -> usize {
        self.complete_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    fn check_failure(&self, text: &str) -> Result<(), GatewayError> {
        match self.script.fail_on.iter().find(|n| text.contains(n.as_str())) {
            Some(n) => Err(GatewayError::Http {
                status: 400,
                body: format!("scripted failure on {n:?}"),
            }),
            None => Ok(()),
        }
    }
}

/// The mock completion rule, exposed for tests.
pub fn mock_completion(prompt: &str, params: &GenParams) -> String {
    let digest = FieldDigest::new().field(prompt).field(params.canonical()).hex();
    let mut seed = [0u8; 32];
    hex::decode_to_slice(&digest, &mut seed).expect("digest is 32 bytes of hex");
    let mut rng = ChaCha8Rng::from_seed(seed);
    let own = tokenize(prompt);
    let own = own.tokens();
    let n = 30 + rng.gen_range(0..30);
    let words: Vec<&str> = (0..n)
        .map(|_| {
            if !own.is_empty() && rng.gen_bool(0.55) {
                own[rng.gen_range(0..own.len())].as_str()
            } else {
                FILLER[rng.gen_range(0..FILLER.len())]
            }
        })
        .collect();
    format!("{}.", words.join(" "))
}

/// Bag-of-words projection: each token contributes 16 values in [-1, 1]
/// taken from its SHA-256; the embedding is their sum over the token
/// multiset. Identical texts embed identically and texts sharing tokens
/// correlate. Text without word tokens is treated as a single token.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let seq = tokenize(text);
    let fallback = [text.trim().to_owned()];
    let tokens: &[String] = if seq.is_empty() { &fallback } else { seq.tokens() };
    let mut v = vec![0.0; MOCK_EMBED_DIM];
    for t in tokens {
        let h = Sha256::digest(t.as_bytes());
        for (i, slot) in v.iter_mut().enumerate() {
            let raw = u16::from_le_bytes([h[2 * i], h[2 * i + 1]]);
            *slot += raw as f64 / u16::MAX as f64 * 2.0 - 1.0;
        }
    }
    v
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GatewayError> {
        self.complete_calls.fetch_add(1, Ordering::SeqCst);
        self.check_failure(prompt)?;
        if let Some(rule) = self.script.rules.iter().find(|r| prompt.contains(&r.contains)) {
            return Ok(rule.response.clone());
        }
        Ok(mock_completion(prompt, params))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.check_failure(text)?;
        Ok(mock_embedding(text))
    }
}
