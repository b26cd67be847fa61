use super::{Backend, GatewayError, GenParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ONTOFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub chat_path: String,
    pub embed_path: String,
    pub model: String,
    pub embed_model: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://localhost:8000/v1".into(),
            chat_path: "/chat/completions".into(),
            embed_path: "/embeddings".into(),
            model: "seed-model".into(),
            embed_model: "sentence-encoder".into(),
            timeout_secs: 120,
        }
    }
}

/// Client for chat-completion and embedding endpoints following the
/// OpenAI wire format.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: Option<String>,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        let id = format!("openai-compat:{}+{}", config.model, config.embed_model);
        Ok(HttpBackend {
            client,
            config,
            api_key,
            id,
        })
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(config: HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| GatewayError::Network(e.to_string()))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(512);
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Schema(format!("invalid JSON: {e}")))
    }
}

pub(crate) fn chat_request(model: &str, prompt: &str, params: &GenParams) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if !params.stop_sequences.is_empty() {
        body["stop"] = json!(params.stop_sequences);
    }
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<String, GatewayError> {
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::Schema("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers send null content for refusals.
        Value::Null => Ok(String::new()),
        other => Err(GatewayError::Schema(format!("content is not a string: {other}"))),
    }
}

pub(crate) fn parse_embedding_response(v: &Value) -> Result<Vec<f64>, GatewayError> {
    let arr = v
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Schema("missing data[0].embedding".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| GatewayError::Schema(format!("bad embedding entry {x}")))
        })
        .collect()
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GatewayError> {
        let body = chat_request(&self.config.model, prompt, params);
        parse_chat_response(&self.post(&self.config.chat_path, &body)?)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({"model": self.config.embed_model, "input": text});
        parse_embedding_response(&self.post(&self.config.embed_path, &body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let params = GenParams {
            stop_sequences: vec!["\n\n".into()],
            seed: Some(7),
            ..GenParams::default()
        };
        let body = chat_request("m", "hello", &params);
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["max_tokens"], 1024);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["stop"][0], "\n\n");
        let bare = chat_request("m", "hello", &GenParams::default());
        assert!(bare.get("seed").is_none() && bare.get("stop").is_none());
    }

    #[test]
    fn response_parsing() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(parse_chat_response(&ok).unwrap(), "hi");
        let null = json!({"choices": [{"message": {"content": null}}]});
        assert_eq!(parse_chat_response(&null).unwrap(), "");
        assert!(matches!(parse_chat_response(&json!({"x": 1})), Err(GatewayError::Schema(_))));

        let emb = json!({"data": [{"embedding": [0.5, -1.0]}]});
        assert_eq!(parse_embedding_response(&emb).unwrap(), vec![0.5, -1.0]);
        let bad = json!({"data": [{"embedding": [0.5, "x"]}]});
        assert!(parse_embedding_response(&bad).is_err());
    }
}
