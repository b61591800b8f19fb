use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{
    CompletionProvider, CompletionRequest, Embedding, EmbeddingProvider, ProviderConfig,
    ProviderError,
};

const EMBED_BATCH: usize = 64;

/// Shared request plumbing: auth header, timeout and retry loop.
struct Client {
    agent: ureq::Agent,
    endpoint: String,
    auth: Option<(String, String)>,
    max_retries: u32,
}

impl Client {
    fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.clone().unwrap_or_default();
        let auth = cfg.api_key()?.map(|key| {
            if cfg.auth_header.eq_ignore_ascii_case("authorization") {
                ("authorization".to_string(), format!("Bearer {key}"))
            } else {
                (cfg.auth_header.clone(), key)
            }
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, endpoint, auth, max_retries: cfg.max_retries })
    }

    /// POSTs `body`, retrying transport failures, 429 and 5xx up to `max_retries` times.
    fn post(&self, body: &Value, digest: &str) -> Result<Value, ProviderError> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(100 * u64::from(attempt - 1)));
            }
            let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
            if let Some((name, value)) = &self.auth {
                req = req.header(name.as_str(), value.as_str());
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}");
                        warn!(attempt, status, "provider call failed, retrying");
                        continue;
                    }
                    if status >= 400 {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(ProviderError::Content {
                            digest: digest.to_string(),
                            message: format!("HTTP {status}: {text}"),
                        });
                    }
                    return resp.body_mut().read_json::<Value>().map_err(|e| {
                        ProviderError::Content {
                            digest: digest.to_string(),
                            message: format!("unparseable response body: {e}"),
                        }
                    });
                }
                Err(e) => {
                    last = e.to_string();
                    warn!(attempt, error = %last, "provider transport error");
                }
            }
        }
        Err(ProviderError::Retriable { digest: digest.to_string(), attempts, message: last })
    }
}

/// Messages-style completion endpoint: `{model, system, messages, max_tokens, temperature}`.
pub struct HttpCompletion {
    client: Client,
    model: String,
    pointer: String,
}

impl HttpCompletion {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::from_config(cfg)?,
            model: cfg.model_name.clone(),
            pointer: cfg.response_pointer.clone(),
        })
    }

    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        json!({
            "model": self.model,
            "system": req.system_prompt,
            "messages": [{ "role": "user", "content": req.user_prompt }],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        })
    }
}

impl CompletionProvider for HttpCompletion {
    fn id(&self) -> String {
        format!("http-completion/{}", self.model)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        let digest = req.digest();
        let resp = self.client.post(&self.request_body(req), &digest)?;
        match resp.pointer(&self.pointer).and_then(Value::as_str) {
            Some(text) if !text.trim().is_empty() => Ok(text.to_string()),
            Some(_) => Err(ProviderError::Content { digest, message: "empty completion".into() }),
            None => Err(ProviderError::Content {
                digest,
                message: format!("response has no string at {}", self.pointer),
            }),
        }
    }
}

/// `{model, input: [..]}` → `{data: [{embedding: [..]}, ..]}`.
pub struct HttpEmbedding {
    client: Client,
    model: String,
}

impl HttpEmbedding {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { client: Client::from_config(cfg)?, model: cfg.model_name.clone() })
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn id(&self) -> String {
        format!("http-embedding/{}", self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(EMBED_BATCH) {
            let body = json!({ "model": self.model, "input": batch });
            let digest = super::text_digest(&body.to_string());
            let resp = self.client.post(&body, &digest)?;
            let data = resp.get("data").and_then(Value::as_array).ok_or_else(|| {
                ProviderError::Content { digest: digest.clone(), message: "missing data array".into() }
            })?;
            if data.len() != batch.len() {
                return Err(ProviderError::Content {
                    digest,
                    message: format!("expected {} embeddings, got {}", batch.len(), data.len()),
                });
            }
            for item in data {
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .ok_or_else(|| ProviderError::Content {
                        digest: digest.clone(),
                        message: "item without embedding".into(),
                    })?;
                out.push(Embedding::new(values).map_err(|e| ProviderError::Content {
                    digest: digest.clone(),
                    message: e.to_string(),
                })?);
            }
        }
        Ok(out)
    }
}
