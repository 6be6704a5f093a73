//! HTTP transport for an OpenAI-compatible chat-completions endpoint.
//!
//! Configured from the environment only; the credential is read per process
//! and never written anywhere.

use std::time::Duration;

use reflect_core::llm::{CompletionRequest, LlmError, Transport, TransportError};
use serde_json::{json, Value};

pub const ENV_URL: &str = "REFLECT_LLM_URL";
pub const ENV_KEY: &str = "REFLECT_LLM_API_KEY";
pub const ENV_MODEL: &str = "REFLECT_LLM_MODEL";

pub struct HttpTransport {
    url: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Result<Self, LlmError> {
        let (url, model, api_key) = (url.into(), model.into(), api_key.into());
        if api_key.trim().is_empty() {
            return Err(LlmError::ConfigError(format!("{ENV_KEY} is empty")));
        }
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(LlmError::ConfigError(format!("provider url {url:?} is not http(s)")));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Self {
            url,
            model,
            api_key,
            agent,
        })
    }

    /// Reads `REFLECT_LLM_URL`, `REFLECT_LLM_API_KEY` and `REFLECT_LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, LlmError> {
        let url = get(ENV_URL).unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into());
        let key = get(ENV_KEY).ok_or_else(|| LlmError::ConfigError(format!("{ENV_KEY} is not set")))?;
        let model = get(ENV_MODEL).unwrap_or_else(|| "gpt-4o".into());
        Self::new(url, model, key)
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
        });
        if let Some(seed) = req.determinism_seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Transport for HttpTransport {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, req: &CompletionRequest, timeout: Duration) -> Result<String, TransportError> {
        let resp = self
            .agent
            .post(&self.url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(req));
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => return Err(TransportError::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if status != 200 {
            return Err(TransportError::from_status(status, &text));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| TransportError::Fatal(format!("bad json: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
    }
}
