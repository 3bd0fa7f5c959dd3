use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, CompletionRequest, ProviderError, ProviderSpec};

/// Messages-style chat-completion endpoint:
/// `{"model", "messages": [{"role": "user", "content"}], "temperature", "max_tokens"}`
/// answered by `{"choices": [{"message": {"content"}}]}`.
pub struct HttpBackend {
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(spec: &ProviderSpec) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(spec.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

pub(crate) fn request_body(spec: &ProviderSpec, req: &CompletionRequest) -> Value {
    json!({
        "model": spec.model_name,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

pub(crate) fn extract_content(body: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn call(&self, spec: &ProviderSpec, req: &CompletionRequest) -> Result<String, ProviderError> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| ProviderError::Config(format!("{}: no endpoint", spec.id)))?;
        let key_env = spec.api_key_env.as_deref().unwrap_or_default();
        let key = std::env::var(key_env)
            .map_err(|_| ProviderError::Auth(format!("environment variable {key_env} is not set")))?;
        let auth_value = if spec.auth_header.eq_ignore_ascii_case("authorization") {
            format!("Bearer {key}")
        } else {
            key
        };
        let body = request_body(spec, req).to_string();
        let mut resp = self
            .agent
            .post(endpoint)
            .header("Content-Type", "application/json")
            .header(spec.auth_header.as_str(), auth_value.as_str())
            .send(body.as_str())
            .map_err(|e| match e {
                ureq::Error::BadUri(m) => ProviderError::Config(m),
                other => ProviderError::Transient(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        match status {
            200..=299 => extract_content(&text),
            401 | 403 => Err(ProviderError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => Err(ProviderError::Malformed(format!("HTTP {status}: {text}"))),
        }
    }
}
