//! OpenAI-compatible `chat/completions` backend.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{AttemptError, Backend, ChatRequest, ChatResponse, LlmError};

pub const API_KEY_ENV: &str = "DELVEPO_API_KEY";

#[derive(Debug, Serialize)]
pub struct WireMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct WireRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<WireMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl<'a> WireRequest<'a> {
    pub fn from_chat(req: &'a ChatRequest) -> Self {
        let mut messages = Vec::with_capacity(2);
        if !req.system.is_empty() {
            messages.push(WireMessage { role: "system", content: &req.system });
        }
        messages.push(WireMessage { role: "user", content: &req.user });
        Self {
            model: &req.model_id,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Debug, Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct OpenAiBackend {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            model: model.into(),
            agent,
        }
    }

    /// Reads the bearer token from `DELVEPO_API_KEY`.
    pub fn from_env(base_url: &str, model: impl Into<String>, timeout: Duration) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{API_KEY_ENV} is not set; sending requests without authorization");
        }
        Ok(Self::new(base_url, model, key, timeout))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, req: &ChatRequest, _call_index: u64) -> Result<ChatResponse, AttemptError> {
        let body = serde_json::to_string(&WireRequest::from_chat(req))
            .map_err(|e| AttemptError::Rejected { status: 0, body: e.to_string() })?;
        let started = Instant::now();
        let mut call = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send(body.as_str())
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(AttemptError::Transient(format!("HTTP {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(AttemptError::Rejected { status, body: text });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Transient(format!("bad response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let usage = parsed.usage.unwrap_or(WireUsage { prompt_tokens: 0, completion_tokens: 0 });
        Ok(ChatResponse {
            text: content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_body_shape() {
        let req = ChatRequest::new("question").with_system("be brief");
        let req = ChatRequest { model_id: "m".into(), ..req };
        let v = serde_json::to_value(WireRequest::from_chat(&req)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "model": "m",
                "messages": [
                    {"role": "system", "content": "be brief"},
                    {"role": "user", "content": "question"}
                ],
                "temperature": 0.5,
                "max_tokens": 1024
            })
        );
    }

    #[test]
    fn empty_system_is_omitted() {
        let req = ChatRequest::new("q");
        let v = serde_json::to_value(WireRequest::from_chat(&req)).unwrap();
        assert_eq!(v["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn endpoint_joins_cleanly() {
        let b = OpenAiBackend::new("http://localhost:1/v1/", "m", None, Duration::from_secs(1));
        assert_eq!(b.endpoint(), "http://localhost:1/v1/chat/completions");
    }
}
