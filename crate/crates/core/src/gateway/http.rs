//! OpenAI-compatible HTTP backend.
//!
//! Generation uses `POST {base_url}/chat/completions`. Teacher-forced scoring
//! uses the legacy `POST {base_url}/completions` endpoint with `echo` and
//! `logprobs`, summing the log-probabilities of tokens past the prompt.
//! Rewards use `POST {base_url}/{reward_path}` with `{model, messages}` and
//! expect `{"reward": <number>}` back.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{transcript, Backend, BackendError, CachedResponse, Capabilities, GatewayRequest, Message, TargetScore};

/// Environment variable carrying the bearer token for `backend_id`.
pub fn api_key_env_var(backend_id: &str) -> String {
    let suffix: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("CLARIFY_API_KEY_{suffix}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_reward_path")]
    pub reward_path: String,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_reward_path() -> String {
    "rewards".into()
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    capabilities: Capabilities,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Build a client for `backend_id`, reading its key from the environment.
    pub fn new(backend_id: &str, config: HttpBackendConfig, capabilities: Capabilities) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            api_key: std::env::var(api_key_env_var(backend_id)).ok(),
            config,
            capabilities,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

/// Request body for a chat completion, in wire field order.
pub(crate) fn chat_body(model: &str, req: &GatewayRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    let obj = body.as_object_mut().expect("object");
    if req.logprobs {
        obj.insert("logprobs".into(), json!(true));
    }
    if let Some(stop) = &req.stop {
        obj.insert("stop".into(), json!(stop));
    }
    if let Some(seed) = req.seed {
        obj.insert("seed".into(), json!(seed));
    }
    body
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<CachedResponse, BackendError> {
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))?
        .to_owned();
    let total_logprob = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .map(|tokens| {
            tokens
                .iter()
                .map(|t| t.get("logprob").and_then(Value::as_f64).unwrap_or(0.0))
                .sum::<f64>()
        });
    Ok(CachedResponse::Completion { text, total_logprob })
}

pub(crate) fn parse_echo_score(v: &Value, prompt_chars: usize) -> Result<TargetScore, BackendError> {
    let lp = v
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| BackendError::Protocol("response has no logprobs".into()))?;
    let offsets = lp.get("text_offset").and_then(Value::as_array);
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Protocol("logprobs has no token_logprobs".into()))?;
    let offsets =
        offsets.ok_or_else(|| BackendError::Protocol("logprobs has no text_offset".into()))?;
    let mut total = 0.0;
    let mut n = 0u32;
    for (off, val) in offsets.iter().zip(values) {
        if off.as_u64().unwrap_or(0) as usize >= prompt_chars {
            total += val
                .as_f64()
                .ok_or_else(|| BackendError::Protocol("null log-probability for target token".into()))?;
            n += 1;
        }
    }
    Ok(TargetScore {
        total_logprob: total,
        n_tokens: Some(n),
    })
}

impl Backend for HttpBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn complete(&self, req: &GatewayRequest) -> Result<CachedResponse, BackendError> {
        let v = self.post("chat/completions", &chat_body(&self.config.model, req))?;
        parse_chat_response(&v)
    }

    fn score(&self, prompt: &[Message], target: &str) -> Result<TargetScore, BackendError> {
        let prefix = transcript(prompt);
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{prefix}{target}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let v = self.post("completions", &body)?;
        parse_echo_score(&v, prefix.chars().count())
    }

    fn reward(&self, prompt: &[Message], response: &str) -> Result<f64, BackendError> {
        let mut messages = prompt.to_vec();
        messages.push(Message::assistant(response));
        let v = self.post(&self.config.reward_path, &json!({"model": self.config.model, "messages": messages}))?;
        v.get("reward")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Protocol("reward response has no numeric `reward`".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_var_name() {
        assert_eq!(api_key_env_var("gpt4-oracle"), "CLARIFY_API_KEY_GPT4_ORACLE");
    }

    #[test]
    fn chat_body_wire_shape() {
        let req = GatewayRequest::new("b", vec![Message::user("hi")])
            .temperature(1.0)
            .max_tokens(8)
            .stop(vec!["\n".into()])
            .seed(Some(3));
        let body = chat_body("llama", &req);
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"max_tokens":8,"messages":[{"content":"hi","role":"user"}],"model":"llama","seed":3,"stop":["\n"],"temperature":1.0}"#
        );
    }

    #[test]
    fn chat_response_logprobs_are_summed() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "Paris"},
            "logprobs": {"content": [{"token": "Par", "logprob": -0.25}, {"token": "is", "logprob": -0.5}]}}]});
        assert_eq!(
            parse_chat_response(&v).unwrap(),
            CachedResponse::Completion {
                text: "Paris".into(),
                total_logprob: Some(-0.75)
            }
        );
        assert!(parse_chat_response(&json!({"choices": []})).is_err());
    }

    #[test]
    fn echo_score_skips_prompt_tokens() {
        let v = json!({"choices": [{"logprobs": {
            "tokens": ["Q", ":", " Paris"],
            "token_logprobs": [null, -1.0, -0.5],
            "text_offset": [0, 1, 2]}}]});
        let s = parse_echo_score(&v, 2).unwrap();
        assert_eq!((s.total_logprob, s.n_tokens), (-0.5, Some(1)));
    }
}
