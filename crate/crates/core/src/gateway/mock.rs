//! Deterministic scripted backend.
//!
//! A script is a JSON array of `{match, respond}` entries. A request is
//! answered by the first entry, in file order, whose every present `match`
//! field agrees with it; unmatched requests fail as unscripted.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CachedResponse, Capabilities, GatewayRequest, Message, TargetScore};

/// Message contents joined by newlines; what `prompt_contains` searches.
pub fn transcript(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// SHA-256 (hex) of the canonical JSON of `messages`.
pub fn messages_digest(messages: &[Message]) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(messages).expect("messages serialize")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockKind {
    #[default]
    Complete,
    Score,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => Vec::new(),
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockMatch {
    #[serde(default)]
    pub kind: MockKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages_digest: Option<String>,
    /// Every listed string must occur in the transcript.
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Vec::is_empty")]
    pub prompt_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    /// Scoring target, matched exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRespond {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub matcher: MockMatch,
    pub respond: MockRespond,
}

impl MockEntry {
    /// Completion entry: transcript contains `needle` → `text`.
    pub fn complete(needle: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            matcher: MockMatch {
                prompt_contains: vec![needle.into()],
                ..MockMatch::default()
            },
            respond: MockRespond {
                text: Some(text.into()),
                ..MockRespond::default()
            },
        }
    }

    pub fn score(needle: impl Into<String>, target: impl Into<String>, total_logprob: f64) -> Self {
        Self {
            matcher: MockMatch {
                kind: MockKind::Score,
                prompt_contains: vec![needle.into()],
                target: Some(target.into()),
                ..MockMatch::default()
            },
            respond: MockRespond {
                total_logprob: Some(total_logprob),
                ..MockRespond::default()
            },
        }
    }

    pub fn score_tokens(needle: impl Into<String>, target: impl Into<String>, token_logprobs: Vec<f64>) -> Self {
        let mut e = Self::score(needle, target, 0.0);
        e.respond.total_logprob = None;
        e.respond.token_logprobs = Some(token_logprobs);
        e
    }

    /// Reward entry: transcript (prompt plus response) contains `needle`.
    pub fn reward(needle: impl Into<String>, value: f64) -> Self {
        Self {
            matcher: MockMatch {
                kind: MockKind::Reward,
                prompt_contains: vec![needle.into()],
                ..MockMatch::default()
            },
            respond: MockRespond {
                reward: Some(value),
                ..MockRespond::default()
            },
        }
    }

    pub fn also_containing(mut self, needle: impl Into<String>) -> Self {
        self.matcher.prompt_contains.push(needle.into());
        self
    }

    pub fn at_temperature(mut self, t: f64) -> Self {
        self.matcher.temperature = Some(t);
        self
    }

    pub fn at_sample(mut self, i: u32) -> Self {
        self.matcher.sample_index = Some(i);
        self
    }

    pub fn with_logprob(mut self, lp: f64) -> Self {
        self.respond.total_logprob = Some(lp);
        self
    }

    fn matches(&self, kind: MockKind, messages: &[Message], text: &str, temperature: Option<f64>, sample: Option<u32>, target: Option<&str>) -> bool {
        let m = &self.matcher;
        m.kind == kind
            && m.messages_digest.as_ref().is_none_or(|d| *d == messages_digest(messages))
            && m.prompt_contains.iter().all(|n| text.contains(n.as_str()))
            && m.temperature.is_none_or(|t| Some(t) == temperature)
            && m.sample_index.is_none_or(|i| Some(i) == sample)
            && m.target.as_deref().is_none_or(|t| Some(t) == target)
    }
}

/// One observed call, for assertions in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub kind: MockKind,
    pub transcript: String,
    pub temperature: Option<f64>,
    pub sample_index: Option<u32>,
}

#[derive(Debug)]
pub struct MockBackend {
    entries: Vec<MockEntry>,
    capabilities: Capabilities,
    calls: Mutex<Vec<MockCall>>,
}

impl MockBackend {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self {
            entries,
            capabilities: Capabilities::ALL,
            calls: Mutex::default(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<MockEntry> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Number of calls whose transcript contains `needle`.
    pub fn calls_containing(&self, needle: &str) -> usize {
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|c| c.transcript.contains(needle))
            .count()
    }

    fn lookup(
        &self,
        kind: MockKind,
        messages: &[Message],
        text: String,
        temperature: Option<f64>,
        sample: Option<u32>,
        target: Option<&str>,
    ) -> Result<&MockRespond, BackendError> {
        let found = self
            .entries
            .iter()
            .find(|e| e.matches(kind, messages, &text, temperature, sample, target));
        let preview: String = text.chars().take(160).collect();
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).push(MockCall {
            kind,
            transcript: text,
            temperature,
            sample_index: sample,
        });
        found
            .map(|e| &e.respond)
            .ok_or_else(|| BackendError::Unscripted(format!("{kind:?} {preview:?}")))
    }
}

impl Backend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn complete(&self, req: &GatewayRequest) -> Result<CachedResponse, BackendError> {
        let r = self.lookup(
            MockKind::Complete,
            &req.messages,
            transcript(&req.messages),
            Some(req.temperature),
            Some(req.sample_index),
            None,
        )?;
        let text = r
            .text
            .clone()
            .ok_or_else(|| BackendError::Protocol("scripted completion has no `text`".into()))?;
        Ok(CachedResponse::Completion {
            text,
            total_logprob: r.total_logprob,
        })
    }

    fn score(&self, prompt: &[Message], target: &str) -> Result<TargetScore, BackendError> {
        let r = self.lookup(MockKind::Score, prompt, transcript(prompt), None, None, Some(target))?;
        match (&r.token_logprobs, r.total_logprob) {
            (Some(tokens), _) => Ok(TargetScore {
                total_logprob: tokens.iter().sum(),
                n_tokens: Some(tokens.len() as u32),
            }),
            (None, Some(total)) => Ok(TargetScore {
                total_logprob: total,
                n_tokens: None,
            }),
            (None, None) => Err(BackendError::Protocol("scripted score has no log-probability".into())),
        }
    }

    fn reward(&self, prompt: &[Message], response: &str) -> Result<f64, BackendError> {
        let text = format!("{}\n{response}", transcript(prompt));
        let r = self.lookup(MockKind::Reward, prompt, text, None, None, None)?;
        r.reward
            .ok_or_else(|| BackendError::Protocol("scripted reward has no `reward`".into()))
    }
}
