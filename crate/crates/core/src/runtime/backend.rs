//! Reasoner backends: anything that turns a rendered prompt into a completion.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::http::{HttpConfig, HttpError, JsonClient};
use crate::labels::CoTLabel;
use crate::prompting::{format_cot, CoTOutput};
use crate::util::config_hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no label for episode '{episode}' step {t}")]
    LabelGap { episode: String, t: usize },
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
}

impl From<HttpError> for BackendError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Auth { .. } => Self::Auth(e.to_string()),
            HttpError::Unavailable { .. } => Self::Unavailable(e.to_string()),
            HttpError::Rejected { .. } | HttpError::BadResponse(_) => {
                Self::BadResponse(e.to_string())
            }
        }
    }
}

/// Identifies a backend and its configuration in run metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub config_hash: String,
}

/// One request to a backend. Only `prompt` reaches a live model; the rest
/// lets deterministic backends address the step they are asked about.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub episode: &'a str,
    pub t: usize,
    /// 0 on the first request for a step, 1 on the retry after malformed output.
    pub attempt: u32,
    /// Requests already issued in this episode.
    pub call_index: usize,
    pub prompt: &'a str,
    pub options: &'a [char],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Transport-level retries spent obtaining `text`.
    pub retries: u32,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            retries: 0,
        }
    }
}

pub trait ReasonerBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn generate(&self, query: &Query<'_>) -> Result<Completion, BackendError>;

    /// Called once before a batch; live backends verify reachability and
    /// credentials here.
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Plain prompt-in, text-out completion, used for landmark extraction.
pub trait TextCompletion: Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Replays ground-truth reasoning labels.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    labels: HashMap<(String, usize), String>,
}

impl OracleBackend {
    pub fn new<'a>(labels: impl IntoIterator<Item = &'a CoTLabel>) -> Self {
        Self {
            labels: labels
                .into_iter()
                .map(|l| ((l.episode.clone(), l.t), format_cot(&l.output())))
                .collect(),
        }
    }
}

impl ReasonerBackend for OracleBackend {
    fn descriptor(&self) -> BackendDescriptor {
        let mut keys: Vec<_> = self.labels.iter().collect();
        keys.sort();
        BackendDescriptor {
            name: "oracle".into(),
            config_hash: config_hash(&keys),
        }
    }

    fn generate(&self, q: &Query<'_>) -> Result<Completion, BackendError> {
        self.labels
            .get(&(q.episode.to_owned(), q.t))
            .map(|cot| Completion::new(cot.clone()))
            .ok_or_else(|| BackendError::LabelGap {
                episode: q.episode.to_owned(),
                t: q.t,
            })
    }
}

/// Emits a fixed script: the n-th request of an episode gets the n-th
/// response, and the last response repeats once the script runs out.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    responses: Vec<String>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }
}

impl ReasonerBackend for ScriptedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "scripted".into(),
            config_hash: config_hash(&self.responses),
        }
    }

    fn generate(&self, q: &Query<'_>) -> Result<Completion, BackendError> {
        let i = q.call_index.min(self.responses.len().saturating_sub(1));
        self.responses
            .get(i)
            .map(|r| Completion::new(r.clone()))
            .ok_or_else(|| BackendError::Unavailable("empty script".into()))
    }
}

/// Picks an offered option uniformly at random, stop included. The draw for
/// a step depends only on (seed, episode, step, attempt).
#[derive(Debug, Clone, Copy)]
pub struct RandomBackend {
    seed: u64,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, q: &Query<'_>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(q.episode.as_bytes());
        h.update((q.t as u64).to_le_bytes());
        h.update(q.attempt.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

impl ReasonerBackend for RandomBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "random".into(),
            config_hash: config_hash(&self.seed),
        }
    }

    fn generate(&self, q: &Query<'_>) -> Result<Completion, BackendError> {
        let letter = *q
            .options
            .choose(&mut self.rng_for(q))
            .ok_or_else(|| BackendError::BadResponse("no options offered".into()))?;
        Ok(Completion::new(format_cot(&CoTOutput::new(
            "anything", letter, letter,
        ))))
    }
}

/// Settings for a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    #[serde(flatten)]
    pub http: HttpConfig,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            http: HttpConfig::default(),
            model: "navcot".into(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Chat-completion client: POSTs `{model, messages, temperature, max_tokens}`
/// with the prompt as the single user message.
#[derive(Debug)]
pub struct HttpBackend {
    client: JsonClient,
    cfg: HttpBackendConfig,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig, token: Option<String>) -> Result<Self, BackendError> {
        Ok(Self {
            client: JsonClient::new(cfg.http.clone(), token)?,
            cfg,
        })
    }

    fn request(&self, prompt: &str, max_tokens: u32) -> Result<Completion, BackendError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": max_tokens,
        });
        let resp = self.client.post_json(&body)?;
        let text = completion_text(&resp.body).ok_or_else(|| {
            BackendError::BadResponse(format!("no completion text in {}", resp.body))
        })?;
        tracing::debug!(prompt, completion = %text, retries = resp.retries, "completion");
        Ok(Completion {
            text,
            retries: resp.retries,
        })
    }
}

fn completion_text(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

impl ReasonerBackend for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: format!("http:{}", self.cfg.model),
            config_hash: config_hash(&self.cfg),
        }
    }

    fn generate(&self, q: &Query<'_>) -> Result<Completion, BackendError> {
        self.request(q.prompt, self.cfg.max_tokens)
    }

    fn health_check(&self) -> Result<(), BackendError> {
        self.request("ping", 1).map(|_| ())
    }
}

impl TextCompletion for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.request(prompt, self.cfg.max_tokens).map(|c| c.text)
    }
}
