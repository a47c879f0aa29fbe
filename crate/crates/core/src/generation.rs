//! Free-form generation behind a provider trait: prompt templates, request
//! types, the chat-completions client and the seeded mock provider.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use base64::Engine;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::concurrency::map_bounded;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::text::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    #[default]
    Direct,
    Cot,
    Descriptive,
    Structured,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Direct,
        PromptKind::Cot,
        PromptKind::Descriptive,
        PromptKind::Structured,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Direct => "direct",
            PromptKind::Cot => "cot",
            PromptKind::Descriptive => "descriptive",
            PromptKind::Structured => "structured",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompt kind {s:?}")))
    }
}

/// Text prompt for a human-object pair whose object is labelled `object_label`.
pub fn render_prompt(kind: PromptKind, object_label: &str) -> String {
    let obj = object_label;
    let direct = format!("What are the interactions between the person and the {obj}?");
    match kind {
        PromptKind::Direct => direct,
        PromptKind::Cot => format!("{direct} Think step by step."),
        PromptKind::Descriptive => format!(
            "Describe all the interactions occurring between the person and the {obj}. \
             If no interactions are being performed reply with \"no interaction\"."
        ),
        PromptKind::Structured => format!(
            "{direct} Answer the question with triplets of the form: (person, verb, {obj}). \
             Examples: \"(person, sit on, bike). (person, ride, bike)\". \
             If there are no interactions, answer with (person, none, {obj}). \
             Do not write any other text."
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    /// Stable key of the request (pair id, or verb for the verb filter).
    pub request_id: String,
    /// Lossless PNG visual prompt, if any.
    pub image_png: Option<Vec<u8>>,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub num_samples: usize,
    /// Only honoured by the mock provider.
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(
        request_id: &str,
        image_png: Option<Vec<u8>>,
        prompt: String,
        sampling: &SamplingConfig,
    ) -> Result<Self> {
        let req = Self {
            request_id: request_id.to_string(),
            image_png,
            prompt,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            num_samples: sampling.num_samples,
            seed: Some(sampling.seed),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn text_only(request_id: &str, prompt: String, temperature: f64, max_tokens: u32) -> Self {
        Self {
            request_id: request_id.to_string(),
            image_png: None,
            prompt,
            temperature,
            max_tokens,
            num_samples: 1,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("generation request {}", self.request_id);
        if self.max_tokens == 0 {
            return Err(Error::validation(ctx, "max_tokens must be positive"));
        }
        if self.num_samples == 0 {
            return Err(Error::validation(ctx, "num_samples must be at least 1"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation(
                ctx,
                "temperature must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub texts: Vec<String>,
    pub model: String,
    pub latency_ms: u64,
}

/// Sampling parameters for test-time compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Generations per pair.
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            max_tokens: 2048,
            num_samples: 64,
            seed: 0,
        }
    }
}

pub trait GenerationProvider: Send + Sync {
    /// Returns exactly `req.num_samples` texts; refusals are empty strings.
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse>;

    fn model_id(&self) -> &str;
}

fn truncate_tokens(text: &str, max_tokens: u32) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_tokens as usize {
        text.to_string()
    } else {
        words[..max_tokens as usize].join(" ")
    }
}

/// Uniform index in `0..n` from one 64-bit draw (widening multiply).
pub(crate) fn bounded_index(x: u64, n: usize) -> usize {
    ((u128::from(x) * n as u128) >> 64) as usize
}

/// Canned-response provider: a JSON map from request id to candidate texts,
/// sampled with replacement by ChaCha8 seeded with
/// `seed ^ fnv1a(request_id)`. Unknown ids yield empty texts.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    pool: BTreeMap<String, Vec<String>>,
}

impl MockProvider {
    pub fn new(pool: BTreeMap<String, Vec<String>>) -> Self {
        Self { pool }
    }

    pub fn parse(json: &str) -> Result<Self> {
        let pool = serde_json::from_str(json).map_err(|e| Error::parse("mock pool", e))?;
        Ok(Self { pool })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&json)
    }
}

impl GenerationProvider for MockProvider {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        req.validate()?;
        let candidates = self.pool.get(&req.request_id);
        if candidates.is_none() {
            log::debug!("mock pool has no entry for {}", req.request_id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed.unwrap_or(0) ^ fnv1a(&req.request_id));
        let texts = (0..req.num_samples)
            .map(|_| match candidates {
                Some(c) if !c.is_empty() => {
                    let i = bounded_index(rng.next_u64(), c.len());
                    truncate_tokens(&c[i], req.max_tokens)
                }
                _ => String::new(),
            })
            .collect();
        Ok(GenerationResponse {
            texts,
            model: "mock".into(),
            latency_ms: 0,
        })
    }

    fn model_id(&self) -> &str {
        "mock"
    }
}

/// Client for a chat-completions style endpoint.
///
/// The request carries one user message with a base64 PNG image part and a
/// text part. Servers that ignore `n` are handled by issuing further calls
/// until `num_samples` texts are collected.
#[derive(Debug, Clone)]
pub struct ChatCompletionsProvider {
    client: JsonClient,
    model: String,
    supports_n: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<serde_json::Value>,
}

impl ChatMessage {
    fn text(&self) -> String {
        match &self.content {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect::<Vec<_>>()
                .join(""),
            _ => String::new(),
        }
    }
}

impl ChatCompletionsProvider {
    pub fn new(url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(url, api_key, retry),
            model: model.to_string(),
            supports_n: true,
        }
    }

    pub fn with_n_support(mut self, supports_n: bool) -> Self {
        self.supports_n = supports_n;
        self
    }

    pub fn request_body(&self, req: &GenerationRequest, n: usize) -> serde_json::Value {
        let content = match &req.image_png {
            Some(png) => {
                let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                json!([
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}},
                    {"type": "text", "text": req.prompt},
                ])
            }
            None => json!(req.prompt),
        };
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "n": n,
        })
    }
}

impl GenerationProvider for ChatCompletionsProvider {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        req.validate()?;
        let start = Instant::now();
        let mut texts = Vec::with_capacity(req.num_samples);
        while texts.len() < req.num_samples {
            let want = if self.supports_n {
                req.num_samples - texts.len()
            } else {
                1
            };
            let body = self.request_body(req, want);
            let resp: ChatResponse = self.client.post(&body, &req.request_id)?;
            if resp.choices.is_empty() {
                texts.push(String::new());
                continue;
            }
            for c in resp.choices.iter().take(req.num_samples - texts.len()) {
                texts.push(c.message.text());
            }
        }
        Ok(GenerationResponse {
            texts,
            model: self.model.clone(),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

/// Wraps a provider and records how many calls were in flight at once.
pub struct CountingProvider<P> {
    inner: P,
    live: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: GenerationProvider> GenerationProvider for CountingProvider<P> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.generate(req);
        self.live.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

/// Issues `requests` with at most `max_in_flight` concurrent provider calls;
/// results keep request order.
pub fn generate_batch(
    requests: &[GenerationRequest],
    provider: &dyn GenerationProvider,
    max_in_flight: usize,
) -> Vec<Result<GenerationResponse>> {
    map_bounded(requests, max_in_flight, |_, req| provider.generate(req))
}
