//! Clients for OpenAI-compatible `/chat/completions` and `/embeddings`
//! endpoints.
//!
//! Requests:
//!
//! ```text
//! POST {base_url}/chat/completions
//! {"model": "...", "messages": [{"role": "system", "content": "..."}, ...],
//!  "temperature": 0.0, "max_tokens": 16}
//!
//! POST {base_url}/embeddings
//! {"model": "...", "input": ["text", ...]}
//! ```
//!
//! Responses are read from `choices[0].message.content` and
//! `data[].embedding` (ordered by `data[].index`) respectively.

use std::time::Duration;

use proact_core::lmgr::provider::normalize;
use proact_core::lmgr::{ChatMessage, CompletionParams, EmbeddingProvider, LlmProvider};
use proact_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Endpoint settings shared by both clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// For example `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Sent as a bearer token when set.
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            api_key: None,
            timeout_secs: 60,
        }
    }
}

struct Endpoint {
    client: reqwest::blocking::Client,
    config: EndpointConfig,
}

impl Endpoint {
    fn new(config: EndpointConfig) -> Result<Self> {
        if config.model.is_empty() {
            return Err(Error::InvalidArgument("provider model name is required".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Provider(format!("cannot build HTTP client: {e}")))?;
        Ok(Endpoint { client, config })
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, body: &impl Serialize) -> Result<T> {
        let url = format!("{}/{path}", self.config.base_url.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Error::Provider(format!("POST {url}: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Error::Provider(format!("POST {url}: {e}")))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::Provider(format!("POST {url}: HTTP {status}: {snippet}")));
        }
        serde_json::from_str(&text).map_err(|e| Error::Provider(format!("POST {url}: unexpected response: {e}")))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpChat {
    endpoint: Endpoint,
}

impl HttpChat {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        Ok(HttpChat {
            endpoint: Endpoint::new(config)?,
        })
    }
}

impl LlmProvider for HttpChat {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String> {
        let request = ChatRequest {
            model: &self.endpoint.config.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let response: ChatResponse = self.endpoint.post("chat/completions", &request)?;
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Provider("chat response has no content".into()))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

pub struct HttpEmbeddings {
    endpoint: Endpoint,
    batch_size: usize,
}

impl HttpEmbeddings {
    pub fn new(config: EndpointConfig, batch_size: usize) -> Result<Self> {
        Ok(HttpEmbeddings {
            endpoint: Endpoint::new(config)?,
            batch_size: batch_size.max(1),
        })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let request = EmbeddingRequest {
            model: &self.endpoint.config.model,
            input: texts,
        };
        let mut response: EmbeddingResponse = self.endpoint.post("embeddings", &request)?;
        if response.data.len() != texts.len() {
            return Err(Error::Provider(format!(
                "embedding response has {} vectors for {} inputs",
                response.data.len(),
                texts.len()
            )));
        }
        response.data.sort_by_key(|d| d.index);
        response
            .data
            .into_iter()
            .map(|d| {
                let mut v = d.embedding;
                normalize(&mut v)?;
                Ok(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddings {
    fn model_id(&self) -> &str {
        &self.endpoint.config.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        if let Some(first) = out.first() {
            let dim = first.len();
            if out.iter().any(|v| v.len() != dim) {
                return Err(Error::Provider("embedding dimensions differ within a response".into()));
            }
        }
        log::debug!("embedded {} texts with {}", texts.len(), self.endpoint.config.model);
        Ok(out)
    }
}
