//! HTTP client for the inference sidecar.
//!
//! All endpoints are JSON `POST`s under `/v1/`. Transport failures and 5xx
//! responses are retried with exponential backoff; 4xx responses fail at once.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Turn};
use crate::error::{Error, Result};
use crate::seed;

use super::{check_pair, Embedder, NliBackend, NliResult, PairScorer, Probs, ResponseSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    endpoint: String,
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        Self::with_policy(endpoint, RetryPolicy::default(), Duration::from_secs(120))
    }

    pub fn with_policy(endpoint: impl Into<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        if endpoint.is_empty() {
            return Err(Error::Validation("remote backend requires an endpoint".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend {
                endpoint: endpoint.clone(),
                attempts: 0,
                retryable: false,
                message: e.to_string(),
            })?;
        Ok(RemoteClient { endpoint, http, retry })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.endpoint);
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.http.post(&url).json(body).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<Resp>().map_err(|e| Error::Backend {
                        endpoint: url.clone(),
                        attempts: attempt,
                        retryable: false,
                        message: format!("malformed response: {e}"),
                    });
                }
                Ok(resp) if resp.status().is_client_error() => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    return Err(Error::Backend {
                        endpoint: url,
                        attempts: attempt,
                        retryable: false,
                        message: format!("{status}: {text}"),
                    });
                }
                Ok(resp) => last = format!("status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
            log::debug!("{url}: attempt {attempt}/{attempts} failed: {last}");
            if attempt < attempts {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
        }
        Err(Error::Backend {
            endpoint: url,
            attempts,
            retryable: true,
            message: last,
        })
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
    model: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    probs: Probs,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BertScoreRequest<'a> {
    candidate: &'a str,
    references: &'a [String],
}

#[derive(Deserialize)]
struct BertScoreResponse {
    f1: f64,
}

/// NLI, embedding and BERTScore calls against one sidecar.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    client: RemoteClient,
    model: String,
}

impl RemoteBackend {
    pub fn new(client: RemoteClient, model: impl Into<String>) -> Self {
        RemoteBackend {
            client,
            model: model.into(),
        }
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl NliBackend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult> {
        check_pair(premise, hypothesis)?;
        let resp: NliResponse = self.client.post(
            "/v1/nli",
            &NliRequest {
                premise,
                hypothesis,
                model: &self.model,
            },
        )?;
        NliResult::from_unnormalized(resp.probs.into())
    }
}

impl Embedder for RemoteBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Input("embed needs at least one text".into()));
        }
        let resp: EmbedResponse = self.client.post("/v1/embed", &EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Backend {
                endpoint: format!("{}/v1/embed", self.client.endpoint()),
                attempts: 1,
                retryable: false,
                message: format!("{} vectors for {} texts", resp.vectors.len(), texts.len()),
            });
        }
        let dim = resp.vectors[0].len();
        if resp.vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Backend {
                endpoint: format!("{}/v1/embed", self.client.endpoint()),
                attempts: 1,
                retryable: false,
                message: "embedding dimensions differ".into(),
            });
        }
        Ok(resp.vectors)
    }
}

impl PairScorer for RemoteBackend {
    fn bertscore(&self, candidate: &str, references: &[String]) -> Result<f64> {
        if references.is_empty() {
            return Err(Error::Input("bertscore needs at least one reference".into()));
        }
        let resp: BertScoreResponse = self
            .client
            .post("/v1/bertscore", &BertScoreRequest { candidate, references })?;
        Ok(resp.f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub p: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub model: String,
    pub truncate_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            p: 0.9,
            max_new_tokens: 64,
            seed: 0,
            model: "microsoft/DialoGPT-large".into(),
            truncate_tokens: 128,
        }
    }
}

#[derive(Serialize)]
struct SampleRequest<'a> {
    turns: &'a [Turn],
    params: SamplingParams,
}

#[derive(Deserialize)]
struct SampleResponse {
    text: String,
}

/// Nucleus sampling on the sidecar. Draw `k` uses seed
/// `stream_seed(params.seed, k)` so repeated runs reproduce.
#[derive(Debug, Clone)]
pub struct RemoteSampler {
    client: RemoteClient,
    params: SamplingParams,
    drawn: u64,
}

impl RemoteSampler {
    pub fn new(client: RemoteClient, params: SamplingParams) -> Self {
        RemoteSampler {
            client,
            params,
            drawn: 0,
        }
    }
}

impl ResponseSampler for RemoteSampler {
    fn next_response(&mut self, context: &Conversation) -> Result<String> {
        let params = SamplingParams {
            seed: seed::stream_seed(self.params.seed, self.drawn),
            ..self.params.clone()
        };
        let resp: SampleResponse = self.client.post(
            "/v1/sample",
            &SampleRequest {
                turns: &context.turns,
                params,
            },
        )?;
        self.drawn += 1;
        Ok(resp.text)
    }
}
