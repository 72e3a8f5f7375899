//! NLI classification, embeddings, pair scoring and response sampling.
//!
//! Backends are trait objects so the metric and generation code never knows
//! whether it talks to the deterministic mocks or to the model sidecar.

mod cache;
mod matrix;
mod mock;
mod remote;
mod sampler;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};

pub use cache::{CacheStats, CachedNli, NliCache};
pub use matrix::{classify_all_ordered_pairs, PairwiseNliMatrix};
pub use mock::{token_overlap_f1, CallCounter, MockEmbedder, MockNli, MockScorer};
pub use remote::{RemoteBackend, RemoteClient, RemoteSampler, RetryPolicy, SamplingParams};
pub use sampler::{MockPoolSampler, RankedListSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Contradiction,
    Neutral,
    Entailment,
}

impl NliLabel {
    /// Tie-break order for argmax: earlier wins.
    pub const ALL: [NliLabel; 3] = [NliLabel::Contradiction, NliLabel::Neutral, NliLabel::Entailment];

    pub fn index(self) -> usize {
        match self {
            NliLabel::Contradiction => 0,
            NliLabel::Neutral => 1,
            NliLabel::Entailment => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
            NliLabel::Entailment => "entailment",
        }
    }
}

impl std::str::FromStr for NliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contradiction" | "c" => Ok(NliLabel::Contradiction),
            "neutral" | "n" => Ok(NliLabel::Neutral),
            "entailment" | "e" => Ok(NliLabel::Entailment),
            _ => Err(Error::Input(format!("unknown NLI label `{s}`"))),
        }
    }
}

/// Wire form of a 3-class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probs {
    pub contradiction: f64,
    pub neutral: f64,
    pub entailment: f64,
}

impl From<[f64; 3]> for Probs {
    fn from(p: [f64; 3]) -> Self {
        Probs {
            contradiction: p[0],
            neutral: p[1],
            entailment: p[2],
        }
    }
}

impl From<Probs> for [f64; 3] {
    fn from(p: Probs) -> Self {
        [p.contradiction, p.neutral, p.entailment]
    }
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Probs", into = "Probs")]
pub struct NliResult {
    probs: [f64; 3],
    predicted: NliLabel,
}

impl NliResult {
    /// Validates a distribution in contradiction/neutral/entailment order.
    pub fn from_probs(probs: [f64; 3]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Input(format!("probabilities out of range: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Input(format!("probabilities sum to {sum}, not 1: {probs:?}")));
        }
        let mut predicted = NliLabel::Contradiction;
        for label in NliLabel::ALL {
            if probs[label.index()] > probs[predicted.index()] {
                predicted = label;
            }
        }
        Ok(NliResult { probs, predicted })
    }

    /// Like [`from_probs`](Self::from_probs) but rescales a distribution
    /// whose sum drifted by float noise (up to 1e-3) from a remote model.
    pub fn from_unnormalized(probs: [f64; 3]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if !(sum.is_finite() && (sum - 1.0).abs() <= 1e-3) {
            return Err(Error::Input(format!("probabilities sum to {sum}, not 1: {probs:?}")));
        }
        Self::from_probs(probs.map(|p| p / sum))
    }

    /// `confidence` on `label`, the rest split evenly. Needs `confidence > 1/3`
    /// so that `label` is the strict argmax.
    pub fn with_confidence(label: NliLabel, confidence: f64) -> Result<Self> {
        if !(confidence > 1.0 / 3.0 && confidence <= 1.0) {
            return Err(Error::Input(format!("confidence {confidence} must lie in (1/3, 1]")));
        }
        let rest = (1.0 - confidence) / 2.0;
        let mut probs = [rest; 3];
        probs[label.index()] = confidence;
        Self::from_probs(probs)
    }

    pub fn probs(&self) -> [f64; 3] {
        self.probs
    }

    pub fn prob(&self, label: NliLabel) -> f64 {
        self.probs[label.index()]
    }

    pub fn predicted(&self) -> NliLabel {
        self.predicted
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.predicted.index()]
    }
}

impl TryFrom<Probs> for NliResult {
    type Error = Error;

    fn try_from(p: Probs) -> Result<Self> {
        NliResult::from_probs(p.into())
    }
}

impl From<NliResult> for Probs {
    fn from(r: NliResult) -> Self {
        r.probs.into()
    }
}

pub(crate) fn check_pair(premise: &str, hypothesis: &str) -> Result<()> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::Input("NLI premise and hypothesis must be non-empty".into()));
    }
    Ok(())
}

pub trait NliBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Candidate-vs-references similarity (BERTScore F1 on the sidecar).
pub trait PairScorer: Send + Sync {
    fn bertscore(&self, candidate: &str, references: &[String]) -> Result<f64>;
}

pub trait ResponseSampler: Send {
    fn next_response(&mut self, context: &Conversation) -> Result<String>;
}

macro_rules! forward_impls {
    ($($ptr:ty),*) => {$(
        impl<T: NliBackend + ?Sized> NliBackend for $ptr {
            fn model_id(&self) -> &str { (**self).model_id() }
            fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult> {
                (**self).classify(premise, hypothesis)
            }
        }
        impl<T: Embedder + ?Sized> Embedder for $ptr {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> { (**self).embed(texts) }
        }
        impl<T: PairScorer + ?Sized> PairScorer for $ptr {
            fn bertscore(&self, candidate: &str, references: &[String]) -> Result<f64> {
                (**self).bertscore(candidate, references)
            }
        }
    )*};
}

forward_impls!(&T, Arc<T>, Box<T>);

impl<S: ResponseSampler + ?Sized> ResponseSampler for Box<S> {
    fn next_response(&mut self, context: &Conversation) -> Result<String> {
        (**self).next_response(context)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub endpoint: Option<String>,
}

/// Default NLI model served by the sidecar.
pub const DEFAULT_NLI_MODEL: &str = "roberta-large-mnli";

impl BackendDescriptor {
    pub fn mock(model_id: impl Into<String>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
        }
    }

    pub fn remote(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Remote,
            model_id: model_id.into(),
            endpoint: Some(endpoint.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Validation("remote backend requires an endpoint".into()));
        }
        Ok(())
    }
}
