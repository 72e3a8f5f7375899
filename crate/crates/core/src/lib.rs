//! NLI-based diversity metrics for dialogue response sets, their evaluation
//! against human and parameter annotations, and diversity threshold
//! generation.
//!
//! Model calls go through the [`nli::NliBackend`], [`nli::Embedder`],
//! [`nli::PairScorer`] and [`nli::ResponseSampler`] traits. Deterministic
//! mocks back the tests; [`nli::RemoteBackend`] talks to an HTTP sidecar.
//!
//! With the default `parallel` feature, pairwise classification, corpus
//! scoring, generation runs and bootstrap iterations fan out over rayon.
//! Every entry point takes an [`Execution`] so the sequential path stays
//! selectable at runtime.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod generation;
pub mod metrics;
pub mod nli;
pub mod par;
pub mod relevancy;
pub mod seed;

pub use error::{Error, Result};
pub use metrics::{DiversityScore, Metric, MetricEvaluator, NliCounts, SetMetric};
pub use nli::{NliLabel, NliResult};
pub use par::Execution;
