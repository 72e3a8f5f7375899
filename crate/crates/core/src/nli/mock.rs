//! Deterministic stand-ins for the model sidecar.
//!
//! * [`MockNli`]: lookup table of ordered pairs. Identical strings default to
//!   entailment @0.95, unknown pairs to neutral @0.8 (probs 0.1/0.8/0.1).
//! * [`MockEmbedder`]: hashed bag of words. Each lowercased whitespace token
//!   adds 1.0 at index `hash_str(["embed", token]) % dim`.
//! * [`MockScorer`]: max over references of token-overlap F1.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::seed;

use super::{check_pair, Embedder, NliBackend, NliLabel, NliResult, PairScorer, Probs};

/// Counts backend invocations; clones share the count.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

pub const IDENTITY_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_NEUTRAL_PROBS: [f64; 3] = [0.1, 0.8, 0.1];

#[derive(Debug, Clone)]
pub struct MockNli {
    model_id: String,
    table: HashMap<(String, String), NliResult>,
    calls: CallCounter,
}

#[derive(Deserialize)]
struct TableLine {
    premise: String,
    hypothesis: String,
    #[serde(default)]
    label: Option<NliLabel>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    probs: Option<Probs>,
}

impl MockNli {
    pub fn new(model_id: impl Into<String>) -> Self {
        MockNli {
            model_id: model_id.into(),
            table: HashMap::new(),
            calls: CallCounter::default(),
        }
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, result: NliResult) -> &mut Self {
        self.table.insert((premise.to_string(), hypothesis.to_string()), result);
        self
    }

    pub fn with(mut self, premise: &str, hypothesis: &str, label: NliLabel, confidence: f64) -> Self {
        let r = NliResult::with_confidence(label, confidence).expect("confidence in (1/3, 1]");
        self.insert(premise, hypothesis, r);
        self
    }

    /// Sets `label` for both directions of the pair.
    pub fn with_symmetric(self, a: &str, b: &str, label: NliLabel, confidence: f64) -> Self {
        self.with(a, b, label, confidence).with(b, a, label, confidence)
    }

    /// Reads table lines `{"premise", "hypothesis", "label", "confidence"}`
    /// or `{"premise", "hypothesis", "probs": {...}}` (cache files qualify).
    pub fn from_jsonl_file(model_id: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut mock = MockNli::new(model_id);
        for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ctx = || format!("{}:{}", path.display(), no + 1);
            let t: TableLine = serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?;
            let result = match (t.probs, t.label) {
                (Some(p), _) => NliResult::from_probs(p.into())?,
                (None, Some(label)) => NliResult::with_confidence(label, t.confidence.unwrap_or(1.0))?,
                (None, None) => return Err(Error::json(ctx(), "table line needs `label` or `probs`")),
            };
            mock.insert(&t.premise, &t.hypothesis, result);
        }
        Ok(mock)
    }

    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }
}

impl NliBackend for MockNli {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult> {
        check_pair(premise, hypothesis)?;
        self.calls.bump();
        if let Some(r) = self.table.get(&(premise.to_string(), hypothesis.to_string())) {
            return Ok(*r);
        }
        if premise == hypothesis {
            return NliResult::with_confidence(NliLabel::Entailment, IDENTITY_CONFIDENCE);
        }
        NliResult::from_probs(DEFAULT_NEUTRAL_PROBS)
    }
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    overrides: HashMap<String, Vec<f64>>,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder {
            dim: dim.max(1),
            overrides: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pins the vector for `text`; it must have the configured dimension.
    pub fn with_vector(mut self, text: &str, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.dim, "override dimension mismatch");
        self.overrides.insert(text.to_string(), v);
        self
    }

    pub fn token_index(&self, token: &str) -> usize {
        (seed::hash_str(&["embed", token]) % self.dim as u64) as usize
    }

    fn vector(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.overrides.get(text) {
            return v.clone();
        }
        let mut v = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            v[self.token_index(&token.to_lowercase())] += 1.0;
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Input("embed needs at least one text".into()));
        }
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

fn token_counts(text: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for t in text.split_whitespace() {
        *counts.entry(t.to_lowercase()).or_insert(0) += 1;
    }
    counts
}

/// F1 of clipped token overlap between two texts (lowercased, whitespace).
pub fn token_overlap_f1(candidate: &str, reference: &str) -> f64 {
    let c = token_counts(candidate);
    let r = token_counts(reference);
    let c_total: usize = c.values().sum();
    let r_total: usize = r.values().sum();
    let overlap: usize = c.iter().map(|(tok, &k)| k.min(r.get(tok).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c_total as f64;
    let rc = overlap as f64 / r_total as f64;
    2.0 * p * rc / (p + rc)
}

#[derive(Debug, Clone, Default)]
pub struct MockScorer {
    calls: CallCounter,
}

impl MockScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }
}

impl PairScorer for MockScorer {
    fn bertscore(&self, candidate: &str, references: &[String]) -> Result<f64> {
        if references.is_empty() {
            return Err(Error::Input("bertscore needs at least one reference".into()));
        }
        self.calls.bump();
        Ok(references
            .iter()
            .map(|r| token_overlap_f1(candidate, r))
            .fold(0.0, f64::max))
    }
}
