//! Set-level diversity scores.
//!
//! NLI-based scores sum a per-pair weight over the `n(n-1)` ordered pairs:
//!
//! | metric          | contradiction | neutral | entailment |
//! |-----------------|---------------|---------|------------|
//! | baseline        | +1            | 0       | -1         |
//! | neutral variant | +1            | +1      | -1         |
//! | confidence      | +p(c)         | 0       | -p(e)      |
//!
//! Lexical diversity is distinct-n (lowercased whitespace tokens, n-grams
//! pooled over the set); semantic embedding diversity is the mean negative
//! cosine over unordered pairs.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nli::{classify_all_ordered_pairs, Embedder, NliBackend, NliLabel, NliResult};
use crate::par::Execution;

pub use crate::nli::PairwiseNliMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BaselineNli,
    NeutralNli,
    ConfidenceNli,
    ContradictionCount,
    NeutralCount,
    EntailmentCount,
    DistinctN,
    SentEmbed,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::BaselineNli,
        Metric::NeutralNli,
        Metric::ConfidenceNli,
        Metric::ContradictionCount,
        Metric::NeutralCount,
        Metric::EntailmentCount,
        Metric::DistinctN,
        Metric::SentEmbed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::BaselineNli => "baseline_nli",
            Metric::NeutralNli => "neutral_nli",
            Metric::ConfidenceNli => "confidence_nli",
            Metric::ContradictionCount => "contradiction_count",
            Metric::NeutralCount => "neutral_count",
            Metric::EntailmentCount => "entailment_count",
            Metric::DistinctN => "distinct_n",
            Metric::SentEmbed => "sent_embed",
        }
    }

    pub fn uses_nli(self) -> bool {
        !matches!(self, Metric::DistinctN | Metric::SentEmbed)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .or(match norm.as_str() {
                "baseline" | "nli" => Some(Metric::BaselineNli),
                "neutral" => Some(Metric::NeutralNli),
                "confidence" => Some(Metric::ConfidenceNli),
                "distinct" => Some(Metric::DistinctN),
                "sent_bert" | "embedding" => Some(Metric::SentEmbed),
                _ => None,
            })
            .ok_or_else(|| Error::Input(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliCounts {
    pub contradiction: usize,
    pub neutral: usize,
    pub entailment: usize,
}

impl NliCounts {
    pub fn total(&self) -> usize {
        self.contradiction + self.neutral + self.entailment
    }

    pub fn get(&self, label: NliLabel) -> usize {
        match label {
            NliLabel::Contradiction => self.contradiction,
            NliLabel::Neutral => self.neutral,
            NliLabel::Entailment => self.entailment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub metric: Metric,
    pub value: f64,
    pub counts: Option<NliCounts>,
}

pub fn nli_counts(m: &PairwiseNliMatrix) -> NliCounts {
    let mut c = NliCounts::default();
    for label in m.labels() {
        match label {
            NliLabel::Contradiction => c.contradiction += 1,
            NliLabel::Neutral => c.neutral += 1,
            NliLabel::Entailment => c.entailment += 1,
        }
    }
    c
}

/// Weight one ordered pair contributes under an NLI metric.
pub fn pair_contribution(metric: Metric, r: &NliResult) -> f64 {
    let label = r.predicted();
    match metric {
        Metric::BaselineNli => match label {
            NliLabel::Contradiction => 1.0,
            NliLabel::Neutral => 0.0,
            NliLabel::Entailment => -1.0,
        },
        Metric::NeutralNli => match label {
            NliLabel::Contradiction | NliLabel::Neutral => 1.0,
            NliLabel::Entailment => -1.0,
        },
        Metric::ConfidenceNli => match label {
            NliLabel::Contradiction => r.prob(NliLabel::Contradiction),
            NliLabel::Neutral => 0.0,
            NliLabel::Entailment => -r.prob(NliLabel::Entailment),
        },
        Metric::ContradictionCount => (label == NliLabel::Contradiction) as u8 as f64,
        Metric::NeutralCount => (label == NliLabel::Neutral) as u8 as f64,
        Metric::EntailmentCount => (label == NliLabel::Entailment) as u8 as f64,
        Metric::DistinctN | Metric::SentEmbed => 0.0,
    }
}

fn sum_contributions(metric: Metric, m: &PairwiseNliMatrix) -> f64 {
    m.iter().map(|(_, r)| pair_contribution(metric, r)).sum()
}

pub fn baseline_nli_diversity(m: &PairwiseNliMatrix) -> DiversityScore {
    let counts = nli_counts(m);
    DiversityScore {
        metric: Metric::BaselineNli,
        value: counts.contradiction as f64 - counts.entailment as f64,
        counts: Some(counts),
    }
}

pub fn neutral_nli_diversity(m: &PairwiseNliMatrix) -> DiversityScore {
    let counts = nli_counts(m);
    DiversityScore {
        metric: Metric::NeutralNli,
        value: (counts.contradiction + counts.neutral) as f64 - counts.entailment as f64,
        counts: Some(counts),
    }
}

pub fn confidence_nli_diversity(m: &PairwiseNliMatrix) -> DiversityScore {
    DiversityScore {
        metric: Metric::ConfidenceNli,
        value: sum_contributions(Metric::ConfidenceNli, m),
        counts: Some(nli_counts(m)),
    }
}

/// Any NLI-based metric over a precomputed matrix.
pub fn score_matrix(metric: Metric, m: &PairwiseNliMatrix) -> Result<DiversityScore> {
    let counts = nli_counts(m);
    let value = match metric {
        Metric::BaselineNli => return Ok(baseline_nli_diversity(m)),
        Metric::NeutralNli => return Ok(neutral_nli_diversity(m)),
        Metric::ConfidenceNli => return Ok(confidence_nli_diversity(m)),
        Metric::ContradictionCount => counts.contradiction as f64,
        Metric::NeutralCount => counts.neutral as f64,
        Metric::EntailmentCount => counts.entailment as f64,
        Metric::DistinctN | Metric::SentEmbed => return Err(Error::Input(format!("{metric} is not an NLI metric"))),
    };
    Ok(DiversityScore {
        metric,
        value,
        counts: Some(counts),
    })
}

pub const DISTINCT_ORDERS: [usize; 5] = [1, 2, 3, 4, 5];

pub fn tokenize_lower(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Mean over `orders` of unique/total n-grams pooled across the set.
/// Orders with no n-grams at all are skipped.
pub fn distinct_n(responses: &[String], orders: &[usize]) -> Result<f64> {
    let tokenized: Vec<Vec<String>> = responses.iter().map(|r| tokenize_lower(r)).collect();
    if tokenized.iter().all(Vec::is_empty) {
        return Err(Error::UndefinedMetric("distinct-n of an all-empty set".into()));
    }
    let mut ratios = Vec::with_capacity(orders.len());
    for &n in orders.iter().filter(|&&n| n > 0) {
        let mut unique: HashSet<&[String]> = HashSet::new();
        let mut total = 0usize;
        for toks in &tokenized {
            for gram in toks.windows(n) {
                unique.insert(gram);
                total += 1;
            }
        }
        if total > 0 {
            ratios.push(unique.len() as f64 / total as f64);
        }
    }
    if ratios.is_empty() {
        return Err(Error::UndefinedMetric("distinct-n has no n-grams at any order".into()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// Mean of `-cos(v_i, v_j)` over unordered pairs.
pub fn embedding_diversity_from_vectors(vectors: &[Vec<f64>]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientResponses { needed: 2, got: n });
    }
    if let Some(index) = vectors.iter().position(|v| norm(v) == 0.0 || !norm(v).is_finite()) {
        return Err(Error::DegenerateEmbedding { index });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total -= cosine(&vectors[i], &vectors[j]).clamp(-1.0, 1.0);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn embedding_diversity<E: Embedder + ?Sized>(responses: &[String], embedder: &E) -> Result<f64> {
    if responses.len() < 2 {
        return Err(Error::InsufficientResponses {
            needed: 2,
            got: responses.len(),
        });
    }
    embedding_diversity_from_vectors(&embedder.embed(responses)?)
}

/// Nearest-rank percentile: the `ceil(p/100 * N)`-th smallest value.
pub fn empirical_threshold(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Input("percentile of an empty score list".into()));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Input(format!("percentile {percentile} outside (0, 100)")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(nearest_rank(&sorted, percentile / 100.0))
}

/// `sorted` ascending, `q` in (0, 1].
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // guard against 0.9 * 10 = 9.000000000000002
    let raw = q * n as f64;
    let rank = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    let rank = (rank as usize).clamp(1, n);
    sorted[rank - 1]
}

/// A metric bound to whatever backend it needs.
pub trait SetMetric: Send + Sync {
    fn metric(&self) -> Metric;

    fn score(&self, responses: &[String]) -> Result<DiversityScore>;

    /// Score of each leave-one-out subset, index `i` = set without `i`.
    fn leave_one_out(&self, responses: &[String]) -> Result<Vec<DiversityScore>> {
        (0..responses.len())
            .map(|i| {
                let subset: Vec<String> = responses
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, r)| r.clone())
                    .collect();
                self.score(&subset)
            })
            .collect()
    }
}

#[derive(Clone)]
enum Source {
    Nli(Arc<dyn NliBackend>),
    Embed(Arc<dyn Embedder>),
    Lexical(Vec<usize>),
}

#[derive(Clone)]
pub struct MetricEvaluator {
    metric: Metric,
    source: Source,
    exec: Execution,
}

impl MetricEvaluator {
    pub fn nli(metric: Metric, backend: Arc<dyn NliBackend>) -> Result<Self> {
        if !metric.uses_nli() {
            return Err(Error::Input(format!("{metric} does not use an NLI backend")));
        }
        Ok(MetricEvaluator {
            metric,
            source: Source::Nli(backend),
            exec: Execution::default(),
        })
    }

    pub fn distinct(orders: Vec<usize>) -> Self {
        MetricEvaluator {
            metric: Metric::DistinctN,
            source: Source::Lexical(orders),
            exec: Execution::default(),
        }
    }

    pub fn embedding(embedder: Arc<dyn Embedder>) -> Self {
        MetricEvaluator {
            metric: Metric::SentEmbed,
            source: Source::Embed(embedder),
            exec: Execution::default(),
        }
    }

    /// Builds the evaluator for `metric` from whichever backends are given.
    pub fn for_metric(
        metric: Metric,
        nli: Option<Arc<dyn NliBackend>>,
        embedder: Option<Arc<dyn Embedder>>,
    ) -> Result<Self> {
        match metric {
            Metric::DistinctN => Ok(Self::distinct(DISTINCT_ORDERS.to_vec())),
            Metric::SentEmbed => embedder
                .map(Self::embedding)
                .ok_or_else(|| Error::Input("sent_embed needs an embedding backend".into())),
            _ => Self::nli(
                metric,
                nli.ok_or_else(|| Error::Input(format!("{metric} needs an NLI backend")))?,
            ),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn matrix(&self, responses: &[String]) -> Result<Option<PairwiseNliMatrix>> {
        match &self.source {
            Source::Nli(b) => classify_all_ordered_pairs(b.as_ref(), responses, self.exec).map(Some),
            _ => Ok(None),
        }
    }
}

impl SetMetric for MetricEvaluator {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn score(&self, responses: &[String]) -> Result<DiversityScore> {
        let value = match &self.source {
            Source::Nli(b) => {
                let m = classify_all_ordered_pairs(b.as_ref(), responses, self.exec)?;
                return score_matrix(self.metric, &m);
            }
            Source::Embed(e) => embedding_diversity(responses, e.as_ref())?,
            Source::Lexical(orders) => distinct_n(responses, orders)?,
        };
        Ok(DiversityScore {
            metric: self.metric,
            value,
            counts: None,
        })
    }

    /// One classification pass for NLI metrics and one embedding call for
    /// the embedding metric; subsets are scored from those.
    fn leave_one_out(&self, responses: &[String]) -> Result<Vec<DiversityScore>> {
        let n = responses.len();
        if n < 3 {
            return Err(Error::InsufficientResponses { needed: 3, got: n });
        }
        match &self.source {
            Source::Nli(b) => {
                let m = classify_all_ordered_pairs(b.as_ref(), responses, self.exec)?;
                (0..n).map(|i| score_matrix(self.metric, &m.without(i)?)).collect()
            }
            Source::Embed(e) => {
                let vectors = e.embed(responses)?;
                (0..n)
                    .map(|i| {
                        let sub: Vec<Vec<f64>> = vectors
                            .iter()
                            .enumerate()
                            .filter(|&(k, _)| k != i)
                            .map(|(_, v)| v.clone())
                            .collect();
                        embedding_diversity_from_vectors(&sub).map_err(|err| match err {
                            Error::DegenerateEmbedding { index } => Error::DegenerateEmbedding {
                                index: if index >= i { index + 1 } else { index },
                            },
                            other => other,
                        })
                    })
                    .map(|v| {
                        v.map(|value| DiversityScore {
                            metric: self.metric,
                            value,
                            counts: None,
                        })
                    })
                    .collect()
            }
            Source::Lexical(_) => {
                let subsets: Vec<Vec<String>> = (0..n)
                    .map(|i| {
                        responses
                            .iter()
                            .enumerate()
                            .filter(|&(k, _)| k != i)
                            .map(|(_, r)| r.clone())
                            .collect()
                    })
                    .collect();
                subsets.iter().map(|s| self.score(s)).collect()
            }
        }
    }
}

/// One report row: `{"conversation_id", "metric", "value", "counts"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub conversation_id: String,
    pub metric: Metric,
    pub value: f64,
    pub counts: Option<NliCounts>,
}
