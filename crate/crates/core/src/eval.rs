//! Metric evaluation: Spearman correlation against gold annotations,
//! percentile bootstrap intervals, and histogram exports.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetBundle, ResponseSet};
use crate::error::{Error, Result};
use crate::metrics::{nearest_rank, SetMetric};
use crate::par::{self, Execution};
use crate::seed;

/// Fractional (1-based) ranks; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // one sqrt keeps identical rank vectors at exactly 1
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} item(s)", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input vector".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[serde(alias = "parameter")]
    DiversityParameter,
    #[serde(alias = "human")]
    HumanRating,
}

impl Target {
    pub fn of(self, set: &ResponseSet) -> Option<f64> {
        match self {
            Target::DiversityParameter => set.diversity_parameter,
            Target::HumanRating => set.mean_rating(),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parameter" | "diversity_parameter" => Ok(Target::DiversityParameter),
            "human" | "human_rating" => Ok(Target::HumanRating),
            _ => Err(Error::Input(format!("unknown target `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub dataset: String,
    pub target: Target,
    pub rho: f64,
    pub n_items: usize,
    pub skipped: usize,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Per-item metric scores paired with their annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItems {
    pub conversation_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub targets: Vec<f64>,
    pub skipped: usize,
}

/// Scores every response set carrying `target`. Items without any
/// annotated set count as skipped.
pub fn score_items<M: SetMetric + ?Sized>(
    dataset: &DatasetBundle,
    metric: &M,
    target: Target,
    exec: Execution,
) -> Result<ScoredItems> {
    let mut picked = Vec::new();
    let mut skipped = 0;
    for item in &dataset.items {
        let before = picked.len();
        for set in &item.response_sets {
            if let Some(t) = target.of(set) {
                picked.push((item.conversation.id.clone(), set, t));
            }
        }
        if picked.len() == before {
            log::warn!("{}: no {target:?} annotation, skipped", item.conversation.id);
            skipped += 1;
        }
    }
    let scores = par::try_map(exec, &picked, |(_, set, _)| {
        metric.score(&set.responses).map(|s| s.value)
    })?;
    Ok(ScoredItems {
        conversation_ids: picked.iter().map(|(id, _, _)| id.clone()).collect(),
        targets: picked.iter().map(|&(_, _, t)| t).collect(),
        scores,
        skipped,
    })
}

pub fn correlate_metric<M: SetMetric + ?Sized>(
    dataset: &DatasetBundle,
    metric: &M,
    target: Target,
    exec: Execution,
) -> Result<(CorrelationReport, ScoredItems)> {
    let items = score_items(dataset, metric, target, exec)?;
    let rho = spearman_rho(&items.scores, &items.targets)?;
    Ok((
        CorrelationReport {
            metric: metric.metric().to_string(),
            dataset: dataset.name.clone(),
            target,
            rho,
            n_items: items.scores.len(),
            skipped: items.skipped,
            ci_low: None,
            ci_high: None,
        },
        items,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resample_size: usize,
    pub iterations: usize,
    /// Two-sided miss rate; 0.05 gives a 95% interval.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resample_size: 110,
            iterations: 1000,
            level: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub low: f64,
    pub high: f64,
    pub redraws: usize,
    pub rhos: Vec<f64>,
}

/// Percentile interval of Spearman's rho over resamples drawn with
/// replacement. Iteration `i` uses its own stream seeded from
/// `stream_seed(seed, i)`; resamples with a constant side are redrawn.
pub fn bootstrap_ci(
    scores: &[f64],
    targets: &[f64],
    config: &BootstrapConfig,
    exec: Execution,
) -> Result<BootstrapResult> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: targets.len(),
        });
    }
    if config.iterations < 100 {
        return Err(Error::Input(format!(
            "{} bootstrap iterations < 100",
            config.iterations
        )));
    }
    if config.resample_size < 2 || scores.is_empty() {
        return Err(Error::Input("bootstrap needs resample size >= 2 and data".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Input(format!("level {} outside (0, 1)", config.level)));
    }
    let limit = 10 * config.iterations;
    // shared so every iteration stops once the global budget is gone
    let total_redraws = AtomicUsize::new(0);
    let n = scores.len();
    let draws = par::map_range(exec, config.iterations, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::stream_seed(config.seed, i as u64));
        let mut xs = vec![0.0; config.resample_size];
        let mut ys = vec![0.0; config.resample_size];
        loop {
            for k in 0..config.resample_size {
                let j = rng.random_range(0..n);
                xs[k] = scores[j];
                ys[k] = targets[j];
            }
            match spearman_rho(&xs, &ys) {
                Ok(rho) => return Some(rho),
                Err(_) => {
                    if total_redraws.fetch_add(1, Ordering::Relaxed) >= limit {
                        return None;
                    }
                }
            }
        }
    });
    let redraws = total_redraws.into_inner();
    if redraws > limit || draws.iter().any(Option::is_none) {
        return Err(Error::TooManyDegenerate { redraws, limit });
    }
    let rhos: Vec<f64> = draws.into_iter().flatten().collect();
    let mut sorted = rhos.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        low: nearest_rank(&sorted, config.level / 2.0),
        high: nearest_rank(&sorted, 1.0 - config.level / 2.0),
        redraws,
        rhos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramExport {
    pub label: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    Count(usize),
    Edges(Vec<f64>),
}

/// Right-open bins except the last, which is closed.
pub fn export_histogram(values: &[f64], bins: Bins, label: &str) -> Result<HistogramExport> {
    if values.is_empty() {
        return Err(Error::Input("histogram of no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("histogram of non-finite value".into()));
    }
    let edges = match bins {
        Bins::Edges(e) => {
            if e.len() < 2
                || e.windows(2)
                    .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
            {
                return Err(Error::Input("bin edges must be strictly increasing".into()));
            }
            e
        }
        Bins::Count(k) => {
            let k = k.max(1);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
            let width = (hi - lo) / k as f64;
            let mut e: Vec<f64> = (0..k).map(|i| lo + width * i as f64).collect();
            e.push(hi);
            e
        }
    };
    let last = edges.len() - 2;
    let mut counts = vec![0usize; edges.len() - 1];
    for &v in values {
        if v < edges[0] || v > edges[last + 1] {
            return Err(Error::Input(format!(
                "value {v} outside bin range [{}, {}]",
                edges[0],
                edges[last + 1]
            )));
        }
        // first edge strictly greater than v, minus one
        let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(last);
        counts[idx] += 1;
    }
    Ok(HistogramExport {
        label: label.to_string(),
        bin_edges: edges,
        counts,
    })
}

impl HistogramExport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "label,bin_low,bin_high,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                self.label,
                self.bin_edges[i],
                self.bin_edges[i + 1],
                c
            )?;
        }
        Ok(())
    }
}

/// Integer bins `[lo, lo+1), ..., [hi, hi+1]` for sample counts; with
/// `hi = S` the last bin holds every budget-exhausted run.
pub fn integer_edges(lo: usize, hi: usize) -> Vec<f64> {
    (lo..=hi + 1).map(|v| v as f64).collect()
}
