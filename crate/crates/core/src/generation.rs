//! Diversity threshold generation.
//!
//! Sample `n` responses; while the set misses the threshold and fewer than
//! `S` responses have been drawn in total, evict the response whose removal
//! leaves the highest-scoring `n-1` subset and draw a replacement. The run
//! ends with whatever set is current when it stops.

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, DatasetBundle};
use crate::error::{Error, Result};
use crate::metrics::{DiversityScore, Metric, SetMetric};
use crate::nli::{RankedListSampler, ResponseSampler};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// `#contradictions > threshold`.
    CountContradictionsGt,
    /// `value >= threshold`.
    ValueGe,
}

impl std::str::FromStr for Predicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "count_contradictions_gt" => Ok(Predicate::CountContradictionsGt),
            "value_ge" => Ok(Predicate::ValueGe),
            _ => Err(Error::Input(format!("unknown predicate `{s}`"))),
        }
    }
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Predicate::CountContradictionsGt => "count_contradictions_gt",
            Predicate::ValueGe => "value_ge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub metric: Metric,
    pub predicate: Predicate,
    pub threshold: f64,
    pub set_size: usize,
    pub max_samples: usize,
    pub trials: usize,
}

impl ThresholdSpec {
    /// Baseline NLI with more than 10 of 20 pairs contradicting, n = 5,
    /// S = 20, 10 trials.
    pub fn nli_default() -> Self {
        ThresholdSpec {
            metric: Metric::BaselineNli,
            predicate: Predicate::CountContradictionsGt,
            threshold: 10.0,
            set_size: 5,
            max_samples: 20,
            trials: 10,
        }
    }

    /// Value threshold (e.g. an empirical percentile) for a non-count metric.
    pub fn value(metric: Metric, threshold: f64) -> Self {
        ThresholdSpec {
            metric,
            predicate: Predicate::ValueGe,
            threshold,
            ..Self::nli_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.set_size < 2 {
            return Err(Error::Validation(format!("set size {} < 2", self.set_size)));
        }
        if self.max_samples < self.set_size {
            return Err(Error::Validation(format!(
                "max samples {} < set size {}",
                self.max_samples, self.set_size
            )));
        }
        if self.trials == 0 {
            return Err(Error::Validation("trials must be >= 1".into()));
        }
        if self.predicate == Predicate::CountContradictionsGt && !self.metric.uses_nli() {
            return Err(Error::Validation(format!(
                "contradiction-count predicate needs an NLI metric, got {}",
                self.metric
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Validation("threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn is_met(&self, score: &DiversityScore) -> bool {
        match self.predicate {
            Predicate::CountContradictionsGt => score.counts.is_some_and(|c| c.contradiction as f64 > self.threshold),
            Predicate::ValueGe => score.value >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub removed: String,
    pub removed_index: usize,
    pub replacement: String,
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub conversation_id: String,
    pub trial: usize,
    pub seed: u64,
    pub initial_set: Vec<String>,
    pub steps: Vec<Step>,
    pub final_set: Vec<String>,
    pub starting_score: f64,
    pub ending_score: f64,
    pub best_seen_score: f64,
    pub num_sampled: usize,
    pub threshold_met: bool,
    pub overlap: usize,
    /// The sampler ran out before the budget was spent.
    pub truncated: bool,
}

/// Size of the multiset intersection of two response lists.
pub fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut rest: Vec<&String> = b.iter().collect();
    let mut count = 0;
    for x in a {
        if let Some(pos) = rest.iter().position(|y| *y == x) {
            rest.swap_remove(pos);
            count += 1;
        }
    }
    count
}

/// Index whose removal leaves the highest-scoring subset; lowest index wins
/// ties.
pub fn least_contributing_index<M: SetMetric + ?Sized>(responses: &[String], metric: &M) -> Result<usize> {
    if responses.len() < 3 {
        return Err(Error::InsufficientResponses {
            needed: 3,
            got: responses.len(),
        });
    }
    let scores = metric.leave_one_out(responses)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.value > scores[best].value {
            best = i;
        }
    }
    Ok(best)
}

fn draw<S: ResponseSampler + ?Sized>(sampler: &mut S, conv: &Conversation) -> Result<Option<String>> {
    match sampler.next_response(conv) {
        Ok(r) => Ok(Some(r)),
        Err(Error::PoolExhausted { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_loop<S: ResponseSampler + ?Sized, M: SetMetric + ?Sized>(
    conv: &Conversation,
    sampler: &mut S,
    spec: &ThresholdSpec,
    metric: &M,
    trial: usize,
    seed: u64,
) -> Result<GenerationTrace> {
    spec.validate()?;
    if metric.metric() != spec.metric {
        return Err(Error::Validation(format!(
            "evaluator computes {}, spec asks for {}",
            metric.metric(),
            spec.metric
        )));
    }
    let mut current = Vec::with_capacity(spec.set_size);
    for _ in 0..spec.set_size {
        match draw(sampler, conv)? {
            Some(r) => current.push(r),
            None => return Err(Error::PoolExhausted { drawn: current.len() }),
        }
    }
    let initial_set = current.clone();
    let mut score = metric.score(&current)?;
    let starting_score = score.value;
    let mut best_seen = score.value;
    let mut num_sampled = spec.set_size;
    let mut steps = Vec::new();
    let mut truncated = false;

    while !spec.is_met(&score) && num_sampled < spec.max_samples {
        let idx = least_contributing_index(&current, metric)?;
        let Some(replacement) = draw(sampler, conv)? else {
            truncated = true;
            break;
        };
        num_sampled += 1;
        let removed = current.remove(idx);
        current.push(replacement.clone());
        score = metric.score(&current)?;
        best_seen = best_seen.max(score.value);
        steps.push(Step {
            removed,
            removed_index: idx,
            replacement,
            score_after: score.value,
        });
    }

    Ok(GenerationTrace {
        conversation_id: conv.id.clone(),
        trial,
        seed,
        overlap: multiset_overlap(&initial_set, &current),
        initial_set,
        steps,
        threshold_met: spec.is_met(&score),
        final_set: current,
        starting_score,
        ending_score: score.value,
        best_seen_score: best_seen,
        num_sampled,
        truncated,
    })
}

pub fn run_threshold_generation<S: ResponseSampler + ?Sized, M: SetMetric + ?Sized>(
    conv: &Conversation,
    sampler: &mut S,
    spec: &ThresholdSpec,
    metric: &M,
) -> Result<GenerationTrace> {
    run_loop(conv, sampler, spec, metric, 0, 0)
}

/// The same loop fed from a ranked candidate list: the initial set is the
/// top `n`, replacements come in rank order.
pub fn beam_mode_run<M: SetMetric + ?Sized>(
    conv: &Conversation,
    ranked_list: Vec<String>,
    spec: &ThresholdSpec,
    metric: &M,
) -> Result<GenerationTrace> {
    if ranked_list.len() < spec.max_samples {
        log::warn!(
            "{}: ranked list has {} candidates, budget is {}",
            conv.id,
            ranked_list.len(),
            spec.max_samples
        );
    }
    let mut sampler = RankedListSampler::new(ranked_list);
    run_loop(conv, &mut sampler, spec, metric, 0, 0)
}

pub type SamplerFactory<'a> = dyn Fn(&Conversation, u64) -> Result<Box<dyn ResponseSampler>> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFailure {
    pub conversation_id: String,
    pub trial: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub completed: usize,
    pub mean_starting: f64,
    pub mean_ending: f64,
    pub mean_num_sampled: f64,
    pub mean_overlap: f64,
    pub threshold_met_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub mean_starting: f64,
    pub mean_ending: f64,
    pub mean_num_sampled: f64,
    pub mean_overlap: f64,
    pub threshold_met_rate: f64,
    pub percent_increase: Option<f64>,
    pub per_trial: Vec<TrialSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRun {
    pub traces: Vec<GenerationTrace>,
    pub failures: Vec<TraceFailure>,
    pub summary: CorpusSummary,
}

/// Relative change `(end - start) / |start|` in percent; `None` at start 0.
pub fn percent_increase(start: f64, end: f64) -> Option<f64> {
    (start != 0.0).then(|| (end - start) / start.abs() * 100.0)
}

/// Mean of per-condition percent increases over `(start, end)` pairs.
pub fn mean_percent_increase(rows: &[(f64, f64)]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &(start, end) in rows {
        sum += percent_increase(start, end)?;
    }
    Some(sum / rows.len() as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize(traces: &[GenerationTrace], trials: usize, failed: usize) -> CorpusSummary {
    let per_trial: Vec<TrialSummary> = (0..trials)
        .filter_map(|trial| {
            let ts: Vec<&GenerationTrace> = traces.iter().filter(|t| t.trial == trial).collect();
            (!ts.is_empty()).then(|| TrialSummary {
                trial,
                completed: ts.len(),
                mean_starting: mean(ts.iter().map(|t| t.starting_score)),
                mean_ending: mean(ts.iter().map(|t| t.ending_score)),
                mean_num_sampled: mean(ts.iter().map(|t| t.num_sampled as f64)),
                mean_overlap: mean(ts.iter().map(|t| t.overlap as f64)),
                threshold_met_rate: mean(ts.iter().map(|t| t.threshold_met as u8 as f64)),
            })
        })
        .collect();
    let mean_starting = mean(per_trial.iter().map(|t| t.mean_starting));
    let mean_ending = mean(per_trial.iter().map(|t| t.mean_ending));
    CorpusSummary {
        trials,
        completed: traces.len(),
        failed,
        mean_starting,
        mean_ending,
        mean_num_sampled: mean(per_trial.iter().map(|t| t.mean_num_sampled)),
        mean_overlap: mean(per_trial.iter().map(|t| t.mean_overlap)),
        threshold_met_rate: mean(per_trial.iter().map(|t| t.threshold_met_rate)),
        percent_increase: if per_trial.is_empty() {
            None
        } else {
            percent_increase(mean_starting, mean_ending)
        },
        per_trial,
    }
}

/// Runs every conversation for `spec.trials` trials. Trial `t` of
/// conversation `c` gets sampler seed `trial_seed(base_seed, t, c.id)`.
/// Failures are collected, not propagated.
pub fn run_corpus<M: SetMetric + ?Sized>(
    dataset: &DatasetBundle,
    sampler_factory: &SamplerFactory<'_>,
    spec: &ThresholdSpec,
    metric: &M,
    base_seed: u64,
    exec: Execution,
) -> Result<CorpusRun> {
    spec.validate()?;
    let jobs: Vec<(usize, &Conversation)> = (0..spec.trials)
        .flat_map(|t| dataset.items.iter().map(move |it| (t, &it.conversation)))
        .collect();
    let outcomes = par::map(exec, &jobs, |&(trial, conv)| {
        let seed = seed::trial_seed(base_seed, trial, &conv.id);
        let mut sampler = sampler_factory(conv, seed)?;
        run_loop(conv, sampler.as_mut(), spec, metric, trial, seed)
    });
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for ((trial, conv), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(t) => traces.push(t),
            Err(e) => {
                log::warn!("{} trial {trial}: {e}", conv.id);
                failures.push(TraceFailure {
                    conversation_id: conv.id.clone(),
                    trial: *trial,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let summary = summarize(&traces, spec.trials, failures.len());
    Ok(CorpusRun {
        traces,
        failures,
        summary,
    })
}
