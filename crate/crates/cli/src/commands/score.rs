use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use nlidiv_core::corpus::DatasetKind;
use nlidiv_core::metrics::{Metric, MetricEvaluator, ScoreRow, SetMetric};
use nlidiv_core::par;
use serde::{Deserialize, Serialize};

use super::{jsonl, Artifacts};
use crate::config::Context;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreArgs {
    /// Dataset: `.csv` (schema map) or normalized JSON lines
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Metric to compute; repeat for several [default: baseline_nli]
    #[arg(long = "metric")]
    #[serde(rename = "metric")]
    pub metrics: Vec<Metric>,
}

/// One row per (response set, metric), in dataset order.
pub fn run(ctx: &Context, args: &ScoreArgs) -> Result<Artifacts> {
    let Some(path) = &args.dataset else {
        bail!("score needs --dataset");
    };
    let metrics = if args.metrics.is_empty() {
        vec![Metric::BaselineNli]
    } else {
        args.metrics.clone()
    };
    let dataset = ctx.load_dataset(path, DatasetKind::DiversityEval)?;
    let sets: Vec<_> = dataset
        .items
        .iter()
        .flat_map(|item| item.response_sets.iter())
        .collect();

    let mut rows = Vec::new();
    for metric in metrics {
        let nli = if metric.uses_nli() { Some(ctx.nli()?) } else { None };
        let embedder = if metric == Metric::SentEmbed {
            Some(ctx.embedder()?)
        } else {
            None
        };
        let eval = MetricEvaluator::for_metric(metric, nli, embedder)?.with_execution(ctx.exec);
        let scored = par::try_map(ctx.exec, &sets, |set| eval.score(&set.responses))?;
        for (set, score) in sets.iter().zip(scored) {
            rows.push((set.conversation_id.clone(), score));
        }
    }
    let rows: Vec<ScoreRow> = rows
        .into_iter()
        .map(|(conversation_id, s)| ScoreRow {
            conversation_id,
            metric: s.metric,
            value: s.value,
            counts: s.counts,
        })
        .collect();

    let header = ctx.header("score", args)?;
    let body = jsonl(&header, &rows)?;
    let mut out = Artifacts::default();
    out.file("scores.jsonl", body.clone());
    out.stdout = body;
    Ok(out)
}
