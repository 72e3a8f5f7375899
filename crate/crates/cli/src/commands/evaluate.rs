use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use nlidiv_core::corpus::DatasetKind;
use nlidiv_core::eval::{
    bootstrap_ci, correlate_metric, export_histogram, Bins, BootstrapConfig, CorrelationReport, HistogramExport, Target,
};
use nlidiv_core::metrics::{Metric, MetricEvaluator};
use serde::{Deserialize, Serialize};

use super::{csv_with_header, pretty, Artifacts};
use crate::config::{Context, Header};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Annotated dataset: `.csv` (schema map) or normalized JSON lines
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Metric to evaluate; repeat for several [default: confidence_nli]
    #[arg(long = "metric")]
    #[serde(rename = "metric")]
    pub metrics: Vec<Metric>,
    /// Annotation to correlate with: parameter or human [default: parameter]
    #[arg(long)]
    pub target: Option<Target>,
    /// Add a percentile bootstrap interval
    #[arg(long)]
    pub bootstrap: bool,
    /// Bootstrap iterations [default: 1000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Items per bootstrap resample [default: 110]
    #[arg(long)]
    pub resample_size: Option<usize>,
    /// Two-sided miss rate of the interval [default: 0.05]
    #[arg(long)]
    pub level: Option<f64>,
    /// Histogram bins per metric [default: 20]
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Serialize)]
struct EvaluationDoc<'a> {
    kind: &'static str,
    header: &'a Header,
    reports: &'a [CorrelationReport],
}

pub fn run(ctx: &Context, args: &EvaluateArgs) -> Result<Artifacts> {
    let Some(path) = &args.dataset else {
        bail!("evaluate-metric needs --dataset");
    };
    let metrics = if args.metrics.is_empty() {
        vec![Metric::ConfidenceNli]
    } else {
        args.metrics.clone()
    };
    let target = args.target.unwrap_or(Target::DiversityParameter);
    let dataset = ctx.load_dataset(path, DatasetKind::DiversityEval)?;
    let header = ctx.header("evaluate-metric", args)?;

    let mut reports = Vec::new();
    let mut histograms = Vec::new();
    let mut items = csv::Writer::from_writer(Vec::new());
    items.write_record(["conversation_id", "metric", "score", "target"])?;
    for metric in metrics {
        let nli = if metric.uses_nli() { Some(ctx.nli()?) } else { None };
        let embedder = if metric == Metric::SentEmbed {
            Some(ctx.embedder()?)
        } else {
            None
        };
        let eval = MetricEvaluator::for_metric(metric, nli, embedder)?.with_execution(ctx.exec);
        let (mut report, scored) = correlate_metric(&dataset, &eval, target, ctx.exec)?;
        if args.bootstrap {
            let cfg = BootstrapConfig {
                resample_size: args.resample_size.unwrap_or(110),
                iterations: args.iterations.unwrap_or(1000),
                level: args.level.unwrap_or(0.05),
                seed: ctx.seed(),
            };
            let ci = bootstrap_ci(&scored.scores, &scored.targets, &cfg, ctx.exec)?;
            report.ci_low = Some(ci.low);
            report.ci_high = Some(ci.high);
        }
        for ((id, s), t) in scored.conversation_ids.iter().zip(&scored.scores).zip(&scored.targets) {
            items.write_record([id.as_str(), metric.as_str(), &s.to_string(), &t.to_string()])?;
        }
        histograms.extend(group_histograms(
            metric,
            &scored.scores,
            &scored.targets,
            args.bins.unwrap_or(20),
        )?);
        reports.push(report);
    }

    let doc = pretty(&EvaluationDoc {
        kind: "metric_evaluation",
        header: &header,
        reports: &reports,
    })?;
    let mut hist_csv = Vec::new();
    for (i, h) in histograms.iter().enumerate() {
        let mut block = Vec::new();
        h.write_csv(&mut block)?;
        // one column header for the whole file
        let skip = if i == 0 {
            0
        } else {
            block.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)
        };
        hist_csv.extend_from_slice(&block[skip..]);
    }

    let mut out = Artifacts::default();
    out.file("evaluation.json", doc.clone());
    out.file("item_scores.csv", csv_with_header(&header, &items.into_inner()?)?);
    out.file(
        "histograms.json",
        pretty(&serde_json::json!({ "header": &header, "histograms": &histograms }))?,
    );
    out.file("histograms.csv", csv_with_header(&header, &hist_csv)?);
    out.stdout = doc;
    Ok(out)
}

/// Score histograms split by annotation value on shared edges, so groups
/// (e.g. low vs high diversity) overlay directly. Continuous targets with
/// more than 10 distinct values get a single `all` histogram.
fn group_histograms(metric: Metric, scores: &[f64], targets: &[f64], bins: usize) -> Result<Vec<HistogramExport>> {
    if scores.is_empty() {
        return Ok(vec![]);
    }
    let edges = export_histogram(scores, Bins::Count(bins), "all")?.bin_edges;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, t) in scores.iter().zip(targets) {
        groups.entry(t.to_string()).or_default().push(*s);
    }
    if groups.len() > 10 {
        groups = BTreeMap::from([("all".to_string(), scores.to_vec())]);
    }
    groups
        .iter()
        .map(|(t, vals)| {
            let label = if t == "all" {
                format!("{metric}")
            } else {
                format!("{metric}@{t}")
            };
            Ok(export_histogram(vals, Bins::Edges(edges.clone()), &label)?)
        })
        .collect()
}
