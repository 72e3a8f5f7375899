use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Artifacts;
use crate::config::Context;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// JSON documents written by evaluate-metric, threshold or relevancy
    #[arg(required = false)]
    pub inputs: Vec<PathBuf>,
}

fn num(v: &Value, key: &str) -> String {
    match v.get(key).and_then(Value::as_f64) {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn text(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => "-".into(),
    }
}

/// Collates result documents into markdown tables.
pub fn run(_ctx: &Context, args: &ReportArgs) -> Result<Artifacts> {
    if args.inputs.is_empty() {
        bail!("report needs at least one input document");
    }
    let mut correlations = Vec::new();
    let mut generation = Vec::new();
    let mut relevancy = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let source = path.display().to_string();
        match doc.get("kind").and_then(Value::as_str) {
            Some("metric_evaluation") => {
                for r in doc["reports"].as_array().into_iter().flatten() {
                    correlations.push(r.clone());
                }
            }
            Some("threshold_summary") => generation.push((source, doc)),
            Some("relevancy_summary") => relevancy.push((source, doc)),
            other => bail!("{}: unrecognized document kind {other:?}", path.display()),
        }
    }

    let mut md = String::new();
    if !correlations.is_empty() {
        md.push_str("## Metric correlation\n\n| metric | dataset | target | rho | 95% CI | items |\n|---|---|---|---|---|---|\n");
        for r in &correlations {
            let ci = match (
                r.get("ci_low").and_then(Value::as_f64),
                r.get("ci_high").and_then(Value::as_f64),
            ) {
                (Some(lo), Some(hi)) => format!("[{lo:.3}, {hi:.3}]"),
                _ => "-".into(),
            };
            writeln!(
                md,
                "| {} | {} | {} | {} | {ci} | {} |",
                text(r, "metric"),
                text(r, "dataset"),
                text(r, "target"),
                num(r, "rho"),
                text(r, "n_items")
            )?;
        }
        md.push('\n');
    }
    if !generation.is_empty() {
        md.push_str("## Threshold generation\n\n| source | metric | predicate | starting | ending | num sampled | increase % | overlap |\n|---|---|---|---|---|---|---|---|\n");
        for (source, d) in &generation {
            let s = &d["summary"];
            writeln!(
                md,
                "| {source} | {} | {} {} | {} | {} | {} | {} | {} |",
                text(&d["spec"], "metric"),
                text(&d["spec"], "predicate"),
                text(&d["spec"], "threshold"),
                num(s, "mean_starting"),
                num(s, "mean_ending"),
                num(s, "mean_num_sampled"),
                num(s, "percent_increase"),
                num(s, "mean_overlap")
            )?;
        }
        md.push('\n');
    }
    if !relevancy.is_empty() {
        md.push_str("## Relevancy\n\n| source | BLEU start | BLEU end | BERTScore start | BERTScore end |\n|---|---|---|---|---|\n");
        for (source, d) in &relevancy {
            let s = &d["summary"];
            writeln!(
                md,
                "| {source} | {} | {} | {} | {} |",
                num(s, "starting_bleu"),
                num(s, "ending_bleu"),
                num(s, "starting_bertscore"),
                num(s, "ending_bertscore")
            )?;
        }
        md.push('\n');
    }
    let mut out = Artifacts::default();
    out.file("report.md", md.clone().into_bytes());
    out.stdout = md.into_bytes();
    Ok(out)
}
