use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use nlidiv_core::corpus::{load_multi_reference, ResponseSource};
use nlidiv_core::generation::GenerationTrace;
use nlidiv_core::relevancy::{set_relevancy, Phase, RelevancyReport};
use nlidiv_core::{par, Error};
use serde::{Deserialize, Serialize};

use super::{jsonl, pretty, Artifacts};
use crate::config::{Context, Header};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevancyArgs {
    /// Trace file written by `threshold`
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Multi-reference dataset (normalized JSON lines)
    #[arg(long)]
    pub references: Option<PathBuf>,
}

/// Starting vs ending relevancy averaged over traces.
#[derive(Debug, Serialize)]
pub struct RelevancySummary {
    pub traces: usize,
    pub starting_bleu: f64,
    pub ending_bleu: f64,
    pub starting_bertscore: f64,
    pub ending_bertscore: f64,
    pub delta_bleu: f64,
    pub delta_bertscore: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    kind: &'static str,
    header: &'a Header,
    summary: &'a RelevancySummary,
}

/// Reads trace lines, skipping the header line.
pub fn read_traces(path: &Path) -> Result<Vec<GenerationTrace>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening traces {}", path.display()))?;
    let mut traces = Vec::new();
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with("{\"header\"") {
            continue;
        }
        traces.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), no + 1))?);
    }
    Ok(traces)
}

pub fn run(ctx: &Context, args: &RelevancyArgs) -> Result<Artifacts> {
    let (Some(trace_path), Some(ref_path)) = (&args.traces, &args.references) else {
        bail!("relevancy needs --traces and --references");
    };
    let traces = read_traces(trace_path)?;
    let (refs, _) = load_multi_reference(ref_path, ctx.load_options())?;

    let mut unmatched: Vec<String> = traces
        .iter()
        .filter(|t| refs.get(&t.conversation_id).is_none())
        .map(|t| t.conversation_id.clone())
        .collect();
    unmatched.dedup();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedIds(unmatched).into());
    }

    let scorer = ctx.scorer()?;
    let reports = par::try_map(ctx.exec, &traces, |t| -> nlidiv_core::Result<[RelevancyReport; 2]> {
        let item = refs.get(&t.conversation_id).expect("alignment checked above");
        let set = item
            .response_sets
            .iter()
            .find(|s| s.source == ResponseSource::Human)
            .or(item.response_sets.first())
            .ok_or_else(|| Error::Input(format!("`{}` has no reference set", t.conversation_id)))?;
        Ok([
            set_relevancy(
                &t.conversation_id,
                Phase::Starting,
                &t.initial_set,
                &set.responses,
                scorer.as_ref(),
            )?,
            set_relevancy(
                &t.conversation_id,
                Phase::Ending,
                &t.final_set,
                &set.responses,
                scorer.as_ref(),
            )?,
        ])
    })?;

    let n = reports.len().max(1) as f64;
    let mean = |f: &dyn Fn(&[RelevancyReport; 2]) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let starting_bleu = mean(&|r| r[0].bleu);
    let ending_bleu = mean(&|r| r[1].bleu);
    let starting_bertscore = mean(&|r| r[0].bertscore);
    let ending_bertscore = mean(&|r| r[1].bertscore);
    let summary = RelevancySummary {
        traces: reports.len(),
        starting_bleu,
        ending_bleu,
        starting_bertscore,
        ending_bertscore,
        delta_bleu: ending_bleu - starting_bleu,
        delta_bertscore: ending_bertscore - starting_bertscore,
    };

    let header = ctx.header("relevancy", args)?;
    let doc = pretty(&SummaryDoc {
        kind: "relevancy_summary",
        header: &header,
        summary: &summary,
    })?;
    let rows: Vec<RelevancyReport> = reports.into_iter().flatten().collect();
    let mut out = Artifacts::default();
    out.file("relevancy.jsonl", jsonl(&header, &rows)?);
    out.file("relevancy_summary.json", doc.clone());
    out.stdout = doc;
    Ok(out)
}
