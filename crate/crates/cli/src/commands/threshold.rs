use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use nlidiv_core::corpus::{split_at_random_turn, truncate_context, Conversation, DatasetKind};
use nlidiv_core::eval::{export_histogram, integer_edges, Bins};
use nlidiv_core::generation::{run_corpus, CorpusSummary, Predicate, ThresholdSpec, TraceFailure};
use nlidiv_core::metrics::{Metric, MetricEvaluator};
use nlidiv_core::nli::{MockPoolSampler, RankedListSampler, RemoteSampler, ResponseSampler, SamplingParams};
use nlidiv_core::Error;
use serde::{Deserialize, Serialize};

use super::{csv_with_header, jsonl, pretty, Artifacts};
use crate::config::{Backend, Context, Header};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Nucleus sampling on the sidecar
    Remote,
    /// Seeded draws without replacement from `--pool`
    MockPool,
    /// Candidates in `--pool` order (beam mode)
    RankedList,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdArgs {
    /// Conversations (normalized JSON lines)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Diversity metric driving the loop [default: baseline_nli]
    #[arg(long)]
    pub metric: Option<Metric>,
    /// count_contradictions_gt or value_ge [default: count for NLI metrics]
    #[arg(long)]
    pub predicate: Option<Predicate>,
    /// Threshold value [default: 10 for the contradiction count]
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Responses per set, n [default: 5]
    #[arg(long)]
    pub set_size: Option<usize>,
    /// Total sampling budget S including the first n [default: 20]
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Independent trials per conversation [default: 10]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Replacement source [default: mock-pool for the mock backend, else remote]
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerKind>,
    /// Candidate responses per conversation: lines of {"id", "responses"}
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Use each conversation whole instead of cutting it at a seeded turn
    #[arg(long)]
    pub no_split: bool,
    /// Namespace for the seeded context split [default: nlidiv]
    #[arg(long)]
    pub split_namespace: Option<String>,
    /// Keep the last N whitespace tokens of the context [default: 128]
    #[arg(long)]
    pub truncate_tokens: Option<usize>,
    /// Dialogue model for the remote sampler [default: microsoft/DialoGPT-large]
    #[arg(long)]
    pub sample_model: Option<String>,
    /// Nucleus mass for the remote sampler [default: 0.9]
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Generation length cap for the remote sampler [default: 64]
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
}

impl ThresholdArgs {
    pub fn spec(&self) -> Result<ThresholdSpec> {
        let metric = self.metric.unwrap_or(Metric::BaselineNli);
        let predicate = self.predicate.unwrap_or(if metric.uses_nli() {
            Predicate::CountContradictionsGt
        } else {
            Predicate::ValueGe
        });
        let threshold = match (self.threshold, predicate) {
            (Some(t), _) => t,
            (None, Predicate::CountContradictionsGt) => 10.0,
            (None, Predicate::ValueGe) => bail!("--threshold is required for a value predicate"),
        };
        let defaults = ThresholdSpec::nli_default();
        let spec = ThresholdSpec {
            metric,
            predicate,
            threshold,
            set_size: self.set_size.unwrap_or(defaults.set_size),
            max_samples: self.max_samples.unwrap_or(defaults.max_samples),
            trials: self.trials.unwrap_or(defaults.trials),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Deserialize)]
struct PoolLine {
    id: String,
    responses: Vec<String>,
}

fn load_pool(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening pool {}", path.display()))?;
    let mut pool = HashMap::new();
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: PoolLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), no + 1))?;
        pool.insert(l.id, l.responses);
    }
    Ok(pool)
}

/// One row in the shape of the published results table.
#[derive(Serialize)]
struct TableRow {
    metric: Metric,
    starting: f64,
    ending: f64,
    num_sampled: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    kind: &'static str,
    header: &'a Header,
    spec: &'a ThresholdSpec,
    table_row: TableRow,
    summary: &'a CorpusSummary,
    failures: &'a [TraceFailure],
}

pub fn run(ctx: &Context, args: &ThresholdArgs) -> Result<Artifacts> {
    let Some(path) = &args.dataset else {
        bail!("threshold needs --dataset");
    };
    let spec = args.spec()?;
    let mut dataset = ctx.load_dataset(path, DatasetKind::GenerationContext)?;

    let namespace = args.split_namespace.as_deref().unwrap_or("nlidiv");
    let max_tokens = args.truncate_tokens.unwrap_or(128);
    let mut prepared = Vec::with_capacity(dataset.items.len());
    for mut item in dataset.items {
        let context = if args.no_split {
            item.conversation.clone()
        } else {
            match split_at_random_turn(&item.conversation, namespace) {
                Ok((ctx, _)) => ctx,
                Err(e @ Error::CannotSplit { .. }) if !ctx.load_options().strict => {
                    log::warn!("{e}; skipped");
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        };
        item.conversation = truncate_context(&context, max_tokens);
        prepared.push(item);
    }
    dataset.items = prepared;

    let sampler_kind = args.sampler.unwrap_or(match ctx.backend() {
        Backend::Mock => SamplerKind::MockPool,
        Backend::Remote => SamplerKind::Remote,
    });
    let pool = match (sampler_kind, &args.pool) {
        (SamplerKind::Remote, _) => HashMap::new(),
        (_, Some(p)) => load_pool(p)?,
        (_, None) => bail!("--sampler {sampler_kind:?} needs --pool"),
    };
    let client = match sampler_kind {
        SamplerKind::Remote => Some(ctx.client()?),
        _ => None,
    };
    let defaults = SamplingParams::default();
    let params = SamplingParams {
        p: args.top_p.unwrap_or(defaults.p),
        max_new_tokens: args.max_new_tokens.unwrap_or(defaults.max_new_tokens),
        model: args.sample_model.clone().unwrap_or(defaults.model),
        truncate_tokens: max_tokens as u32,
        seed: 0,
    };
    let factory = |conv: &Conversation, seed: u64| -> nlidiv_core::Result<Box<dyn ResponseSampler>> {
        let candidates = || {
            pool.get(&conv.id)
                .cloned()
                .ok_or_else(|| Error::Input(format!("no pool entry for conversation `{}`", conv.id)))
        };
        Ok(match sampler_kind {
            SamplerKind::MockPool => Box::new(MockPoolSampler::new(candidates()?, seed)),
            SamplerKind::RankedList => Box::new(RankedListSampler::new(candidates()?)),
            SamplerKind::Remote => Box::new(RemoteSampler::new(
                client.clone().expect("client built for the remote sampler"),
                SamplingParams { seed, ..params.clone() },
            )),
        })
    };

    let nli = if spec.metric.uses_nli() { Some(ctx.nli()?) } else { None };
    let embedder = if spec.metric == Metric::SentEmbed {
        Some(ctx.embedder()?)
    } else {
        None
    };
    // conversations run in parallel; each loop scores its pairs sequentially
    let eval =
        MetricEvaluator::for_metric(spec.metric, nli, embedder)?.with_execution(nlidiv_core::Execution::Sequential);
    let run = run_corpus(&dataset, &factory, &spec, &eval, ctx.seed(), ctx.exec)?;

    let header = ctx.header("threshold", args)?;
    let s = &run.summary;
    let doc = pretty(&SummaryDoc {
        kind: "threshold_summary",
        header: &header,
        spec: &spec,
        table_row: TableRow {
            metric: spec.metric,
            starting: s.mean_starting,
            ending: s.mean_ending,
            num_sampled: s.mean_num_sampled,
        },
        summary: s,
        failures: &run.failures,
    })?;

    let mut out = Artifacts::default();
    out.file("traces.jsonl", jsonl(&header, &run.traces)?);
    out.file("summary.json", doc.clone());
    if !run.traces.is_empty() {
        let sampled: Vec<f64> = run.traces.iter().map(|t| t.num_sampled as f64).collect();
        let hist = export_histogram(
            &sampled,
            Bins::Edges(integer_edges(spec.set_size, spec.max_samples)),
            "num_sampled",
        )?;
        let mut body = Vec::new();
        hist.write_csv(&mut body)?;
        out.file("num_sampled.csv", csv_with_header(&header, &body)?);
    }
    out.stdout = doc;
    Ok(out)
}
