//! Conversations, response sets and dataset loaders.
//!
//! All loaders produce a [`DatasetBundle`]. The normalized on-disk format is
//! JSON lines, one conversation per line:
//!
//! ```text
//! {"id": "c1", "turns": [{"speaker": "A", "text": "hi"}],
//!  "response_sets": [{"source": "human", "responses": ["..."],
//!                     "diversity_parameter": 0.9, "human_ratings": [3.5, 4.0]}]}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let conv = Conversation { id: id.into(), turns };
        conv.validate()?;
        Ok(conv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::Validation(format!("conversation `{}` has no turns", self.id)));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(Error::Validation(format!(
                "conversation `{}` turn {i} is empty",
                self.id
            )));
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.turns.iter().map(|t| t.text.split_whitespace().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Human,
    Model,
    Sampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub conversation_id: String,
    pub responses: Vec<String>,
    pub source: ResponseSource,
    pub diversity_parameter: Option<f64>,
    pub human_ratings: Option<Vec<f64>>,
}

impl ResponseSet {
    pub fn new(conversation_id: impl Into<String>, source: ResponseSource, responses: Vec<String>) -> Self {
        ResponseSet {
            conversation_id: conversation_id.into(),
            responses,
            source,
            diversity_parameter: None,
            human_ratings: None,
        }
    }

    /// Arithmetic mean of the annotator ratings.
    pub fn mean_rating(&self) -> Option<f64> {
        let ratings = self.human_ratings.as_ref()?;
        if ratings.is_empty() {
            return None;
        }
        Some(ratings.iter().sum::<f64>() / ratings.len() as f64)
    }
}

/// Ratings live on a 1..=5 scale with half-point steps.
pub fn is_valid_rating(r: f64) -> bool {
    (1.0..=5.0).contains(&r) && (r * 2.0).fract() == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    DiversityEval,
    MultiReference,
    GenerationContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub conversation: Conversation,
    pub response_sets: Vec<ResponseSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: String,
    pub kind: DatasetKind,
    pub items: Vec<DatasetItem>,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, conversation_id: &str) -> Option<&DatasetItem> {
        self.items.iter().find(|it| it.conversation.id == conversation_id)
    }
}

/// Rows or items skipped by a permissive load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub items: usize,
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { strict: true }
    }
}

// --- CSV -------------------------------------------------------------------

/// Column mapping for the diversity-evaluation CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMap {
    #[serde(default)]
    pub id_column: Option<String>,
    pub context_column: String,
    /// When set, the context cell is split into turns on this separator.
    #[serde(default)]
    pub turn_separator: Option<String>,
    pub response_columns: Vec<String>,
    #[serde(default)]
    pub parameter_column: Option<String>,
    #[serde(default)]
    pub rating_columns: Vec<String>,
    #[serde(default = "default_source")]
    pub source: ResponseSource,
}

fn default_source() -> ResponseSource {
    ResponseSource::Human
}

impl SchemaMap {
    /// Default layout for the conTest/decTest `respGen` files. Unverified
    /// against the released data; pass an explicit map when it differs.
    pub fn default_con_test() -> Self {
        SchemaMap {
            id_column: None,
            context_column: "context".into(),
            turn_separator: None,
            response_columns: (0..5).map(|i| format!("resp_{i}")).collect(),
            parameter_column: Some("label_value".into()),
            rating_columns: (0..10).map(|i| format!("hds_{i}")).collect(),
            source: ResponseSource::Human,
        }
    }

    pub fn default_dec_test() -> Self {
        SchemaMap {
            response_columns: (0..10).map(|i| format!("resp_{i}")).collect(),
            source: ResponseSource::Model,
            ..Self::default_con_test()
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Parses a diversity parameter cell. Binary labels map to 1/0.
fn parse_parameter(cell: &str) -> Option<std::result::Result<f64, String>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return None;
    }
    let v = match cell.to_ascii_lowercase().as_str() {
        "high" | "true" | "yes" => Ok(1.0),
        "low" | "false" | "no" => Ok(0.0),
        other => other
            .parse::<f64>()
            .map_err(|_| format!("unparseable diversity parameter `{cell}`")),
    };
    Some(v)
}

pub fn load_diversity_eval_csv(
    path: &Path,
    schema: &SchemaMap,
    opts: LoadOptions,
) -> Result<(DatasetBundle, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_diversity_eval_reader(file, &name, schema, opts)
}

pub fn load_diversity_eval_reader<R: std::io::Read>(
    reader: R,
    name: &str,
    schema: &SchemaMap,
    opts: LoadOptions,
) -> Result<(DatasetBundle, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let id_idx = schema.id_column.as_deref().map(col).transpose()?;
    let ctx_idx = col(&schema.context_column)?;
    let resp_idx = schema
        .response_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let param_idx = schema.parameter_column.as_deref().map(col).transpose()?;
    let rating_idx = schema
        .rating_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut items = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed = (|| -> std::result::Result<DatasetItem, String> {
            let id = match id_idx {
                Some(i) => record[i].trim().to_string(),
                None => format!("row-{row}"),
            };
            if !seen.insert(id.clone()) {
                return Err(format!("duplicate conversation id `{id}`"));
            }
            let context = &record[ctx_idx];
            let turns: Vec<Turn> = match &schema.turn_separator {
                Some(sep) => context
                    .split(sep.as_str())
                    .filter(|t| !t.trim().is_empty())
                    .enumerate()
                    .map(|(k, t)| Turn::new(format!("speaker_{}", k % 2 + 1), t.trim()))
                    .collect(),
                None => vec![Turn::new("context", context)],
            };
            let conversation = Conversation { id: id.clone(), turns };
            conversation.validate().map_err(|e| e.to_string())?;
            let responses: Vec<String> = resp_idx
                .iter()
                .map(|&i| record[i].to_string())
                .filter(|r| !r.is_empty())
                .collect();
            let diversity_parameter = match param_idx.and_then(|i| parse_parameter(&record[i])) {
                Some(v) => Some(v?),
                None => None,
            };
            let mut ratings = Vec::new();
            for &i in &rating_idx {
                let cell = record[i].trim();
                if cell.is_empty() {
                    continue;
                }
                let r: f64 = cell
                    .parse()
                    .map_err(|_| format!("unparseable rating `{cell}` in `{}`", &headers[i]))?;
                if !is_valid_rating(r) {
                    return Err(format!(
                        "rating {r} in `{}` outside 1..=5 half-point scale",
                        &headers[i]
                    ));
                }
                ratings.push(r);
            }
            let set = ResponseSet {
                conversation_id: id,
                responses,
                source: schema.source,
                diversity_parameter,
                human_ratings: (!ratings.is_empty()).then_some(ratings),
            };
            Ok(DatasetItem {
                conversation,
                response_sets: vec![set],
            })
        })();
        match parsed {
            Ok(item) => items.push(item),
            Err(message) if opts.strict => return Err(Error::RowValidation { row, message }),
            Err(message) => {
                log::warn!("skipping row {row}: {message}");
                report.skipped.push((row, message));
            }
        }
    }
    report.items = items.len();
    Ok((
        DatasetBundle {
            name: name.to_string(),
            kind: DatasetKind::DiversityEval,
            items,
        },
        report,
    ))
}

// --- JSON lines ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResponseSetRecord {
    source: ResponseSource,
    responses: Vec<String>,
    #[serde(default)]
    diversity_parameter: Option<f64>,
    #[serde(default)]
    human_ratings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ItemRecord {
    id: String,
    turns: Vec<Turn>,
    #[serde(default)]
    response_sets: Vec<ResponseSetRecord>,
}

impl ItemRecord {
    fn into_item(self) -> DatasetItem {
        let id = self.id;
        let response_sets = self
            .response_sets
            .into_iter()
            .map(|r| ResponseSet {
                conversation_id: id.clone(),
                responses: r.responses,
                source: r.source,
                diversity_parameter: r.diversity_parameter,
                human_ratings: r.human_ratings,
            })
            .collect();
        DatasetItem {
            conversation: Conversation { id, turns: self.turns },
            response_sets,
        }
    }

    fn from_item(item: &DatasetItem) -> Self {
        ItemRecord {
            id: item.conversation.id.clone(),
            turns: item.conversation.turns.clone(),
            response_sets: item
                .response_sets
                .iter()
                .map(|r| ResponseSetRecord {
                    source: r.source,
                    responses: r.responses.clone(),
                    diversity_parameter: r.diversity_parameter,
                    human_ratings: r.human_ratings.clone(),
                })
                .collect(),
        }
    }
}

fn validate_item(item: &DatasetItem, kind: DatasetKind) -> std::result::Result<(), String> {
    item.conversation.validate().map_err(|e| e.to_string())?;
    for set in &item.response_sets {
        if let Some(r) = set.human_ratings.iter().flatten().find(|r| !is_valid_rating(**r)) {
            return Err(format!("rating {r} outside 1..=5 half-point scale"));
        }
    }
    if kind == DatasetKind::MultiReference {
        let human: Vec<_> = item
            .response_sets
            .iter()
            .filter(|s| s.source == ResponseSource::Human)
            .collect();
        if human.len() != 1 {
            return Err(format!(
                "conversation `{}` has {} human response sets, expected 1",
                item.conversation.id,
                human.len()
            ));
        }
        if human[0].responses.len() != MULTI_REFERENCE_COUNT {
            return Err(format!(
                "conversation `{}` has {} references, expected {MULTI_REFERENCE_COUNT}",
                item.conversation.id,
                human[0].responses.len()
            ));
        }
    }
    Ok(())
}

/// References per conversation in the multi-reference corpus.
pub const MULTI_REFERENCE_COUNT: usize = 5;

pub fn load_jsonl(path: &Path, kind: DatasetKind, opts: LoadOptions) -> Result<(DatasetBundle, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_jsonl(BufReader::new(file), &name, kind, opts)
}

pub fn read_jsonl<R: BufRead>(
    reader: R,
    name: &str,
    kind: DatasetKind,
    opts: LoadOptions,
) -> Result<(DatasetBundle, LoadReport)> {
    let mut items = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{name}:{}", line_no + 1), e))?;
        let item = record.into_item();
        let check = if seen.contains(&item.conversation.id) {
            Err(format!("duplicate conversation id `{}`", item.conversation.id))
        } else {
            validate_item(&item, kind)
        };
        match check {
            Ok(()) => {
                seen.insert(item.conversation.id.clone());
                items.push(item);
            }
            Err(message) if opts.strict => return Err(Error::RowValidation { row: line_no, message }),
            Err(message) => {
                log::warn!("skipping line {}: {message}", line_no + 1);
                report.skipped.push((line_no, message));
            }
        }
    }
    report.items = items.len();
    Ok((
        DatasetBundle {
            name: name.to_string(),
            kind,
            items,
        },
        report,
    ))
}

pub fn load_multi_reference(path: &Path, opts: LoadOptions) -> Result<(DatasetBundle, LoadReport)> {
    load_jsonl(path, DatasetKind::MultiReference, opts)
}

pub fn write_normalized<W: Write>(bundle: &DatasetBundle, mut out: W) -> Result<()> {
    for item in &bundle.items {
        let line =
            serde_json::to_string(&ItemRecord::from_item(item)).map_err(|e| Error::json(&item.conversation.id, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&bundle.name, e))?;
    }
    Ok(())
}

pub fn write_normalized_file(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_normalized(bundle, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

// --- context preparation ---------------------------------------------------

/// Split index for a conversation of `turns` turns: `1 + h % (turns - 1)`
/// where `h` is [`seed::hash_str`] of `[namespace, conversation_id]`.
pub fn split_index(seed_namespace: &str, conversation_id: &str, turns: usize) -> Option<usize> {
    if turns < 2 {
        return None;
    }
    let h = seed::hash_str(&[seed_namespace, conversation_id]);
    Some(1 + (h % (turns as u64 - 1)) as usize)
}

/// Splits at a seeded turn; the context keeps turns `[0, k)`.
pub fn split_at_random_turn(conv: &Conversation, seed_namespace: &str) -> Result<(Conversation, Vec<Turn>)> {
    let k = split_index(seed_namespace, &conv.id, conv.turns.len())
        .ok_or_else(|| Error::CannotSplit { id: conv.id.clone() })?;
    let context = Conversation {
        id: conv.id.clone(),
        turns: conv.turns[..k].to_vec(),
    };
    Ok((context, conv.turns[k..].to_vec()))
}

/// Keeps the last `max_tokens` whitespace tokens. Fully surviving turns are
/// untouched; a partially surviving turn keeps its trailing tokens joined by
/// single spaces; turns with no surviving token are dropped.
pub fn truncate_context(context: &Conversation, max_tokens: usize) -> Conversation {
    let max_tokens = max_tokens.max(1);
    if context.token_count() <= max_tokens {
        return context.clone();
    }
    let mut budget = max_tokens;
    let mut kept = Vec::new();
    for turn in context.turns.iter().rev() {
        if budget == 0 {
            break;
        }
        let tokens: Vec<&str> = turn.text.split_whitespace().collect();
        if tokens.len() <= budget {
            budget -= tokens.len();
            kept.push(turn.clone());
        } else {
            let tail = tokens[tokens.len() - budget..].join(" ");
            budget = 0;
            kept.push(Turn::new(turn.speaker.clone(), tail));
        }
    }
    kept.reverse();
    kept.retain(|t| !t.text.trim().is_empty());
    Conversation {
        id: context.id.clone(),
        turns: kept,
    }
}
