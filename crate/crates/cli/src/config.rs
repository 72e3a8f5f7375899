//! Global flags, TOML config merging and backend construction.
//!
//! A config file holds global keys at the top level and one table per
//! subcommand (`[score]`, `[evaluate_metric]`, `[threshold]`,
//! `[relevancy]`, `[report]`) whose keys are the long flag names with `-`
//! replaced by `_`. A flag given on the command line always wins.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use nlidiv_core::corpus::{
    load_diversity_eval_csv, load_jsonl, DatasetBundle, DatasetKind, LoadOptions, LoadReport, SchemaMap,
};
use nlidiv_core::nli::{
    BackendDescriptor, CachedNli, Embedder, MockEmbedder, MockNli, MockScorer, NliBackend, NliCache, PairScorer,
    RemoteBackend, RemoteClient, DEFAULT_NLI_MODEL,
};
use nlidiv_core::par::Execution;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SECTIONS: [&str; 5] = ["score", "evaluate_metric", "threshold", "relevancy", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ConTest,
    DecTest,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Globals {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Persistent NLI prediction cache (JSON lines)
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Base seed for every stochastic step [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 forces the sequential path
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Model backend [default: mock]
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Sidecar base URL for the remote backend
    #[arg(long, global = true, env = "NLIDIV_ENDPOINT")]
    pub endpoint: Option<String>,
    /// NLI model id sent to the sidecar and used as the cache key
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Lookup table for the mock NLI backend (JSON lines)
    #[arg(long, global = true)]
    pub mock_table: Option<PathBuf>,
    /// Dimension of the mock embedder [default: 64]
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Directory for output files
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Skip malformed rows instead of failing
    #[arg(long, global = true, conflicts_with = "strict")]
    pub permissive: bool,
    /// Fail on the first malformed row (default)
    #[arg(long, global = true)]
    #[serde(skip)]
    pub strict: bool,
    /// Column mapping for CSV datasets (TOML)
    #[arg(long, global = true)]
    pub schema_map: Option<PathBuf>,
    /// Built-in CSV column mapping [default: con-test]
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

fn is_set(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => false,
        Value::Array(a) => !a.is_empty(),
        _ => true,
    }
}

/// Overlays every flag that was given onto the config-file values.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<Value>) -> Result<T> {
    let mut merged = file.unwrap_or_else(|| Value::Object(Default::default()));
    let Value::Object(base) = &mut merged else {
        bail!("config section must be a table");
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if is_set(&v) {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).context("invalid config value")
}

pub struct ConfigFile {
    pub globals: Option<Value>,
    sections: serde_json::Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile {
                globals: None,
                sections: Default::default(),
            });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(mut all) = serde_json::to_value(table)? else {
            unreachable!("a TOML table serializes to an object")
        };
        let mut sections = serde_json::Map::new();
        for name in SECTIONS {
            if let Some(v) = all.remove(name) {
                sections.insert(name.to_string(), v);
            }
        }
        Ok(ConfigFile {
            globals: Some(Value::Object(all)),
            sections,
        })
    }

    pub fn section(&self, name: &str) -> Option<Value> {
        self.sections.get(name).cloned()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub backend: BackendDescriptor,
}

/// Resolved settings shared by every subcommand.
pub struct Context {
    pub globals: Globals,
    pub exec: Execution,
    nli: std::sync::OnceLock<Arc<dyn NliBackend>>,
}

impl Context {
    pub fn new(mut globals: Globals) -> Result<Self> {
        if globals.strict {
            globals.permissive = false;
        }
        if globals.jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        let exec = if globals.jobs == Some(1) || !Execution::is_parallel_available() {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let ctx = Context {
            globals,
            exec,
            nli: Default::default(),
        };
        ctx.descriptor().validate()?;
        Ok(ctx)
    }

    pub fn seed(&self) -> u64 {
        self.globals.seed.unwrap_or(0)
    }

    pub fn backend(&self) -> Backend {
        self.globals.backend.unwrap_or(Backend::Mock)
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            strict: !self.globals.permissive,
        }
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        match self.backend() {
            Backend::Mock => BackendDescriptor::mock(self.globals.model.clone().unwrap_or_else(|| "mock".into())),
            Backend::Remote => BackendDescriptor {
                endpoint: self.globals.endpoint.clone(),
                ..BackendDescriptor::remote(
                    self.globals.model.clone().unwrap_or_else(|| DEFAULT_NLI_MODEL.into()),
                    "",
                )
            },
        }
    }

    /// Hash of the resolved configuration, output location excluded.
    pub fn header<A: Serialize>(&self, command: &'static str, args: &A) -> Result<Header> {
        let mut globals = self.globals.clone();
        globals.out = None;
        let canonical = serde_json::to_string(&(&globals, args))?;
        let digest = Sha256::digest(canonical.as_bytes());
        let config_hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Header {
            tool: "nlidiv",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash,
            seed: self.seed(),
            backend: self.descriptor(),
        })
    }

    pub fn client(&self) -> Result<RemoteClient> {
        let endpoint = self
            .globals
            .endpoint
            .as_deref()
            .context("the remote backend needs --endpoint or NLIDIV_ENDPOINT")?;
        Ok(RemoteClient::new(endpoint)?)
    }

    fn remote(&self) -> Result<RemoteBackend> {
        Ok(RemoteBackend::new(self.client()?, self.descriptor().model_id))
    }

    pub fn nli(&self) -> Result<Arc<dyn NliBackend>> {
        if let Some(b) = self.nli.get() {
            return Ok(b.clone());
        }
        let model = self.descriptor().model_id;
        let base: Arc<dyn NliBackend> = match self.backend() {
            Backend::Mock => match &self.globals.mock_table {
                Some(path) => Arc::new(MockNli::from_jsonl_file(model, path)?),
                None => Arc::new(MockNli::new(model)),
            },
            Backend::Remote => Arc::new(self.remote()?),
        };
        let backend: Arc<dyn NliBackend> = match &self.globals.cache {
            Some(path) => Arc::new(CachedNli::new(base, Arc::new(NliCache::open(path)?))),
            None => base,
        };
        Ok(self.nli.get_or_init(|| backend).clone())
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self.backend() {
            Backend::Mock => Arc::new(MockEmbedder::new(self.globals.embed_dim.unwrap_or(64))),
            Backend::Remote => Arc::new(self.remote()?),
        })
    }

    pub fn scorer(&self) -> Result<Arc<dyn PairScorer>> {
        Ok(match self.backend() {
            Backend::Mock => Arc::new(MockScorer::new()),
            Backend::Remote => Arc::new(self.remote()?),
        })
    }

    fn schema(&self) -> Result<SchemaMap> {
        Ok(match (&self.globals.schema_map, self.globals.preset) {
            (Some(path), _) => SchemaMap::from_toml_file(path)?,
            (None, Some(Preset::DecTest)) => SchemaMap::default_dec_test(),
            (None, _) => SchemaMap::default_con_test(),
        })
    }

    /// Loads a `.csv` through the schema map, anything else as normalized
    /// JSON lines of `kind`.
    pub fn load_dataset(&self, path: &Path, kind: DatasetKind) -> Result<DatasetBundle> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let (bundle, report): (DatasetBundle, LoadReport) = if is_csv {
            load_diversity_eval_csv(path, &self.schema()?, self.load_options())?
        } else {
            load_jsonl(path, kind, self.load_options())?
        };
        for (row, why) in &report.skipped {
            log::warn!("{}: skipped record {row}: {why}", path.display());
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_overlay_file_values() {
        let flags = Globals {
            seed: Some(7),
            ..Default::default()
        };
        let file = json!({"seed": 5, "embed_dim": 16, "permissive": true});
        let merged: Globals = merge(&flags, Some(file)).unwrap();
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.embed_dim, Some(16));
        // an unset bool flag does not clear a true file value
        assert!(merged.permissive);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(merge(&Globals::default(), Some(json!({"sede": 1}))).is_err());
        assert!(merge(&Globals::default(), Some(json!([1]))).is_err());
    }

    #[test]
    fn config_hash_ignores_output_dir() {
        let a = Context::new(Globals::default()).unwrap();
        let b = Context::new(Globals {
            out: Some("elsewhere".into()),
            ..Default::default()
        })
        .unwrap();
        let c = Context::new(Globals {
            seed: Some(1),
            ..Default::default()
        })
        .unwrap();
        let h = |ctx: &Context| ctx.header("score", &()).unwrap().config_hash;
        assert_eq!(h(&a), h(&b));
        assert_ne!(h(&a), h(&c));
        assert_eq!(h(&a).len(), 16);
    }

    #[test]
    fn strict_wins_and_zero_jobs_fails() {
        let ctx = Context::new(Globals {
            permissive: true,
            strict: true,
            ..Default::default()
        })
        .unwrap();
        assert!(ctx.load_options().strict);
        assert!(Context::new(Globals {
            jobs: Some(0),
            ..Default::default()
        })
        .is_err());
        let seq = Context::new(Globals {
            jobs: Some(1),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(seq.exec, Execution::Sequential);
    }
}
