pub mod evaluate;
pub mod relevancy;
pub mod report;
pub mod score;
pub mod threshold;

use std::path::Path;

use anyhow::{Context as _, Result};
use serde::Serialize;

use crate::config::Header;

/// What a subcommand produced: files for `--out` and the stdout document.
#[derive(Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub stdout: Vec<u8>,
}

impl Artifacts {
    pub fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

/// JSON lines with a `{"header": ...}` first line.
pub fn jsonl<T: Serialize>(header: &Header, rows: &[T]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&serde_json::json!({ "header": header }))?;
    out.push(b'\n');
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn pretty<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(doc)?;
    out.push(b'\n');
    Ok(out)
}

/// CSV with the header recorded on a leading `#` comment line.
pub fn csv_with_header(header: &Header, body: &[u8]) -> Result<Vec<u8>> {
    let mut out = format!("# {}\n", serde_json::to_string(header)?).into_bytes();
    out.extend_from_slice(body);
    Ok(out)
}
