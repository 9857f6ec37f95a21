//! Output directory of one run.
//!
//! Every file goes through a [`Bundle`], which records its SHA-256. Tables
//! are CSV (with a leading `# config_hash=...` comment line) or JSON
//! (`{"config_hash": ..., "rows": [...]}`), chosen by `--format`. The
//! closing `manifest.json` lists each file with its digest and a bundle
//! hash over all of them, so two runs of the same config can be compared by
//! one string.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct Bundle {
    dir: PathBuf,
    config_hash: String,
    format: Format,
    files: Vec<FileEntry>,
}

impl Bundle {
    pub fn create(dir: &Path, config_hash: &str, format: Format) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            format,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let bytes = csv_bytes(&self.config_hash, rows)?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `rows` as `<stem>.csv` or `<stem>.json` depending on the
    /// bundle format and returns the file name.
    pub fn write_table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<String> {
        match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                self.write_csv(&name, rows)?;
                Ok(name)
            }
            Format::Json => {
                let name = format!("{stem}.json");
                let value = json!({ "config_hash": self.config_hash, "rows": rows });
                self.write_json(&name, &value)?;
                Ok(name)
            }
        }
    }

    /// Digest over the names and digests of every file written so far.
    pub fn bundle_hash(&self) -> String {
        let mut entries: Vec<&FileEntry> = self.files.iter().collect();
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        let mut h = Sha256::new();
        for e in entries {
            h.update(e.name.as_bytes());
            h.update([0]);
            h.update(e.sha256.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Writes `manifest.json` and returns the bundle hash.
    pub fn finish(mut self, scenario: &str, seeds: &[u64], status: &str) -> Result<String> {
        let hash = self.bundle_hash();
        let manifest = json!({
            "scenario": scenario,
            "config_hash": self.config_hash,
            "status": status,
            "seeds": seeds,
            "files": self.files,
            "bundle_hash": hash,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(hash)
    }
}

/// CSV text of `rows` under a `# config_hash=...` comment line.
pub fn csv_bytes<T: Serialize>(config_hash: &str, rows: &[T]) -> Result<Vec<u8>> {
    let mut out = format!("# config_hash={config_hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| HarnessError::io("csv buffer", e))?;
    }
    Ok(out)
}

/// Reader for CSV written by [`csv_bytes`].
pub fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes)
}
