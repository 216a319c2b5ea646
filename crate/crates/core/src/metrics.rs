//! JSON-lines metrics: one record per evaluation point, append-only.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::protocol::CommLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub env: String,
    pub mode: String,
    /// Zero-based index of the evaluation point.
    pub eval_index: u64,
    pub updates: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Mean greedy return over the evaluation episodes.
    pub eval_return: f64,
    /// Mean return of the training episodes since the previous record.
    pub train_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub world_loss: Option<f64>,
    /// Messages since the previous record.
    pub comm: CommLog,
    /// Decision orders used since the previous record.
    pub orders: BTreeMap<String, u64>,
    /// Full configuration; present in the first record of a run only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<serde_json::Value>,
}

/// Appends records to a JSON-lines file, one per line.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        ensure!(!line.trim().is_empty(), "empty metrics line {}", i + 1);
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
