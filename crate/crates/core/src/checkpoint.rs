//! Versioned text checkpoints of a run's configuration and parameters.
//!
//! Layout, one item per line:
//!
//! ```text
//! seqcomm-checkpoint 1
//! config <TrainConfig as single-line JSON>
//! params <count>
//! tensor <name> <rank> <dim>...
//! <values, space separated, shortest round-trip exponent form>
//! ...
//! end
//! ```
//!
//! A `tensor` line and its value line repeat `count` times in storage
//! order. Values reload bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::trainer::{TrainConfig, Trainer};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "seqcomm-checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, config: &TrainConfig, params: &ParamStore) -> Result<()> {
    writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
    writeln!(w, "config {}", serde_json::to_string(config)?)?;
    writeln!(w, "params {}", params.len())?;
    for id in params.ids() {
        let name = params.name(id);
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(bad(format!("parameter name `{name}` cannot be stored")));
        }
        let t = params.get(id);
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(w, "tensor {name} {} {}", t.rank(), dims.join(" "))?;
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", vals.join(" "))?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, params: &ParamStore) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), config, params)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut lines = BufReader::new(r).lines();
    let mut next = |what: &str| -> Result<String> {
        lines.next().transpose()?.ok_or_else(|| bad(format!("file ends before {what}")))
    };
    let header = next("the header")?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad("not a checkpoint file"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let line = next("the config")?;
    let json = line.strip_prefix("config ").ok_or_else(|| bad("expected a config line"))?;
    let config: TrainConfig = serde_json::from_str(json).map_err(|e| bad(format!("config: {e}")))?;
    let line = next("the parameter count")?;
    let count: usize = line
        .strip_prefix("params ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad("expected a params line"))?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let line = next("a tensor header")?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(format!("expected a tensor header, got `{line}`")));
        }
        let name = parts.next().ok_or_else(|| bad("tensor without a name"))?.to_string();
        let nums = parts
            .map(|p| p.parse::<usize>().map_err(|_| bad(format!("bad dimension `{p}` for `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        let (&rank, shape) = nums.split_first().ok_or_else(|| bad(format!("`{name}` has no rank")))?;
        if shape.len() != rank {
            return Err(bad(format!("`{name}` declares rank {rank} with {} dimensions", shape.len())));
        }
        if params.find(&name).is_some() {
            return Err(bad(format!("duplicate tensor `{name}`")));
        }
        let line = next("tensor values")?;
        let data = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape.to_vec(), data).map_err(|e| bad(format!("`{name}`: {e}")))?;
        params.add(name, t);
    }
    if next("the end marker")?.trim() != "end" {
        return Err(bad("missing end marker"));
    }
    Ok(Checkpoint { config, params })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_checkpoint(f)
}

impl Checkpoint {
    /// A fresh trainer for the stored config carrying the stored parameters.
    pub fn into_trainer(self) -> Result<Trainer> {
        let mut t = Trainer::new(self.config)?;
        t.load_params(self.params)?;
        Ok(t)
    }
}
