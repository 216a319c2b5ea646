//! Experiment configuration files.
//!
//! A config is one TOML document. Every key is optional; missing keys take
//! the desk-scale defaults for the chosen environment.
//!
//! ```toml
//! mode = "seqcomm"        # seqcomm | fixed:<ids> | random | simultaneous | nocomm
//! seeds = [0, 1, 2, 3, 4]
//! out = "runs/navigation"
//!
//! [env]
//! kind = "particle"       # or "matrix-game"
//! n_agents = 3
//! episode_length = 20
//!
//! [ppo]
//! total_env_steps = 30000
//! envs = 16
//!
//! [negotiation]
//! horizon = 10            # H
//! samples = 2             # F
//! gamma = 0.95
//!
//! [eval]
//! every = 5
//! episodes = 8
//! ```
//!
//! Unknown keys are rejected. `SEQCOMM_SEED` replaces the seed list with a
//! single seed and `SEQCOMM_OUT` replaces the output directory; nothing
//! else can be set from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::protocol::NegotiationConfig;
use crate::trainer::{EvalConfig, OrderingMode, PpoConfig, TrainConfig};

pub const SEED_VAR: &str = "SEQCOMM_SEED";
pub const OUT_VAR: &str = "SEQCOMM_OUT";

const TOP_KEYS: [&str; 7] = ["mode", "seeds", "out", "env", "ppo", "negotiation", "eval"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: OrderingMode,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub env: EnvSpec,
    pub ppo: PpoConfig,
    pub negotiation: NegotiationConfig,
    pub eval: EvalConfig,
}

fn config_err(key: impl Into<String>, reason: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.to_string(),
    }
}

fn section(name: &str, table: &Table) -> Result<Option<Table>> {
    match table.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t.clone())),
        Some(_) => Err(config_err(name, "expected a table")),
    }
}

/// Overlays `user` on `defaults`, rejecting keys `defaults` lacks.
fn overlay(prefix: &str, defaults: &mut Table, user: Table) -> Result<()> {
    for (k, v) in user {
        let key = format!("{prefix}.{k}");
        match defaults.get_mut(&k) {
            None => return Err(config_err(key, "unknown key")),
            Some(slot) => *slot = v,
        }
    }
    Ok(())
}

fn typed<T: serde::de::DeserializeOwned>(key: &str, table: Table) -> Result<T> {
    T::deserialize(Value::Table(table)).map_err(|e| config_err(key, e.message()))
}

fn as_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config sections serialize to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("config sections are structs"),
    }
}

/// Attributes a validation message to `section.<field>` when it starts
/// with one of the section's field names.
fn attribute(section: &str, fields: &Table, e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => {
            let first = msg.split(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("");
            let key = if fields.contains_key(first) {
                format!("{section}.{first}")
            } else {
                section.to_string()
            };
            config_err(key, msg)
        }
        other => other,
    }
}

impl ExperimentConfig {
    /// Defaults for `env` and `mode` with seed 0, writing under `runs`.
    pub fn defaults(env: EnvSpec, mode: OrderingMode) -> Self {
        let t = TrainConfig::defaults_for(env, mode, 0);
        Self {
            mode: t.mode,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            env: t.env,
            ppo: t.ppo,
            negotiation: t.negotiation,
            eval: t.eval,
        }
    }

    /// Parses and validates a config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| config_err("<document>", e.message()))?;
        for k in table.keys() {
            if !TOP_KEYS.contains(&k.as_str()) {
                return Err(config_err(k.clone(), "unknown key"));
            }
        }
        let env = match section("env", &table)? {
            None => EnvSpec::matrix_game(),
            Some(t) => {
                if !t.contains_key("kind") {
                    return Err(config_err("env.kind", "missing (expected \"matrix-game\" or \"particle\")"));
                }
                typed::<EnvSpec>("env", t)?
            }
        };
        let mode = match table.get("mode") {
            None => OrderingMode::SeqComm,
            Some(Value::String(s)) => s.parse().map_err(|e: Error| config_err("mode", e))?,
            Some(_) => return Err(config_err("mode", "expected a string")),
        };
        let mut cfg = Self::defaults(env, mode);
        if let Some(v) = table.get("seeds") {
            cfg.seeds = Vec::<u64>::deserialize(v.clone()).map_err(|e| config_err("seeds", e.message()))?;
        }
        if let Some(v) = table.get("out") {
            match v {
                Value::String(s) => cfg.out = PathBuf::from(s),
                _ => return Err(config_err("out", "expected a string")),
            }
        }
        if let Some(user) = section("ppo", &table)? {
            let mut t = as_table(&cfg.ppo);
            overlay("ppo", &mut t, user)?;
            cfg.ppo = typed("ppo", t)?;
        }
        if let Some(user) = section("negotiation", &table)? {
            let mut t = as_table(&cfg.negotiation);
            overlay("negotiation", &mut t, user)?;
            cfg.negotiation = typed("negotiation", t)?;
        }
        if let Some(user) = section("eval", &table)? {
            let mut t = as_table(&cfg.eval);
            overlay("eval", &mut t, user)?;
            cfg.eval = typed("eval", t)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    /// Applies `SEQCOMM_SEED` and `SEQCOMM_OUT` as read by `lookup`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(s) = lookup(SEED_VAR) {
            let seed = s.trim().parse::<u64>().map_err(|_| config_err(SEED_VAR, format!("`{s}` is not a seed")))?;
            self.seeds = vec![seed];
        }
        if let Some(o) = lookup(OUT_VAR) {
            self.out = PathBuf::from(o);
        }
        self.validate()
    }

    /// Applies overrides from the process environment.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(config_err("seeds", "seeds repeat"));
        }
        if self.out.as_os_str().is_empty() {
            return Err(config_err("out", "empty output directory"));
        }
        self.env.validate().map_err(|e| attribute("env", &as_table(&self.env), e))?;
        self.mode.validate_for(self.env.n_agents()).map_err(|e| config_err("mode", e))?;
        self.ppo.validate().map_err(|e| attribute("ppo", &as_table(&self.ppo), e))?;
        self.negotiation
            .validate()
            .map_err(|e| attribute("negotiation", &as_table(&self.negotiation), e))?;
        if self.eval.every < 1 {
            return Err(config_err("eval.every", "must be positive"));
        }
        if self.eval.episodes < 1 {
            return Err(config_err("eval.episodes", "must be positive"));
        }
        Ok(())
    }

    /// The run for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            run_id: format!("{}-{}-{}", self.env.name(), self.mode, seed),
            seed,
            env: self.env.clone(),
            mode: self.mode.clone(),
            ppo: self.ppo.clone(),
            negotiation: self.negotiation.clone(),
            eval: self.eval.clone(),
        }
    }
}
