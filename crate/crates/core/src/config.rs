//! Experiment configuration files (TOML).
//!
//! A file may start with `include = ["preset.toml", ...]`; included files are
//! read first (paths relative to the including file) and deep-merged, later
//! tables overriding earlier ones key by key. The top-level `seed` is
//! required; every stage seed is derived from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::calibrate::TuneConfig;
use crate::error::{Error, Result};
use crate::nmpc::NmpcConfig;
use crate::sim::EnvironmentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n_eval: usize,
    /// Band percentiles, strictly increasing inside (0, 100).
    pub percentiles: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_eval: 400,
            percentiles: vec![1.0, 50.0, 99.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub nmpc: NmpcConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Seeds of the pipeline stages, all derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub train: u64,
    pub tune: u64,
    /// Evaluation episode `i` uses `eval + i`.
    pub eval: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolving `include` lists.
    pub fn load(path: &Path) -> Result<Self> {
        let table = load_table(path, &mut Vec::new())?;
        let has_include = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?.contains("include");
        let cfg: Self = if has_include {
            table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            // Parse from text so errors carry line and column.
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.n_eval == 0 {
            return Err(Error::Config("eval.n_eval must be at least 1".into()));
        }
        let p = &self.eval.percentiles;
        if p.is_empty() || p.iter().any(|v| !(*v > 0.0 && *v < 100.0)) || p.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "eval.percentiles must be strictly increasing inside (0, 100), got {p:?}"
            )));
        }
        self.agent.validate()?;
        self.tune.validate()?;
        self.nmpc.validate()?;
        self.environment.build().map(|_| ()).map_err(|e| Error::Config(format!("environment: {e}")))
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            train: self.seed,
            tune: self.seed.wrapping_add(1),
            eval: self.seed.wrapping_add(1_000_000),
        }
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(Error::Config(format!("{}: include entries must be strings, got {other}", path.display()))),
            })
            .collect::<Result<_>>()?,
        Some(other) => {
            return Err(Error::Config(format!("{}: include must be an array of paths, got {other}", path.display())));
        }
    };
    stack.push(canonical);
    let base = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        merge(&mut merged, load_table(&base.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

/// Deep merge: tables merge recursively, anything else is replaced.
fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
