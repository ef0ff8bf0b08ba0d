//! Declarative run spec: an experiment config plus seeds, sweep axes and
//! gates, read from TOML and patched with `--set` overrides.

use byzwalk::config::ExperimentConfig;
use byzwalk::experiments::Experiment;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use toml::{Table, Value};

/// Keys that live at the top level of a spec. Any other override path is
/// taken relative to `config`.
const SPEC_KEYS: [&str; 7] = ["experiment", "seeds", "seed_count", "max_runs", "sweep", "gates", "config"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Needed by `sweep`; the run-* subcommands imply it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Consecutive seeds from `config.seed` when `seeds` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_count: Option<usize>,
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
    /// Dotted config path -> values; runs cover the cross product.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<Value>>,
    /// Metric name -> bounds every run must satisfy.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gates: BTreeMap<String, Gate>,
    #[serde(default)]
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Gate {
    pub fn admits(&self, x: f64) -> bool {
        self.min.map_or(true, |m| x >= m) && self.max.map_or(true, |m| x <= m)
    }
}

fn default_max_runs() -> usize {
    1000
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read spec: {0}")]
    Read(#[from] std::io::Error),
    #[error("bad spec: {0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("sweep has {runs} runs, over the max_runs cap of {cap}")]
    TooManyRuns { runs: usize, cap: usize },
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentSpec {
    /// Parses TOML text and applies `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentSpec, SpecError> {
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| SpecError::Parse(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| SpecError::Override(o.clone()))?;
            set_path(&mut root, &qualify(key.trim()), parse_value(raw.trim()))?;
        }
        let spec: ExperimentSpec = Value::Table(root).try_into().map_err(|e: toml::de::Error| SpecError::Parse(e.to_string()))?;
        spec.config.validate().map_err(|e| SpecError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match (&self.seeds, self.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(k)) => byzwalk::sweep::seed_range(self.config.seed, k),
            (None, None) => vec![self.config.seed],
        }
    }

    /// Every (config, seed) pair in the sweep, configs in axis order.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>, SpecError> {
        let seeds = self.seed_list();
        let combos: usize = self.sweep.values().map(Vec::len).product();
        let runs = combos * seeds.len();
        if runs > self.max_runs {
            return Err(SpecError::TooManyRuns { runs, cap: self.max_runs });
        }
        let base = Value::try_from(&self.config).map_err(|e| SpecError::Parse(e.to_string()))?;
        let mut points: Vec<Value> = vec![base];
        for (key, values) in &self.sweep {
            let path = qualify(key);
            let path = path.strip_prefix("config.").ok_or_else(|| SpecError::Invalid(format!("sweep axis `{key}` is not a config field")))?;
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    let Value::Table(t) = &mut q else { unreachable!("config is a table") };
                    set_path(t, path, v.clone())?;
                    next.push(q);
                }
            }
            points = next;
        }
        let mut out = Vec::with_capacity(runs);
        for p in points {
            let cfg: ExperimentConfig = p.try_into().map_err(|e: toml::de::Error| SpecError::Parse(e.to_string()))?;
            cfg.validate().map_err(|e| SpecError::Invalid(e.to_string()))?;
            for &seed in &seeds {
                out.push(ExperimentConfig { seed, ..cfg.clone() });
            }
        }
        Ok(out)
    }
}

fn qualify(key: &str) -> String {
    let head = key.split('.').next().unwrap_or_default();
    if SPEC_KEYS.contains(&head) {
        key.to_string()
    } else {
        format!("config.{key}")
    }
}

/// TOML literal when it parses as one, bare string otherwise.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}").parse::<Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, path: &str, value: Value) -> Result<(), SpecError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| SpecError::Override(path.to_string()))?;
    let mut t = root;
    for p in parts {
        let slot = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match slot {
            Value::Table(inner) => inner,
            _ => return Err(SpecError::Invalid(format!("`{p}` in `{path}` is not a table"))),
        };
    }
    t.insert(last.to_string(), value);
    Ok(())
}
