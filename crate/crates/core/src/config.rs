//! Experiment configuration and the parameters derived from it.

use crate::error::{Result, SimError};
use crate::graph::NodeSet;
use crate::rng::{stream, Purpose};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    #[default]
    V2,
}

/// Where the walk length constant comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MixingSource {
    /// tau = ceil(b * ceil(log2 n)).
    #[default]
    Formula,
    /// Exact mixing time of the honest core.
    Oracle,
    Manual(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptLevel {
    /// Round statistics, blacklists, decisions and audits.
    #[default]
    Summary,
    /// Adds every message traversal.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptFormat {
    #[default]
    Jsonl,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Inputs {
    /// Independent fair bits.
    #[default]
    Random,
    /// Lower half of the ids 0, upper half 1.
    Split,
    AllZero,
    AllOne,
}

/// Which received tokens the broadcast decoder counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeFilter {
    #[default]
    All,
    /// Drop good tokens the oracle flags as congested.
    LowCongestion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub name: String,
    pub params: Map<String, Value>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig { name: "silent".into(), params: Map::new() }
    }
}

impl AdversaryConfig {
    pub fn named(name: &str) -> Self {
        AdversaryConfig { name: name.into(), params: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn f64(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).and_then(Value::as_f64).unwrap_or(default)
    }

    pub fn bool(&self, key: &str, default: bool) -> bool {
        self.params.get(key).and_then(Value::as_bool).unwrap_or(default)
    }

    pub fn str(&self, key: &str, default: &str) -> String {
        self.params.get(key).and_then(Value::as_str).unwrap_or(default).to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    /// Number of byzantine nodes, drawn uniformly unless `byzantine_nodes` is set.
    pub byzantine: usize,
    pub byzantine_nodes: Option<Vec<u32>>,
    pub seed: u64,
    /// cap = ceil(a * ceil(log2 n)^3).
    pub a: f64,
    /// tau = ceil(b * ceil(log2 n)) with the formula mixing source.
    pub b: f64,
    /// Oracle mixing threshold is 1/n^whp_exponent.
    pub whp_exponent: f64,
    /// v1 budget per node is gamma * n * ceil(log2 n).
    pub gamma: f64,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: f64,
    /// congestion bound = congestion_factor * lambda / delta.
    pub congestion_factor: f64,
    /// Last v2 stage is the first i with lambda 2^i >= factor * n * ceil(log2 n).
    pub v2_target_factor: f64,
    pub tally_threshold: f64,
    /// Agreement phases; default 4n.
    pub num_phases: Option<usize>,
    pub fail_frac: f64,
    /// Pruning threshold for the honest core.
    pub theta: f64,
    pub variant: Variant,
    pub mixing: MixingSource,
    pub lazy: bool,
    pub adversary: AdversaryConfig,
    pub coins_upfront: bool,
    pub early_stop: bool,
    /// Abort with a budget error after this many rounds.
    pub max_rounds: Option<u64>,
    pub transcript: TranscriptLevel,
    pub transcript_format: TranscriptFormat,
    pub inputs: Inputs,
    pub decode: DecodeFilter,
    /// Tokens per node for a standalone walk; default is the v1 budget.
    pub walk_tokens: Option<usize>,
    /// Flips for a standalone coin run; default n.
    pub flips: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 64,
            d: 6,
            byzantine: 0,
            byzantine_nodes: None,
            seed: 1,
            a: 1.0,
            b: 1.0,
            whp_exponent: 3.0,
            gamma: 1.0,
            lambda: None,
            delta: None,
            epsilon: 0.0,
            congestion_factor: 8.0,
            v2_target_factor: 1.0,
            tally_threshold: 0.9,
            num_phases: None,
            fail_frac: 0.05,
            theta: 0.5,
            variant: Variant::V2,
            mixing: MixingSource::Formula,
            lazy: false,
            adversary: AdversaryConfig::default(),
            coins_upfront: false,
            early_stop: false,
            max_rounds: None,
            transcript: TranscriptLevel::Summary,
            transcript_format: TranscriptFormat::Jsonl,
            inputs: Inputs::Random,
            decode: DecodeFilter::All,
            walk_tokens: None,
            flips: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if self.d < 3 || self.d >= self.n || (self.n * self.d) % 2 == 1 {
            return bad(format!("need 3 <= d < n with n*d even, got n={} d={}", self.n, self.d));
        }
        if self.d > u8::MAX as usize - 1 {
            return bad(format!("degree {} too large", self.d));
        }
        let t = self.byzantine_nodes.as_ref().map_or(self.byzantine, Vec::len);
        if t * 2 >= self.n {
            return bad(format!("byzantine count {t} must be below n/2"));
        }
        if let Some(nodes) = &self.byzantine_nodes {
            if nodes.iter().any(|&v| v as usize >= self.n) {
                return bad("byzantine node id out of range".into());
            }
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("gamma", self.gamma), ("whp_exponent", self.whp_exponent)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.5..1.0).contains(&self.tally_threshold) {
            return bad(format!("tally_threshold must lie in [0.5, 1), got {}", self.tally_threshold));
        }
        if !(0.0..0.5).contains(&self.fail_frac) {
            return bad(format!("fail_frac must lie in [0, 0.5), got {}", self.fail_frac));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1), got {}", self.theta));
        }
        if let Some(l) = self.lambda {
            if l < 1.0 {
                return bad(format!("lambda must be at least 1, got {l}"));
            }
        }
        if let Some(dl) = self.delta {
            if !(dl > 0.0 && dl <= 1.0) {
                return bad(format!("delta must lie in (0, 1], got {dl}"));
            }
        }
        if self.walk_tokens == Some(0) || self.flips == Some(0) {
            return bad("walk_tokens and flips must be positive".into());
        }
        if self.num_phases == Some(0) {
            return bad("num_phases must be positive".into());
        }
        Ok(())
    }

    /// The static byzantine set, fixed before round 0.
    pub fn byzantine_set(&self) -> NodeSet {
        match &self.byzantine_nodes {
            Some(nodes) => NodeSet::new(self.n, nodes.iter().copied()),
            None => {
                let mut rng = stream(self.seed, Purpose::Byzantine, 0, 0);
                let picked = sample(&mut rng, self.n, self.byzantine);
                NodeSet::new(self.n, picked.into_iter().map(|v| v as u32))
            }
        }
    }

    pub fn log_n(&self) -> usize {
        log2_ceil(self.n)
    }

    pub fn cap(&self) -> usize {
        ((self.a * (self.log_n() as f64).powi(3)).ceil() as usize).max(1)
    }

    pub fn formula_tau(&self) -> usize {
        ((self.b * self.log_n() as f64).ceil() as usize).max(1)
    }

    pub fn v1_total(&self) -> usize {
        ((self.gamma * (self.n * self.log_n()) as f64).ceil() as usize).max(1)
    }

    /// Per-node sample budget of one agreement phase.
    pub fn sample_total(&self) -> usize {
        self.cap()
    }

    pub fn lambda(&self) -> usize {
        let l = self.lambda.unwrap_or_else(|| (self.log_n() as f64).powf(3.0 + 2.0 * self.epsilon));
        (l.ceil() as usize).max(1)
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or_else(|| 1.0 / (self.log_n() as f64).powf(1.0 + self.epsilon)).min(1.0)
    }

    pub fn congestion_bound(&self) -> usize {
        (self.congestion_factor * self.lambda() as f64 / self.delta()).ceil() as usize
    }

    /// Index of the last duplication stage.
    pub fn last_stage(&self) -> usize {
        let target = self.v2_target_factor * (self.n * self.log_n()) as f64;
        let mut i = 1;
        while (self.lambda() as f64) * 2f64.powi(i as i32) < target {
            i += 1;
        }
        i
    }

    pub fn phases(&self) -> usize {
        self.num_phases.unwrap_or(4 * self.n)
    }
}

pub fn log2_ceil(n: usize) -> usize {
    if n <= 2 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
