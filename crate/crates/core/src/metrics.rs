//! Statistical helpers and run reports.

use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};
use std::collections::BTreeMap;

/// Total variation distance, half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different supports");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalizes counts into an empirical distribution.
pub fn empirical(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialTest {
    pub p_value: f64,
    /// True when the null `p = p0` is not rejected at level alpha.
    pub pass: bool,
}

/// Exact two-sided binomial test: sums the probability of every outcome no
/// more likely than the observed one.
pub fn binomial_test(successes: u64, trials: u64, p0: f64, alpha: f64) -> BinomialTest {
    assert!(successes <= trials, "more successes than trials");
    assert!((0.0..=1.0).contains(&p0), "p0 outside [0, 1]");
    let p_value = if trials == 0 {
        1.0
    } else {
        let dist = Binomial::new(p0, trials).expect("valid binomial");
        let observed = dist.pmf(successes);
        let tol = observed * (1.0 + 1e-7);
        (0..=trials).map(|k| dist.pmf(k)).filter(|&pk| pk <= tol).sum::<f64>().min(1.0)
    };
    BinomialTest { p_value, pass: p_value >= alpha }
}

/// Two-sided `1 - alpha` acceptance interval `[lo, hi]` for a binomial count,
/// from the equal-tailed quantiles.
pub fn binomial_interval(trials: u64, p0: f64, alpha: f64) -> (u64, u64) {
    let dist = Binomial::new(p0, trials).expect("valid binomial");
    let mut cdf = 0.0;
    let mut lo = 0;
    let mut hi = trials;
    let mut lo_set = false;
    for k in 0..=trials {
        cdf += dist.pmf(k);
        if !lo_set && cdf > alpha / 2.0 {
            lo = k;
            lo_set = true;
        }
        if cdf >= 1.0 - alpha / 2.0 {
            hi = k;
            break;
        }
    }
    (lo, hi)
}

/// Streaming summary with an associative merge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Summary {
    fn default() -> Self {
        Summary { count: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        values.into_iter().fold(Summary::default(), |s, x| s.merge(&Summary::single(x)))
    }

    pub fn single(x: f64) -> Summary {
        Summary { count: 1, mean: x, m2: 0.0, min: x, max: x }
    }

    pub fn merge(&self, other: &Summary) -> Summary {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Summary { count, mean, m2, min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    /// Sample standard deviation.
    pub fn sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

/// One run's measurements, written as `metrics.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    /// Global rounds `[first, last)` the values were computed over.
    pub interval: (u64, u64),
    pub values: BTreeMap<String, f64>,
    /// Per-phase or per-stage traces.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Rounds by the largest per-link bit load, bucketed to powers of two.
    pub bits_per_edge_round: BTreeMap<u64, u64>,
}

impl MetricsReport {
    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn push(&mut self, series: &str, value: f64) {
        self.series.entry(series.to_string()).or_default().push(value);
    }
}

/// Per-metric summaries across seeds of one configuration.
pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Result<BTreeMap<String, Summary>> {
    let mut out: BTreeMap<String, Summary> = BTreeMap::new();
    let mut hash: Option<&str> = None;
    for r in reports {
        match hash {
            Some(h) if h != r.config_hash => {
                return Err(SimError::Config(format!("cannot aggregate configs {h} and {}", r.config_hash)));
            }
            _ => hash = Some(&r.config_hash),
        }
        for (k, &v) in &r.values {
            let s = out.entry(k.clone()).or_default();
            *s = s.merge(&Summary::single(v));
        }
    }
    Ok(out)
}
