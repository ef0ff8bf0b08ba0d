//! A fixed instance: graph, byzantine set, reference core and derived constants.

use crate::config::{ExperimentConfig, MixingSource};
use crate::error::{Result, SimError};
use crate::graph::{extract_core, mixing_time_of, Graph, HonestCore, NodeSet, ORACLE_CAP};

pub struct Setting<'a> {
    pub cfg: &'a ExperimentConfig,
    pub graph: &'a Graph,
    pub byzantine: &'a NodeSet,
    pub core: Option<HonestCore>,
    /// Reference set used to label tokens good: the core when known,
    /// otherwise all honest nodes.
    pub lens: Vec<bool>,
    pub cap: usize,
    pub tau: usize,
    pub rw_length: usize,
}

impl<'a> Setting<'a> {
    /// Computes the core when `n` is within the oracle cap.
    pub fn new(cfg: &'a ExperimentConfig, graph: &'a Graph, byzantine: &'a NodeSet) -> Result<Setting<'a>> {
        let core = if graph.n() <= ORACLE_CAP { Some(extract_core(graph, byzantine, cfg.theta)?) } else { None };
        Self::with_core(cfg, graph, byzantine, core)
    }

    pub fn with_core(
        cfg: &'a ExperimentConfig,
        graph: &'a Graph,
        byzantine: &'a NodeSet,
        core: Option<HonestCore>,
    ) -> Result<Setting<'a>> {
        let tau = match &cfg.mixing {
            MixingSource::Formula => cfg.formula_tau(),
            MixingSource::Manual(t) => *t,
            MixingSource::Oracle => {
                let c = core.as_ref().ok_or(SimError::OracleCap { n: graph.n(), cap: ORACLE_CAP })?;
                mixing_time_of(&c.adj, graph.n(), cfg.lazy, cfg.whp_exponent)?
            }
        };
        if tau == 0 || 2 * tau > 250 {
            return Err(SimError::Config(format!("walk constant tau = {tau} out of range")));
        }
        let lens = match &core {
            Some(c) => c.mask(),
            None => (0..graph.n() as u32).map(|v| !byzantine.contains(v)).collect(),
        };
        Ok(Setting { cfg, graph, byzantine, core, lens, cap: cfg.cap(), tau, rw_length: 2 * tau })
    }

    pub fn honest(&self) -> Vec<u32> {
        self.byzantine.complement()
    }
}
