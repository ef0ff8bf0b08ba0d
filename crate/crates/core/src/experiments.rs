//! End-to-end runs: one configuration, one seed, one transcript and one
//! metrics report. The command-line runner and the acceptance suite both go
//! through here.

use crate::adversary::{from_config, Activity, WalkPurpose};
use crate::aerid::{aerid_v1, aerid_v2, decode_report, run_walk, NodeMemory, StageStats};
use crate::agreement::{random_inputs, run_agreement};
use crate::coin::{coin_flip, init_coin};
use crate::config::{DecodeFilter, ExperimentConfig, Inputs, Variant};
use crate::engine::Engine;
use crate::error::{Result, SimError};
use crate::graph::{generate_regular_expander, Graph, NodeSet};
use crate::metrics::MetricsReport;
use crate::rng::{stream, Purpose};
use crate::setting::Setting;
use crate::transcript::{Event, Transcript};
use crate::walk::{classify_tokens, endpoint_distribution_test, Supply, TokenTemplate, WalkOracle, WalkProtocol};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Walk,
    Aerid,
    Coin,
    Agreement,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::Walk => "walk",
            Experiment::Aerid => "aerid",
            Experiment::Coin => "coin",
            Experiment::Agreement => "agreement",
        }
    }
}

/// Short digest of the configuration with the seed zeroed, so runs of one
/// configuration over many seeds share it.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    let json = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Run header written as the first transcript event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub experiment: Experiment,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl RunHeader {
    pub fn from_transcript(events: &[Event]) -> Result<RunHeader> {
        match events.first() {
            Some(Event::Note { text }) => Ok(serde_json::from_str(text)?),
            _ => Err(SimError::Transcript("transcript does not start with a run header".into())),
        }
    }
}

pub struct RunOutput {
    pub header: RunHeader,
    pub metrics: MetricsReport,
    pub transcript: Transcript,
}

impl RunOutput {
    /// One row per engine round: `round,honest_msgs,byzantine_msgs,max_edge_msgs,max_edge_bits`.
    pub fn trace_csv(&self) -> String {
        let mut s = format!("# config_hash={} seed={}\nround,honest_msgs,byzantine_msgs,max_edge_msgs,max_edge_bits\n", self.header.config_hash, self.header.seed);
        for e in &self.transcript.events {
            if let Event::Round { round, honest_msgs, byzantine_msgs, max_edge_msgs, max_edge_bits } = e {
                s.push_str(&format!("{round},{honest_msgs},{byzantine_msgs},{max_edge_msgs},{max_edge_bits}\n"));
            }
        }
        s
    }
}

pub fn instance(cfg: &ExperimentConfig) -> Result<(Graph, NodeSet)> {
    cfg.validate()?;
    let g = generate_regular_expander(cfg.n, cfg.d, cfg.seed)?;
    Ok((g, cfg.byzantine_set()))
}

pub fn inputs(cfg: &ExperimentConfig) -> Vec<u8> {
    let n = cfg.n;
    match cfg.inputs {
        Inputs::Random => random_inputs(cfg.seed, n),
        Inputs::Split => (0..n).map(|v| u8::from(v >= n / 2)).collect(),
        Inputs::AllZero => vec![0; n],
        Inputs::AllOne => vec![1; n],
    }
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (graph, byz) = instance(cfg)?;
    run_on(experiment, cfg, &graph, &byz)
}

/// Runs on a given instance; `cfg.seed` still drives every random choice.
pub fn run_on(experiment: Experiment, cfg: &ExperimentConfig, graph: &Graph, byz: &NodeSet) -> Result<RunOutput> {
    cfg.validate()?;
    let header = RunHeader { experiment, config_hash: config_hash(cfg), seed: cfg.seed, config: cfg.clone() };
    let mut transcript = Transcript::new(cfg.transcript);
    transcript.push(Event::Note { text: serde_json::to_string(&header)? });
    let s = Setting::new(cfg, graph, byz)?;
    let mut engine = Engine::new(graph, byz, cfg.seed, transcript).with_round_budget(cfg.max_rounds);
    let mut strategy = from_config(&cfg.adversary)?;
    let mut m = MetricsReport {
        experiment: experiment.label().into(),
        config_hash: header.config_hash.clone(),
        seed: cfg.seed,
        ..Default::default()
    };
    m.set("n", cfg.n as f64);
    m.set("byzantine", byz.len() as f64);
    m.set("cap", s.cap as f64);
    m.set("rw_length", s.rw_length as f64);
    if let Some(c) = &s.core {
        m.set("core_size", c.len() as f64);
        m.set("core_mixing_time", c.mixing_time as f64);
    }
    let mut memory = NodeMemory::new(cfg.n, cfg.d);
    match experiment {
        Experiment::Walk => {
            let total = cfg.walk_tokens.unwrap_or_else(|| cfg.v1_total());
            let protocol = WalkProtocol::new(s.cap, s.rw_length, total, cfg.d, false);
            let mut oracle = WalkOracle::new(s.lens.clone(), false);
            let mut nodes = memory.walk_nodes(|v| {
                if byz.contains(v) {
                    Supply::Held(VecDeque::new())
                } else {
                    Supply::Fresh { template: TokenTemplate { rank: 0, stage: 0, payload: 0 }, remaining: total }
                }
            });
            strategy.begin(&Activity::Walk { purpose: WalkPurpose::Broadcast, stage: 0 });
            run_walk(&mut engine, &protocol, &mut nodes, strategy.as_mut(), Some(&mut oracle), &mut memory.audit)?;
            m.set("tokens_per_node", total as f64);
            if let Some(core) = &s.core {
                let c = classify_tokens(&oracle, core)?;
                let ep = endpoint_distribution_test(&oracle, core, 0.05);
                m.set("endpoint_tv", ep.tv);
                m.set("endpoint_tokens", ep.tokens as f64);
                m.set("initiated_in_core", c.initiated_in_core as f64);
                m.set("good", c.good as f64);
                m.set("bad", c.bad as f64);
                m.set("crossing", c.crossing as f64);
                m.set("core_crossing", c.core_crossing as f64);
                m.set("good_fraction", c.good as f64 / c.initiated_in_core.max(1) as f64);
                m.set("crossing_fraction", c.core_crossing as f64 / (core.len() * total) as f64);
            }
        }
        Experiment::Aerid => {
            let payloads: Vec<u64> = (0..cfg.n).map(|v| stream(cfg.seed, Purpose::Payload, v as u64, 0).gen::<u32>() as u64).collect();
            let ranks = vec![0; cfg.n];
            let out = match cfg.variant {
                Variant::V1 => aerid_v1(&mut engine, &s, &mut memory, &payloads, &ranks, strategy.as_mut(), false, false)?,
                Variant::V2 => aerid_v2(&mut engine, &s, &mut memory, &payloads, &ranks, strategy.as_mut(), false, false)?,
            };
            let report = match cfg.decode {
                DecodeFilter::All => decode_report(&s, &out, &payloads, 1.0 - cfg.fail_frac, |_| true),
                DecodeFilter::LowCongestion => decode_report(&s, &out, &payloads, 1.0 - cfg.fail_frac, |t| {
                    !out.oracle.is_good(t.shadow.instance) || out.oracle.is_low_congestion(t.shadow.instance)
                }),
            };
            m.set("decode_need", report.need as f64);
            m.set("decode_min_correct", report.min_correct as f64);
            m.set("decode_receivers_ok", report.receivers_ok as f64);
            m.set("decode_pass", f64::from(u8::from(report.pass)));
            m.set("stages", out.stages as f64);
            stage_metrics(&mut m, cfg, &out.stage_stats);
        }
        Experiment::Coin => {
            let setup = Arc::new(init_coin(&mut engine, &s, &mut memory, strategy.as_mut())?);
            stage_metrics(&mut m, cfg, &setup.stage_stats);
            let need = ((1.0 - cfg.fail_frac) * cfg.n as f64).ceil();
            let honest = s.honest();
            let (mut good, mut good_ok, mut ones, mut nonconforming) = (0u32, 0u32, 0u32, 0u64);
            let mut min_agree = f64::INFINITY;
            for phase in 1..=cfg.flips.unwrap_or(cfg.n) as u64 {
                let f = coin_flip(&mut engine, &setup, &mut memory, phase, strategy.as_mut())?;
                nonconforming += f.nonconforming_forwards;
                m.push("coin_agreement", f.agreement);
                m.push("good_phase", f64::from(u8::from(f.good)));
                if let (true, [(_, bit)]) = (f.good, f.senders.as_slice()) {
                    let agree = honest.iter().filter(|&&v| f.outputs[v as usize] == *bit).count() as f64;
                    good += 1;
                    ones += u32::from(*bit);
                    good_ok += u32::from(agree >= need);
                    min_agree = min_agree.min(agree);
                }
            }
            for r in setup.ranks_status.iter().filter(|r| r.sender.is_some()) {
                m.push("rank_success", r.success);
            }
            m.set("good_ranks", setup.ranks_status.iter().filter(|r| r.good).count() as f64);
            m.set("unique_ranks", setup.ranks_status.iter().filter(|r| r.sender.is_some()).count() as f64);
            m.set("good_phases", good as f64);
            m.set("good_phases_agreeing", good_ok as f64);
            m.set("good_phase_min_agree", if good > 0 { min_agree } else { 0.0 });
            m.set("good_phase_ones", ones as f64);
            m.set("nonconforming_forwards", nonconforming as f64);
        }
        Experiment::Agreement => {
            let inputs = inputs(cfg);
            let r = run_agreement(&mut engine, &s, strategy.as_mut(), &inputs)?;
            stage_metrics(&mut m, cfg, &r.stage_stats);
            let honest = s.honest();
            let need = ((1.0 - cfg.fail_frac) * cfg.n as f64).ceil() as usize;
            let same_input = honest.iter().all(|&v| inputs[v as usize] == inputs[honest[0] as usize]);
            if same_input {
                let b = inputs[honest[0] as usize];
                let holding = honest.iter().filter(|&&v| r.outputs[v as usize] == b).count();
                m.set("validity", f64::from(u8::from(holding >= need)));
            }
            m.set("phases_run", r.phases.len() as f64);
            m.set("first_agreement", r.first_agreement.map_or(-1.0, |p| p as f64));
            m.set("final_agreement", r.final_agreement);
            m.set("final_value", r.final_value as f64);
            m.set("unique_ranks", r.unique_ranks as f64);
            m.set("good_ranks", r.good_ranks as f64);
            m.set("nonconforming_forwards", r.nonconforming_forwards as f64);
            m.set("init_rounds", r.init_rounds as f64);
            for p in &r.phases {
                m.push("agreement", p.agreement);
                m.push("strong", p.strong);
                m.push("good_coin", f64::from(u8::from(p.good_coin)));
                m.push("coin_agreement", p.coin_agreement);
            }
        }
    }
    let a = &memory.audit;
    m.set("cap_checks", a.checks as f64);
    m.set("cap_overruns", a.overruns as f64);
    m.set("cap_audit_failures", (a.failures + a.honest_overruns) as f64);
    m.set("ingested_after_blacklist", a.ingested_after_blacklist as f64);
    let transcript = engine.transcript;
    let mut blacklists = 0u64;
    for e in &transcript.events {
        match e {
            Event::Blacklist { .. } => blacklists += 1,
            Event::Round { max_edge_bits, .. } => {
                *m.bits_per_edge_round.entry(max_edge_bits.next_power_of_two()).or_default() += 1;
            }
            _ => {}
        }
    }
    m.set("blacklist_events", blacklists as f64);
    m.interval = (0, engine_rounds(&transcript));
    m.set("rounds", m.interval.1 as f64);
    Ok(RunOutput { header, metrics: m, transcript })
}

/// Per-stage traces of an init broadcast, and whether every v2 stage kept
/// good tokens per source within `2^i * 2 lambda`.
fn stage_metrics(m: &mut MetricsReport, cfg: &ExperimentConfig, stats: &[StageStats]) {
    let lambda = cfg.lambda() as f64;
    let mut growth_ok = true;
    for st in stats {
        m.push("stage_max_good_per_source", st.max_good_per_source as f64);
        m.push("stage_dropped", st.dropped as f64);
        m.push("stage_rounds", st.rounds as f64);
        if cfg.variant == Variant::V2 && st.max_good_per_source as f64 > 2f64.powi(st.stage as i32) * 2.0 * lambda {
            growth_ok = false;
        }
    }
    m.set("growth_ok", f64::from(u8::from(growth_ok)));
}

/// Rounds covered by a transcript: one past the last round event, or the
/// last phase marker when rounds were skipped analytically.
fn engine_rounds(t: &Transcript) -> u64 {
    t.events
        .iter()
        .filter_map(|e| match e {
            Event::Round { round, .. } => Some(round + 1),
            Event::Begin { round, .. } => Some(*round),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}
