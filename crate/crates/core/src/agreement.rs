//! Randomized binary agreement: each phase samples votes with a capped walk,
//! keeps the local majority when it is overwhelming and otherwise adopts the
//! common coin.

use crate::adversary::{Activity, Forecast, SamplingBrief, Strategy, WalkPurpose};
use crate::aerid::{run_walk, NodeMemory, StageStats};
use crate::coin::{coin_flip, designated_rank, init_coin, sender_bit, unique_rank_count, CoinSetup};
use crate::engine::Engine;
use crate::error::Result;
use crate::graph::NodeId;
use crate::rng::{stream, Purpose};
use crate::setting::Setting;
use crate::transcript::Event;
use crate::walk::{Supply, TokenTemplate, WalkProtocol};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

/// Independent uniform input bits.
pub fn random_inputs(seed: u64, n: usize) -> Vec<u8> {
    (0..n).map(|v| stream(seed, Purpose::Input, v as u64, 0).gen_range(0..2)).collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: u64,
    pub rank: u32,
    /// Fraction of honest nodes with tally above the threshold.
    pub strong: f64,
    pub good_coin: bool,
    pub coin_agreement: f64,
    pub coin_bit: u8,
    /// Largest fraction of honest nodes sharing a vote after the phase.
    pub agreement: f64,
    pub majority: u8,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AgreementReport {
    pub phases: Vec<PhaseRecord>,
    /// First phase after which at least `1 - fail_frac` of honest nodes agree.
    pub first_agreement: Option<u64>,
    /// Final vote per node; byzantine entries are 0.
    pub outputs: Vec<u8>,
    pub final_agreement: f64,
    pub final_value: u8,
    pub unique_ranks: usize,
    pub good_ranks: usize,
    pub nonconforming_forwards: u64,
    pub init_rounds: u64,
    /// Init broadcast stages, v2 only.
    pub stage_stats: Vec<StageStats>,
    pub rounds: u64,
}

fn forecast(setup: &CoinSetup, seed: u64, phase: u64, upfront: bool) -> Forecast {
    if !upfront {
        return Forecast::Unknown;
    }
    let rank = designated_rank(phase, setup.n);
    let status = setup.status(rank);
    if let (true, Some(v)) = (status.good, status.sender) {
        return Forecast::Fixed(sender_bit(seed, v, phase));
    }
    let (mut ones, mut zeros) = (0, 0);
    for (v, &r) in setup.ranks.iter().enumerate() {
        if r == rank {
            if sender_bit(seed, v as NodeId, phase) == 1 {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
    if ones + zeros == 0 {
        Forecast::Vacant
    } else {
        Forecast::Contested { ones, zeros }
    }
}

/// `(maj, tally)` over sampled votes: strict majority (ties keep `current`)
/// and the share of receipts carrying it. No receipts gives tally 0.
pub fn sampling_estimate(receipts: impl IntoIterator<Item = u64>, current: u8) -> (u8, f64) {
    let (mut ones, mut zeros, mut all) = (0usize, 0usize, 0usize);
    for p in receipts {
        all += 1;
        match p {
            0 => zeros += 1,
            1 => ones += 1,
            _ => {}
        }
    }
    let maj = match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => current,
    };
    let count = if maj == 1 { ones } else { zeros };
    (maj, if all == 0 { 0.0 } else { count as f64 / all as f64 })
}

fn split(honest: &[NodeId], votes: &[u8]) -> (f64, u8) {
    let ones = honest.iter().filter(|&&v| votes[v as usize] == 1).count();
    let zeros = honest.len() - ones;
    (ones.max(zeros) as f64 / honest.len() as f64, u8::from(ones > zeros))
}

pub fn run_agreement(
    engine: &mut Engine<'_>,
    s: &Setting<'_>,
    strategy: &mut dyn Strategy,
    inputs: &[u8],
) -> Result<AgreementReport> {
    let cfg = s.cfg;
    let n = s.graph.n();
    let start = engine.round();
    let honest = s.honest();
    let mut memory = NodeMemory::new(n, s.graph.d());
    engine.transcript.push(Event::Begin { label: "coin-init".into(), round: engine.round() });
    let setup = Arc::new(init_coin(engine, s, &mut memory, strategy)?);
    let init_rounds = engine.round() - start;

    let mut votes: Vec<u8> = (0..n).map(|v| if s.byzantine.contains(v as NodeId) { 0 } else { inputs[v] }).collect();
    let need = 1.0 - cfg.fail_frac;
    let mut report = AgreementReport {
        unique_ranks: unique_rank_count(&setup.ranks, &honest, n),
        good_ranks: setup.ranks_status.iter().filter(|r| r.good).count(),
        init_rounds,
        stage_stats: setup.stage_stats.clone(),
        ..Default::default()
    };
    let sampler = WalkProtocol::new(s.cap, s.rw_length, cfg.sample_total(), s.graph.d(), false);
    for phase in 1..=cfg.phases() as u64 {
        engine.transcript.push(Event::Begin { label: format!("phase-{phase}"), round: engine.round() });
        strategy.plan_sampling(&SamplingBrief {
            phase,
            votes: &votes,
            honest: &honest,
            threshold: cfg.tally_threshold,
            samples_per_node: cfg.sample_total(),
            rw_length: s.rw_length,
            coin_now: forecast(&setup, engine.seed, phase, cfg.coins_upfront),
            coin_next: forecast(&setup, engine.seed, phase + 1, cfg.coins_upfront),
        });
        let byz = s.byzantine;
        let mut nodes = memory.walk_nodes(|v| {
            if byz.contains(v) {
                Supply::Held(VecDeque::new())
            } else {
                let template = TokenTemplate { rank: 0, stage: 0, payload: votes[v as usize] as u64 };
                Supply::Fresh { template, remaining: cfg.sample_total() }
            }
        });
        strategy.begin(&Activity::Walk { purpose: WalkPurpose::Sampling { phase }, stage: 0 });
        run_walk(engine, &sampler, &mut nodes, strategy, None, &mut memory.audit)?;
        memory.absorb(&mut nodes);

        let mut strong = vec![false; n];
        let mut majority = vec![0u8; n];
        for &u in &honest {
            let (maj, tally) = sampling_estimate(nodes[u as usize].held.iter().map(|t| t.payload), votes[u as usize]);
            majority[u as usize] = maj;
            strong[u as usize] = tally > cfg.tally_threshold;
        }
        drop(nodes);
        strategy.after_sampling(&strong, &majority);

        let flip = coin_flip(engine, &setup, &mut memory, phase, strategy)?;
        report.nonconforming_forwards += flip.nonconforming_forwards;
        for &u in &honest {
            let ui = u as usize;
            votes[ui] = if strong[ui] { majority[ui] } else { flip.outputs[ui] };
        }
        let (agreement, maj) = split(&honest, &votes);
        let strong_count = honest.iter().filter(|&&v| strong[v as usize]).count();
        engine.transcript.push(Event::Phase {
            phase,
            agreement,
            majority: maj,
            strong: strong_count as u64,
            good_coin: Some(flip.good),
            coin_bit: Some(flip.majority_bit),
        });
        report.phases.push(PhaseRecord {
            phase,
            rank: flip.rank,
            strong: strong_count as f64 / honest.len() as f64,
            good_coin: flip.good,
            coin_agreement: flip.agreement,
            coin_bit: flip.majority_bit,
            agreement,
            majority: maj,
        });
        if agreement >= need && report.first_agreement.is_none() {
            report.first_agreement = Some(phase);
            if cfg.early_stop {
                break;
            }
        }
    }
    strategy.begin(&Activity::Idle);
    let last = report.phases.len() as u64;
    for &u in &honest {
        engine.transcript.push(Event::Decision { phase: last, node: u, value: votes[u as usize] });
    }
    let (agreement, value) = split(&honest, &votes);
    report.final_agreement = agreement;
    report.final_value = value;
    report.outputs = votes;
    report.rounds = engine.round() - start;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_arithmetic() {
        let r = std::iter::repeat(1).take(90).chain(std::iter::repeat(0).take(10));
        assert_eq!(sampling_estimate(r, 0), (1, 0.9));
        assert_eq!(sampling_estimate([1, 0, 0, 1], 1), (1, 0.5));
        assert_eq!(sampling_estimate([1, 0, 0, 1], 0), (0, 0.5));
        assert_eq!(sampling_estimate([], 1), (1, 0.0));
    }
}
