use byzwalk::coin::{designated_rank, draw_ranks};
use byzwalk::config::{AdversaryConfig, ExperimentConfig, TranscriptLevel};
use byzwalk::experiments::{config_hash, instance, run, Experiment};
use byzwalk::graph::generate_regular_expander;
use byzwalk::transcript::{Event, Transcript};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn small(n: usize, byzantine: usize, seed: u64, adversary: AdversaryConfig) -> ExperimentConfig {
    ExperimentConfig { n, d: 4, byzantine, seed, adversary, walk_tokens: Some(64), ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn generated_graphs_are_simple_regular_connected(half in 4usize..40, d in 3usize..7, seed in any::<u64>()) {
        let n = 2 * half;
        prop_assume!(d < n);
        let g = generate_regular_expander(n, d, seed).unwrap();
        prop_assert!(g.is_connected());
        let mut seen = BTreeSet::new();
        for v in 0..n as u32 {
            let nb = g.neighbors(v);
            prop_assert_eq!(nb.len(), d);
            prop_assert!(!nb.contains(&v));
            prop_assert_eq!(nb.iter().collect::<BTreeSet<_>>().len(), d);
            for &w in nb {
                seen.insert((v.min(w), v.max(w)));
            }
        }
        prop_assert_eq!(seen.len(), n * d / 2);
        prop_assert_eq!(g, generate_regular_expander(n, d, seed).unwrap());
    }

    /// Overrunning flooders are cut off by every honest neighbor in the first
    /// round they flood and never heard from again.
    #[test]
    fn blacklisting_is_exact(byz in 1usize..4, rate in 1.01f64..3.0, seed in 1u64..1000) {
        let cfg = small(32, byz, seed, AdversaryConfig::named("flooder").with("rate", rate));
        let out = run(Experiment::Walk, &cfg).unwrap();
        let m = &out.metrics;
        prop_assert_eq!(m.get("cap_audit_failures"), Some(0.0));
        prop_assert_eq!(m.get("ingested_after_blacklist"), Some(0.0));
        let (g, b) = instance(&cfg).unwrap();
        let mut links = BTreeSet::new();
        for &x in b.members() {
            for &w in g.neighbors(x) {
                if !b.contains(w) {
                    links.insert((w, x));
                }
            }
        }
        let events: Vec<(u64, u32, u32)> = out.transcript.events.iter().filter_map(|e| match e {
            Event::Blacklist { round, node, neighbor } => Some((*round, *node, *neighbor)),
            _ => None,
        }).collect();
        let first = out.transcript.events.iter().find_map(|e| match e {
            Event::Round { round, .. } => Some(*round),
            _ => None,
        }).unwrap();
        prop_assert!(events.iter().all(|&(r, _, _)| r == first));
        prop_assert_eq!(events.iter().map(|&(_, v, x)| (v, x)).collect::<BTreeSet<_>>(), links);
        prop_assert_eq!(events.len(), m.get("blacklist_events").unwrap() as usize);
    }

    #[test]
    fn at_cap_flooding_is_never_blacklisted(byz in 1usize..4, rate in 0.05f64..1.0, seed in 1u64..1000) {
        let cfg = small(32, byz, seed, AdversaryConfig::named("flooder").with("rate", rate));
        let out = run(Experiment::Walk, &cfg).unwrap();
        prop_assert_eq!(out.metrics.get("blacklist_events"), Some(0.0));
        prop_assert_eq!(out.metrics.get("cap_audit_failures"), Some(0.0));
    }

    #[test]
    fn honest_walks_conserve_tokens(seed in 1u64..1000, tokens in 1usize..200) {
        let cfg = ExperimentConfig { walk_tokens: Some(tokens), ..small(32, 0, seed, AdversaryConfig::default()) };
        let m = run(Experiment::Walk, &cfg).unwrap().metrics;
        prop_assert_eq!(m.get("endpoint_tokens"), Some((32 * tokens) as f64));
        prop_assert_eq!(m.get("good"), Some((32 * tokens) as f64));
        prop_assert_eq!(m.get("bad"), Some(0.0));
        prop_assert_eq!(m.get("crossing"), Some(0.0));
    }

    #[test]
    fn runs_replay_exactly(seed in 1u64..1000, which in 0usize..5, exp in 0usize..3) {
        let name = byzwalk::adversary::STRATEGIES[which];
        let experiment = [Experiment::Walk, Experiment::Coin, Experiment::Agreement][exp];
        let cfg = ExperimentConfig {
            flips: Some(3),
            num_phases: Some(2),
            transcript: TranscriptLevel::Full,
            ..small(16, 1, seed, AdversaryConfig::named(name))
        };
        let a = run(experiment, &cfg).unwrap();
        let b = run(experiment, &cfg).unwrap();
        prop_assert_eq!(&a.metrics, &b.metrics);
        prop_assert_eq!(a.transcript.digest(), b.transcript.digest());
        let mut bin = Vec::new();
        a.transcript.write_binary(&mut bin).unwrap();
        prop_assert_eq!(&Transcript::read_binary(&bin).unwrap(), &a.transcript.events);
        let mut text = Vec::new();
        a.transcript.write_jsonl(&mut text).unwrap();
        prop_assert_eq!(&Transcript::read_jsonl(text.as_slice()).unwrap(), &a.transcript.events);
    }

    /// Honest relays only forward coin messages matching their own records,
    /// whatever the adversary sends.
    #[test]
    fn coin_filter_is_sound(seed in 1u64..1000, byz in 1usize..4, which in 0usize..5) {
        let name = byzwalk::adversary::STRATEGIES[which];
        let cfg = ExperimentConfig { flips: Some(6), ..small(32, byz, seed, AdversaryConfig::named(name)) };
        let m = run(Experiment::Coin, &cfg).unwrap().metrics;
        prop_assert_eq!(m.get("nonconforming_forwards"), Some(0.0));
    }

    #[test]
    fn config_hash_ignores_only_the_seed(seed in any::<u64>(), other in any::<u64>()) {
        let a = ExperimentConfig { seed, ..Default::default() };
        let b = ExperimentConfig { seed: other, ..Default::default() };
        prop_assert_eq!(config_hash(&a), config_hash(&b));
        prop_assert_ne!(config_hash(&a), config_hash(&ExperimentConfig { n: 32, ..a.clone() }));
    }
}

#[test]
fn unanimous_honest_inputs_stay_unanimous() {
    for seed in 1..4 {
        let cfg = ExperimentConfig { n: 32, d: 4, seed, inputs: byzwalk::config::Inputs::AllOne, num_phases: Some(6), ..Default::default() };
        let m = run(Experiment::Agreement, &cfg).unwrap().metrics;
        assert_eq!(m.get("validity"), Some(1.0));
        assert!(m.series["agreement"].iter().all(|&a| a == 1.0));
    }
}

#[test]
fn silent_vacant_flips_leave_everyone_undecided() {
    let cfg = ExperimentConfig { n: 32, d: 4, flips: Some(32), ..Default::default() };
    let out = run(Experiment::Coin, &cfg).unwrap();
    let honest: Vec<u32> = (0..32).collect();
    let ranks = draw_ranks(32, cfg.seed, &honest);
    let mut vacant = 0;
    for e in &out.transcript.events {
        if let Event::CoinAudit { flip, delivered, .. } = e {
            let r = designated_rank(*flip, 32);
            let holders = ranks.iter().filter(|&&x| x == r).count();
            assert_eq!(holders == 0, *delivered == 0, "flip {flip}");
            vacant += usize::from(holders == 0);
        }
    }
    assert!(vacant > 0);
}

#[test]
fn transcripts_round_trip_floats_exactly() {
    // 14/15 came back one ulp low from the default JSON float parser.
    let mut t = Transcript::default();
    for x in [14.0 / 15.0, 0.1 + 0.2, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300] {
        t.push(Event::Phase { phase: 2, agreement: x, majority: 1, strong: 0, good_coin: Some(false), coin_bit: Some(1) });
    }
    let mut bin = Vec::new();
    t.write_binary(&mut bin).unwrap();
    assert_eq!(Transcript::read_binary(&bin).unwrap(), t.events);
    let mut text = Vec::new();
    t.write_jsonl(&mut text).unwrap();
    assert_eq!(Transcript::read_jsonl(text.as_slice()).unwrap(), t.events);
}
