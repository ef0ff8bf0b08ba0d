//! Reference values computed outside the crate (scipy, hand enumeration)
//! and frozen here.

use approx::assert_abs_diff_eq;
use byzwalk::adversary::from_config;
use byzwalk::aerid::{aerid_v2, NodeMemory};
use byzwalk::agreement::sampling_estimate;
use byzwalk::coin::{draw_ranks, expected_unique_ranks, unique_rank_count};
use byzwalk::config::{AdversaryConfig, ExperimentConfig};
use byzwalk::engine::Engine;
use byzwalk::graph::{conditioned_walk_distribution, extract_core, generate_regular_expander, mixing_time_of, Graph, NodeSet};
use byzwalk::metrics::{binomial_interval, binomial_test, empirical, tv_distance};
use byzwalk::setting::Setting;
use byzwalk::transcript::Transcript;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn k4() -> Graph {
    let edges: Vec<(u32, u32)> = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    Graph::from_edges(4, 3, &edges).unwrap()
}

#[test]
fn k4_minus_one_node_is_a_uniform_triangle() {
    let g = k4();
    let core = extract_core(&g, &NodeSet::new(4, [3]), 0.5).unwrap();
    assert_eq!(core.members, vec![0, 1, 2]);
    assert_eq!(core.edge_count, 3);
    for &p in &core.stationary {
        assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
    }
    let dist = conditioned_walk_distribution(&core, 0, 64).unwrap();
    for p in dist {
        assert!((p - 1.0 / 3.0).abs() <= 1.0 / 64.0);
    }
    let point = conditioned_walk_distribution(&core, 1, 0).unwrap();
    assert_eq!(point, vec![0.0, 1.0, 0.0]);
}

#[test]
fn cycle_mixes_slower_than_expander() {
    let cycle: Vec<Vec<u32>> = (0..8u32).map(|v| vec![(v + 1) % 8, (v + 7) % 8]).collect();
    let g = generate_regular_expander(8, 4, 3).unwrap();
    let adj: Vec<Vec<u32>> = (0..8u32).map(|v| g.neighbors(v).to_vec()).collect();
    let t_cycle = mixing_time_of(&cycle, 8, true, 3.0).unwrap();
    let t_exp = mixing_time_of(&adj, 8, true, 3.0).unwrap();
    assert!(t_cycle > t_exp, "cycle {t_cycle} vs expander {t_exp}");
}

#[test]
fn expected_unique_ranks_matches_enumeration() {
    // n = 5, three holders: every assignment in 5^3, counted by hand.
    let n = 5u32;
    let mut total = 0usize;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut hits = [0u8; 5];
                for r in [a, b, c] {
                    hits[r as usize] += 1;
                }
                total += hits.iter().filter(|&&h| h == 1).count();
            }
        }
    }
    let exact = total as f64 / 125.0;
    assert_abs_diff_eq!(exact, 1.92, epsilon = 1e-12);
    assert_abs_diff_eq!(expected_unique_ranks(5, 3), exact, epsilon = 1e-12);
    // Closed form evaluated in Python floats.
    assert_abs_diff_eq!(expected_unique_ranks(256, 256), 94.361_496_849_300_86, epsilon = 1e-9);
    assert_abs_diff_eq!(expected_unique_ranks(128, 124), 47.255_579_796_503_23, epsilon = 1e-9);
}

#[test]
fn drawn_ranks_only_cover_honest_nodes() {
    let honest: Vec<u32> = (0..32).filter(|v| v % 5 != 0).collect();
    let ranks = draw_ranks(32, 9, &honest);
    for v in 0..32u32 {
        let r = ranks[v as usize];
        if honest.contains(&v) {
            assert!((1..=32).contains(&r));
        } else {
            assert_eq!(r, 0);
        }
    }
    let unique = unique_rank_count(&ranks, &honest, 32);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in &honest {
        *counts.entry(ranks[v as usize]).or_default() += 1;
    }
    assert_eq!(unique, counts.values().filter(|&&c| c == 1).count());
}

#[test]
fn uniform_draws_are_close_in_tv() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = vec![0u64; 64];
    for _ in 0..100_000 {
        counts[rng.gen_range(0..64)] += 1;
    }
    let tv = tv_distance(&empirical(&counts), &[1.0 / 64.0; 64]);
    assert!(tv <= 0.05, "tv {tv}");
    assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
}

#[test]
fn binomial_gates_match_scipy() {
    assert!(binomial_test(50, 100, 0.5, 0.01).pass);
    assert!(!binomial_test(0, 100, 0.5, 0.01).pass);
    // scipy.stats.binomtest(60, 100).pvalue
    assert_abs_diff_eq!(binomial_test(60, 100, 0.5, 0.01).p_value, 0.056_887_933_64, epsilon = 1e-9);
    // scipy.stats.binom.ppf(0.005 / 0.995, n, 0.5)
    assert_eq!(binomial_interval(100, 0.5, 0.01), (37, 63));
    assert_eq!(binomial_interval(256, 0.5, 0.01), (107, 149));
}

#[test]
fn tally_at_threshold_takes_the_coin() {
    let receipts = std::iter::repeat(1).take(90).chain(std::iter::repeat(0).take(10));
    let (maj, tally) = sampling_estimate(receipts, 0);
    assert_eq!((maj, tally), (1, 0.9));
    let threshold = ExperimentConfig::default().tally_threshold;
    assert!(!(tally > threshold), "strict rule: 0.9 is not strong at 0.9");
}

#[test]
fn one_duplication_stage_doubles_every_source() {
    let cfg = ExperimentConfig { n: 16, d: 4, lambda: Some(4.0), delta: Some(0.25), v2_target_factor: 0.01, ..Default::default() };
    assert_eq!(cfg.last_stage(), 1);
    let g = generate_regular_expander(16, 4, cfg.seed).unwrap();
    let byz = NodeSet::empty(16);
    let s = Setting::new(&cfg, &g, &byz).unwrap();
    let mut engine = Engine::new(&g, &byz, cfg.seed, Transcript::default());
    let mut memory = NodeMemory::new(16, 4);
    let mut silent = from_config(&AdversaryConfig::default()).unwrap();
    let payloads: Vec<u64> = (0..16).collect();
    let ranks = vec![1; 16];
    let out = aerid_v2(&mut engine, &s, &mut memory, &payloads, &ranks, silent.as_mut(), false, false).unwrap();
    let mut per_source = [0usize; 16];
    for held in &out.received {
        for t in held {
            assert_eq!(t.key.stage, 1);
            assert_eq!(t.payload, t.key.source as u64);
            per_source[t.key.source as usize] += 1;
        }
    }
    assert!(per_source.iter().all(|&c| c == 2 * 4));
    assert_eq!(out.stage_stats[0].dropped, 0);
}
