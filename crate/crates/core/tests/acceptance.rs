//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion names as arguments to run a subset;
//! the replay check then covers only the runs made.
//!
//!     cargo test --release -p byzwalk --test acceptance
//!     cargo test --release -p byzwalk --test acceptance -- coin_good_phases filter_soundness

use byzwalk::adversary::STRATEGIES;
use byzwalk::coin::{draw_ranks, expected_unique_ranks, unique_rank_count};
use byzwalk::config::{AdversaryConfig, DecodeFilter, ExperimentConfig, Inputs, Variant};
use byzwalk::experiments::{instance, run, Experiment, RunOutput};
use byzwalk::metrics::{binomial_interval, binomial_test, MetricsReport, Summary};
use byzwalk::par;
use byzwalk::sweep::seed_range;
use byzwalk::transcript::Event;
use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

const ALPHA: f64 = 0.01;
/// Tokens per node for the mixing check: 64 * 1600 = 102400 endpoints.
const MIXING_TOKENS: usize = 1600;
const MIXING_TV: f64 = 0.05;
const MIXING_SECONDS: f64 = 30.0;
const GOOD_FRACTION: f64 = 0.9;
const CROSSING_FRACTION: f64 = 0.1;
const DECODE_PASS_RATE: f64 = 0.95;
const RANK_DRAWS: u64 = 1000;
const RANK_QUANTILE: f64 = 0.99;
const AGREEMENT_RATE: f64 = 0.95;
const OSCILLATION_RATE: f64 = 0.8;

/// Every run made, for the audit and replay criteria.
struct Ledger {
    runs: Vec<Done>,
}

struct Done {
    experiment: Experiment,
    cfg: ExperimentConfig,
    digest: String,
    metrics: String,
    cap_audit_failures: f64,
    ingested_after_blacklist: f64,
}

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn fingerprint(out: &RunOutput) -> (String, String) {
    (out.transcript.digest(), serde_json::to_string(&out.metrics).expect("metrics serialize"))
}

impl Ledger {
    /// Runs every config (in parallel when enabled) and keeps the fingerprints.
    fn batch(&mut self, experiment: Experiment, cfgs: &[ExperimentConfig]) -> Vec<RunOutput> {
        let outs = par::map(cfgs, |c| run(experiment, c).unwrap_or_else(|e| panic!("{} seed {}: {e}", experiment.label(), c.seed)));
        for (cfg, out) in cfgs.iter().zip(&outs) {
            let (digest, metrics) = fingerprint(out);
            self.runs.push(Done {
                experiment,
                cfg: cfg.clone(),
                digest,
                metrics,
                cap_audit_failures: out.metrics.get("cap_audit_failures").unwrap_or(f64::NAN),
                ingested_after_blacklist: out.metrics.get("ingested_after_blacklist").unwrap_or(f64::NAN),
            });
        }
        outs
    }
}

fn seeds(base: u64, count: usize, f: impl Fn(u64) -> ExperimentConfig) -> Vec<ExperimentConfig> {
    seed_range(base, count).into_iter().map(f).collect()
}

fn metric(m: &MetricsReport, key: &str) -> f64 {
    m.get(key).unwrap_or_else(|| panic!("missing metric {key}"))
}

/// Observed at or beyond the bound, or not distinguishable from it.
fn at_least(successes: u64, trials: u64, p: f64) -> bool {
    successes as f64 >= p * trials as f64 || binomial_test(successes, trials, p, ALPHA).pass
}

fn at_most(successes: u64, trials: u64, p: f64) -> bool {
    successes as f64 <= p * trials as f64 || binomial_test(successes, trials, p, ALPHA).pass
}

fn walk_mixing(l: &mut Ledger) -> Verdict {
    let cfg = ExperimentConfig { n: 64, d: 6, walk_tokens: Some(MIXING_TOKENS), ..Default::default() };
    let t = Instant::now();
    let out = &l.batch(Experiment::Walk, std::slice::from_ref(&cfg))[0];
    let secs = t.elapsed().as_secs_f64();
    let tv = metric(&out.metrics, "endpoint_tv");
    let tokens = metric(&out.metrics, "endpoint_tokens");
    Verdict {
        name: "walk_mixing",
        pass: tv <= MIXING_TV && tokens >= 1e5 && secs < MIXING_SECONDS,
        detail: format!("tv={tv:.4} (<= {MIXING_TV}) over {tokens} good endpoints, {secs:.1}s (< {MIXING_SECONDS}s)"),
    }
}

fn containment(l: &mut Ledger) -> Verdict {
    let cfgs = seeds(1, 50, |seed| ExperimentConfig { n: 256, d: 6, byzantine: 4, seed, adversary: AdversaryConfig::named("flooder"), ..Default::default() });
    let outs = l.batch(Experiment::Walk, &cfgs);
    let (mut ok, mut good_fr, mut cross_fr) = (0, Summary::default(), Summary::default());
    for (cfg, out) in cfgs.iter().zip(&outs) {
        let m = &out.metrics;
        let r = metric(m, "initiated_in_core") as u64;
        let good = metric(m, "good") as u64;
        let volume = metric(m, "core_size") as u64 * cfg.v1_total() as u64;
        let crossing = metric(m, "core_crossing") as u64;
        good_fr = good_fr.merge(&Summary::single(good as f64 / r as f64));
        cross_fr = cross_fr.merge(&Summary::single(crossing as f64 / volume as f64));
        ok += usize::from(at_least(good, r, GOOD_FRACTION) && at_most(crossing, volume, CROSSING_FRACTION));
    }
    Verdict {
        name: "good_token_containment",
        pass: ok == cfgs.len(),
        detail: format!(
            "{ok}/{} seeds within gates; good/R(C) mean {:.3} min {:.3} (>= {GOOD_FRACTION}), core crossings/(|C| total) mean {:.3} max {:.3} (<= {CROSSING_FRACTION}), binomial alpha {ALPHA}",
            cfgs.len(),
            good_fr.mean,
            good_fr.min,
            cross_fr.mean,
            cross_fr.max
        ),
    }
}

/// Exact blacklist links for an overrunning flooder, plus the cap audit over
/// every adversarial run in the suite so far.
fn blacklisting(l: &mut Ledger) -> Verdict {
    let cfgs = seeds(1, 5, |seed| ExperimentConfig {
        n: 256,
        d: 6,
        byzantine: 4,
        seed,
        walk_tokens: Some(256),
        adversary: AdversaryConfig::named("flooder").with("rate", 2.0),
        ..Default::default()
    });
    let outs = l.batch(Experiment::Walk, &cfgs);
    let mut exact = 0;
    for (cfg, out) in cfgs.iter().zip(&outs) {
        let (g, b) = instance(cfg).expect("instance");
        let links: BTreeSet<(u32, u32)> =
            b.members().iter().flat_map(|&x| g.neighbors(x).iter().filter(|&&w| !b.contains(w)).map(move |&w| (w, x))).collect();
        let first = out.transcript.events.iter().find_map(|e| match e {
            Event::Round { round, .. } => Some(*round),
            _ => None,
        });
        let mut seen = BTreeSet::new();
        let mut on_time = true;
        for e in &out.transcript.events {
            if let Event::Blacklist { round, node, neighbor } = e {
                on_time &= Some(*round) == first;
                seen.insert((*node, *neighbor));
            }
        }
        exact += usize::from(on_time && seen == links);
    }
    let adversarial: Vec<&Done> = l.runs.iter().filter(|d| d.cfg.byzantine > 0 && d.cfg.adversary.name != "silent").collect();
    let clean = adversarial.iter().filter(|d| d.cap_audit_failures == 0.0 && d.ingested_after_blacklist == 0.0).count();
    Verdict {
        name: "blacklisting_exactness",
        pass: exact == cfgs.len() && clean == adversarial.len(),
        detail: format!(
            "rate-2 flooder: {exact}/{} runs blacklisted on exactly the byzantine links in the first round; cap audit clean in {clean}/{} adversarial runs",
            cfgs.len(),
            adversarial.len()
        ),
    }
}

fn decode_verdict(name: &'static str, outs: &[RunOutput]) -> Verdict {
    let passed = outs.iter().filter(|o| metric(&o.metrics, "decode_pass") == 1.0).count();
    let ok = Summary::of(outs.iter().map(|o| metric(&o.metrics, "decode_receivers_ok")));
    let need = metric(&outs[0].metrics, "decode_need");
    let rate = passed as f64 / outs.len() as f64;
    Verdict {
        name,
        pass: rate >= DECODE_PASS_RATE,
        detail: format!(
            "{passed}/{} seeds decode (rate {rate:.2}, need >= {DECODE_PASS_RATE}); receivers decoding >= {need} sources: mean {:.1} min {} max {} (need {need})",
            outs.len(),
            ok.mean,
            ok.min,
            ok.max
        ),
    }
}

fn aerid_v1(l: &mut Ledger) -> Verdict {
    let cfgs = seeds(1, 20, |seed| ExperimentConfig {
        n: 256,
        d: 6,
        byzantine: 3,
        seed,
        variant: Variant::V1,
        adversary: AdversaryConfig::named("token_corruptor"),
        ..Default::default()
    });
    let outs = l.batch(Experiment::Aerid, &cfgs);
    decode_verdict("aerid_v1_correctness", &outs)
}

fn aerid_v2_runs(l: &mut Ledger) -> Vec<RunOutput> {
    let cfgs = seeds(1, 20, |seed| ExperimentConfig {
        n: 256,
        d: 6,
        byzantine: 2,
        seed,
        variant: Variant::V2,
        decode: DecodeFilter::LowCongestion,
        adversary: AdversaryConfig::named("token_corruptor"),
        ..Default::default()
    });
    l.batch(Experiment::Aerid, &cfgs)
}

/// Checked on every run with a v2 init broadcast.
fn token_growth(l: &Ledger, outs: &[&RunOutput]) -> Verdict {
    let (mut runs, mut ok, mut worst) = (0, 0, 0.0f64);
    for o in outs {
        let cfg = &o.header.config;
        if cfg.variant != Variant::V2 {
            continue;
        }
        let Some(series) = o.metrics.series.get("stage_max_good_per_source") else { continue };
        runs += 1;
        let lambda = cfg.lambda() as f64;
        let mut fine = true;
        for (i, &x) in series.iter().enumerate() {
            let bound = 2f64.powi(i as i32 + 1) * 2.0 * lambda;
            worst = worst.max(x / bound);
            fine &= x <= bound;
        }
        ok += usize::from(fine);
    }
    let _ = l;
    Verdict {
        name: "token_growth",
        pass: runs > 0 && ok == runs,
        detail: format!("{ok}/{runs} v2 runs keep good tokens per source <= 2^i * 2 lambda at every stage; worst ratio {worst:.3}"),
    }
}

fn rank_uniqueness() -> Verdict {
    let n = 256;
    let honest: Vec<u32> = (0..n as u32).collect();
    let counts: Vec<f64> = seed_range(1, RANK_DRAWS as usize).iter().map(|&s| unique_rank_count(&draw_ranks(n, s, &honest), &honest, n) as f64).collect();
    let above = counts.iter().filter(|&&c| c >= (n / 8) as f64).count();
    let s = Summary::of(counts.iter().copied());
    let expected = expected_unique_ranks(n, n);
    let se = s.sd() / (RANK_DRAWS as f64).sqrt();
    let frac = above as f64 / RANK_DRAWS as f64;
    Verdict {
        name: "rank_uniqueness",
        pass: frac >= RANK_QUANTILE && (s.mean - expected).abs() <= 3.0 * se,
        detail: format!(
            "{above}/{RANK_DRAWS} draws with >= n/8 = {} unique ranks (need {RANK_QUANTILE}); mean {:.3} vs exact {expected:.3}, |diff| {:.3} <= 3 se = {:.3}",
            n / 8,
            s.mean,
            (s.mean - expected).abs(),
            3.0 * se
        ),
    }
}

fn coin_runs(l: &mut Ledger) -> Vec<RunOutput> {
    let cfgs = seeds(1, 20, |seed| ExperimentConfig { n: 256, d: 6, byzantine: 3, seed, adversary: AdversaryConfig::named("coin_biaser"), ..Default::default() });
    l.batch(Experiment::Coin, &cfgs)
}

fn coin_good_phases(outs: &[RunOutput]) -> Verdict {
    let (mut good, mut agreeing, mut ones) = (0u64, 0u64, 0u64);
    let mut min_agree = f64::INFINITY;
    for o in outs {
        let m = &o.metrics;
        let g = metric(m, "good_phases") as u64;
        good += g;
        agreeing += metric(m, "good_phases_agreeing") as u64;
        ones += metric(m, "good_phase_ones") as u64;
        if g > 0 {
            min_agree = min_agree.min(metric(m, "good_phase_min_agree"));
        }
    }
    let need = (0.95 * 256.0f64).ceil();
    let (lo, hi) = if good > 0 { binomial_interval(good, 0.5, ALPHA) } else { (0, 0) };
    Verdict {
        name: "coin_good_phase_soundness",
        pass: good > 0 && agreeing == good && (lo..=hi).contains(&ones),
        detail: format!(
            "{agreeing}/{good} oracle-good phases with >= {need} honest nodes on the sender's bit (min {min_agree}); ones {ones} in exact 99% band [{lo}, {hi}]"
        ),
    }
}

fn filter_soundness(outs: &[RunOutput]) -> Verdict {
    let total: f64 = outs.iter().map(|o| metric(&o.metrics, "nonconforming_forwards")).sum();
    let flips: usize = outs.iter().map(|o| o.metrics.series["coin_agreement"].len()).sum();
    Verdict {
        name: "filter_soundness",
        pass: total == 0.0 && flips > 0,
        detail: format!("{total} non-conforming coin messages forwarded by honest nodes over {flips} flips under coin_biaser"),
    }
}

fn agreement_cfg(n: usize, byzantine: usize, seed: u64, strategy: &str, inputs: Inputs) -> ExperimentConfig {
    ExperimentConfig { n, d: 6, byzantine, seed, inputs, early_stop: true, adversary: AdversaryConfig::named(strategy), ..Default::default() }
}

fn validity(l: &mut Ledger) -> Verdict {
    let mut lines = Vec::new();
    let mut all = true;
    for name in STRATEGIES {
        let cfgs = seeds(1, 20, |seed| agreement_cfg(128, 4, seed, name, if seed % 2 == 1 { Inputs::AllOne } else { Inputs::AllZero }));
        let outs = l.batch(Experiment::Agreement, &cfgs);
        let ok = outs.iter().filter(|o| metric(&o.metrics, "validity") == 1.0).count();
        all &= ok == outs.len();
        lines.push(format!("{name} {ok}/{}", outs.len()));
    }
    Verdict { name: "aeba_validity", pass: all, detail: format!("runs where >= 0.95 n honest output the common input: {}", lines.join(", ")) }
}

/// Returns the verdict and the faithful tally_oscillator runs for pairing.
fn agreement(l: &mut Ledger) -> (Verdict, Vec<RunOutput>) {
    let mut lines = Vec::new();
    let mut worst = (f64::INFINITY, String::new());
    let mut paired = Vec::new();
    for (variant, n, byz) in [(Variant::V2, 128, 4), (Variant::V1, 64, 2)] {
        for name in STRATEGIES {
            let cfgs = seeds(1, 40, |seed| ExperimentConfig { variant, ..agreement_cfg(n, byz, seed, name, Inputs::Split) });
            let outs = l.batch(Experiment::Agreement, &cfgs);
            let limit = 4.0 * n as f64;
            let ok = outs.iter().filter(|o| (1.0..=limit).contains(&metric(&o.metrics, "first_agreement"))).count();
            let rate = ok as f64 / outs.len() as f64;
            let label = format!("{variant:?}/n={n}/{name}");
            if rate < worst.0 {
                worst = (rate, label.clone());
            }
            lines.push(format!("{label} {ok}/{}", outs.len()));
            if variant == Variant::V2 && *name == "tally_oscillator" {
                paired = outs;
            }
        }
    }
    let v = Verdict {
        name: "aeba_agreement",
        pass: worst.0 >= AGREEMENT_RATE,
        detail: format!("worst {} at {:.3} (need >= {AGREEMENT_RATE}); seeds reaching >= 0.95 agreement by phase 4n: {}", worst.1, worst.0, lines.join(", ")),
    };
    (v, paired)
}

fn coin_ordering(l: &mut Ledger, faithful: &[RunOutput]) -> Verdict {
    let n = 128;
    let cfgs = seeds(1, 20, |seed| ExperimentConfig {
        coins_upfront: true,
        num_phases: Some(2 * n),
        ..agreement_cfg(n, 4, seed, "tally_oscillator", Inputs::Split)
    });
    let outs = l.batch(Experiment::Agreement, &cfgs);
    let sustained = outs.iter().filter(|o| metric(&o.metrics, "first_agreement") < 0.0).count();
    let paired: Vec<&RunOutput> = faithful.iter().filter(|o| cfgs.iter().any(|c| c.seed == o.header.seed)).collect();
    let converged = paired.iter().filter(|o| (1.0..=4.0 * n as f64).contains(&metric(&o.metrics, "first_agreement"))).count();
    let up = sustained as f64 / outs.len() as f64;
    let faith = if paired.is_empty() { 0.0 } else { converged as f64 / paired.len() as f64 };
    Verdict {
        name: "coin_ordering_necessity",
        pass: up >= OSCILLATION_RATE && faith >= AGREEMENT_RATE,
        detail: format!(
            "upfront coins: {sustained}/{} seeds never reach 0.95 agreement in 2n = {} phases (need >= {OSCILLATION_RATE}); same seeds with faithful ordering: {converged}/{} converge by 4n (need >= {AGREEMENT_RATE})",
            outs.len(),
            2 * n,
            paired.len()
        ),
    }
}

fn determinism(l: &Ledger) -> Verdict {
    let again = par::map(&l.runs, |d| fingerprint(&run(d.experiment, &d.cfg).expect("re-run")));
    let same = l.runs.iter().zip(&again).filter(|(d, (digest, metrics))| &d.digest == digest && &d.metrics == metrics).count();
    Verdict {
        name: "determinism_and_replay",
        pass: same == l.runs.len() && !l.runs.is_empty(),
        detail: format!("{same}/{} runs re-executed with identical transcript digests and metrics", l.runs.len()),
    }
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |name: &str| wanted.is_empty() || wanted.iter().any(|w| w == name);
    let mut l = Ledger { runs: Vec::new() };
    let mut verdicts = Vec::new();
    let mut report = |v: Verdict, started: Instant| {
        println!("{} {}: {} [{:.0}s]", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail, started.elapsed().as_secs_f64());
        verdicts.push(v.pass);
    };

    macro_rules! criterion {
        ($name:literal, $body:expr) => {
            if want($name) {
                let t = Instant::now();
                let v: Verdict = $body;
                report(v, t);
            }
        };
    }

    criterion!("walk_mixing", walk_mixing(&mut l));
    criterion!("good_token_containment", containment(&mut l));
    let mut v2 = Vec::new();
    if want("aerid_v1_correctness") {
        let t = Instant::now();
        report(aerid_v1(&mut l), t);
    }
    if want("aerid_v2_low_congestion") || want("token_growth") {
        let t = Instant::now();
        v2 = aerid_v2_runs(&mut l);
        if want("aerid_v2_low_congestion") {
            report(decode_verdict("aerid_v2_low_congestion", &v2), t);
        }
    }
    criterion!("rank_uniqueness", rank_uniqueness());
    let mut coins = Vec::new();
    if want("coin_good_phase_soundness") || want("filter_soundness") || want("token_growth") {
        let t = Instant::now();
        coins = coin_runs(&mut l);
        if want("coin_good_phase_soundness") {
            report(coin_good_phases(&coins), t);
        }
    }
    criterion!("filter_soundness", filter_soundness(&coins));
    criterion!("aeba_validity", validity(&mut l));
    let mut faithful = Vec::new();
    if want("aeba_agreement") || want("coin_ordering_necessity") {
        let t = Instant::now();
        let (v, paired) = agreement(&mut l);
        faithful = paired;
        if want("aeba_agreement") {
            report(v, t);
        }
    }
    criterion!("coin_ordering_necessity", coin_ordering(&mut l, &faithful));
    criterion!("token_growth", token_growth(&l, &v2.iter().chain(&coins).chain(&faithful).collect::<Vec<_>>()));
    criterion!("blacklisting_exactness", blacklisting(&mut l));
    criterion!("determinism_and_replay", determinism(&l));

    let failed = verdicts.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
