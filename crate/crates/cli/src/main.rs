mod output;
mod spec;

use byzwalk::error::SimError;
use byzwalk::experiments::{self, config_hash, Experiment, RunHeader, RunOutput};
use byzwalk::graph::{spectral_profile, write_graph};
use byzwalk::metrics::aggregate;
use byzwalk::par;
use byzwalk::transcript::Transcript;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spec::{ExperimentSpec, SpecError};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "simulate", version, about = "Run byzwalk experiments from a spec file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the graph of each seed and its spectral profile.
    GenGraph(Common),
    RunWalk(Common),
    RunAerid(Common),
    RunCoin(Common),
    RunAgreement(Common),
    /// Cross product of the spec file's sweep axes and seeds; needs `experiment`.
    Sweep(Common),
    /// Re-run from a stored transcript and compare outputs byte for byte.
    Replay {
        transcript: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    spec: PathBuf,
    /// Override a spec field, e.g. `--set n=128` or `--set adversary.name=flooder`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; 0 picks the default.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, env = "SIMULATE_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Failure {
        Failure { code, kind, message: message.into() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Failure {
        let (code, kind) = match e {
            SimError::Config(_) | SimError::GraphGeneration { .. } | SimError::OracleCap { .. } | SimError::CoreTooSmall { .. } | SimError::NotMixing(_) => (2, "config"),
            SimError::BudgetExhausted(_) => (4, "budget"),
            _ => (1, "runtime"),
        };
        Failure::new(code, kind, e.to_string())
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Failure {
        Failure::new(2, "config", e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::new(1, "io", e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message, "exit_code": f.code }));
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenGraph(c) => gen_graph(&c),
        Command::RunWalk(c) => run_many(&c, Some(Experiment::Walk)),
        Command::RunAerid(c) => run_many(&c, Some(Experiment::Aerid)),
        Command::RunCoin(c) => run_many(&c, Some(Experiment::Coin)),
        Command::RunAgreement(c) => run_many(&c, Some(Experiment::Agreement)),
        Command::Sweep(c) => run_many(&c, None),
        Command::Replay { transcript } => replay(&transcript),
    }
}

fn load(c: &Common) -> Result<ExperimentSpec, Failure> {
    let text = fs::read_to_string(&c.spec).map_err(SpecError::from)?;
    Ok(ExperimentSpec::parse(&text, &c.set)?)
}

fn gen_graph(c: &Common) -> Result<(), Failure> {
    let spec = load(c)?;
    let cfgs = spec.expand()?;
    let results = par::with_jobs(c.jobs, || {
        par::map(&cfgs, |cfg| -> Result<PathBuf, Failure> {
            let (g, _) = experiments::instance(cfg)?;
            let profile = spectral_profile(&g, cfg.lazy)?;
            let dir = output::run_dir(&c.out, &config_hash(cfg), cfg.seed);
            fs::create_dir_all(&dir)?;
            let mut buf = Vec::new();
            write_graph(&g, &mut buf)?;
            fs::write(dir.join("graph.txt"), buf)?;
            let report = json!({ "config_hash": config_hash(cfg), "seed": cfg.seed, "profile": profile });
            fs::write(dir.join("spectral.json"), format!("{}\n", serde_json::to_string_pretty(&report).expect("json")))?;
            Ok(dir)
        })
    });
    for (cfg, r) in cfgs.iter().zip(results) {
        let dir = r?;
        println!("{}", json!({ "config_hash": config_hash(cfg), "seed": cfg.seed, "dir": dir }));
    }
    Ok(())
}

fn run_many(c: &Common, forced: Option<Experiment>) -> Result<(), Failure> {
    let spec = load(c)?;
    let exp = forced.or(spec.experiment).ok_or_else(|| Failure::new(2, "config", "sweep needs `experiment` in the spec file"))?;
    let cfgs = spec.expand()?;
    let results = par::with_jobs(c.jobs, || {
        par::map(&cfgs, |cfg| -> Result<(RunOutput, PathBuf), Failure> {
            let run = experiments::run(exp, cfg)?;
            let dir = output::write_run(&c.out, &run)?;
            Ok((run, dir))
        })
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    let mut gate_failures = 0;
    for (run, dir) in &runs {
        let failed: Vec<&str> = spec
            .gates
            .iter()
            .filter(|(k, g)| !run.metrics.get(k).is_some_and(|x| g.admits(x)))
            .map(|(k, _)| k.as_str())
            .collect();
        gate_failures += failed.len();
        println!("{}", json!({ "config_hash": run.header.config_hash, "seed": run.header.seed, "dir": dir, "gate_failures": failed }));
    }
    let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (run, _) in &runs {
        groups.entry(run.header.config_hash.clone()).or_default().push(&run.metrics);
    }
    let mut summaries = BTreeMap::new();
    for (hash, reports) in groups {
        summaries.insert(hash, aggregate(reports)?);
    }
    fs::create_dir_all(&c.out)?;
    fs::write(c.out.join("summary.csv"), output::summary_csv(&summaries))?;
    // Resolved spec with overrides applied.
    fs::write(c.out.join("spec.toml"), spec.to_toml())?;
    if gate_failures > 0 {
        return Err(Failure::new(3, "gate", format!("{gate_failures} gate check(s) failed")));
    }
    Ok(())
}

fn replay(path: &Path) -> Result<(), Failure> {
    let stored = fs::read(path)?;
    let events = if path.extension().is_some_and(|e| e == "bin") {
        Transcript::read_binary(&stored)?
    } else {
        Transcript::read_jsonl(stored.as_slice())?
    };
    let header = RunHeader::from_transcript(&events)?;
    let run = experiments::run(header.experiment, &header.config)?;
    let transcript_match = output::transcript_bytes(&run)? == stored;
    let metrics_path = path.with_file_name("metrics.json");
    let metrics_match = match fs::read(&metrics_path) {
        Ok(bytes) => Some(bytes == output::metrics_bytes(&run.metrics)),
        Err(_) => None,
    };
    println!(
        "{}",
        json!({ "config_hash": header.config_hash, "seed": header.seed, "transcript_match": transcript_match, "metrics_match": metrics_match })
    );
    if !transcript_match || metrics_match == Some(false) {
        return Err(Failure::new(3, "replay_mismatch", format!("replay of {} differs from stored output", path.display())));
    }
    Ok(())
}
