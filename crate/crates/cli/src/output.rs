//! On-disk layout: `<out>/<config_hash>/<seed>/{transcript.jsonl|bin, metrics.json, trace.csv}`
//! plus `<out>/summary.csv` for multi-run commands.

use byzwalk::config::TranscriptFormat;
use byzwalk::experiments::RunOutput;
use byzwalk::metrics::{MetricsReport, Summary};
use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub fn transcript_name(format: TranscriptFormat) -> &'static str {
    match format {
        TranscriptFormat::Jsonl => "transcript.jsonl",
        TranscriptFormat::Binary => "transcript.bin",
    }
}

pub fn run_dir(out: &Path, hash: &str, seed: u64) -> PathBuf {
    out.join(hash).join(seed.to_string())
}

pub fn transcript_bytes(run: &RunOutput) -> byzwalk::error::Result<Vec<u8>> {
    let mut buf = Vec::new();
    run.transcript.write(run.header.config.transcript_format, &mut buf)?;
    Ok(buf)
}

pub fn metrics_bytes(m: &MetricsReport) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn write_run(out: &Path, run: &RunOutput) -> std::io::Result<PathBuf> {
    let dir = run_dir(out, &run.header.config_hash, run.header.seed);
    fs::create_dir_all(&dir)?;
    let format = run.header.config.transcript_format;
    let f = BufWriter::new(fs::File::create(dir.join(transcript_name(format)))?);
    run.transcript.write(format, f).map_err(std::io::Error::other)?;
    fs::write(dir.join("metrics.json"), metrics_bytes(&run.metrics))?;
    fs::write(dir.join("trace.csv"), run.trace_csv())?;
    Ok(dir)
}

/// `config_hash,metric,count,mean,sd,min,max`, one row per metric per config.
pub fn summary_csv(groups: &BTreeMap<String, BTreeMap<String, Summary>>) -> String {
    let mut s = String::from("config_hash,metric,count,mean,sd,min,max\n");
    for (hash, metrics) in groups {
        for (k, v) in metrics {
            s.push_str(&format!("{hash},{k},{},{},{},{},{}\n", v.count, v.mean, v.sd(), v.min, v.max));
        }
    }
    s
}
