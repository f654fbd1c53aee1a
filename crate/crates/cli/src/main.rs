//! `geolab run <experiment> --config <path>`: runs one named experiment and
//! writes `raw.csv`, `summary.json` and a copy of the config into the output
//! directory. Exit code 0 on PASS, 2 on statistical FAIL, 1 on error (with
//! `error.json`).

mod experiments;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use table::Frame;

/// Bumped whenever the CSV or JSON layout changes.
const ARTIFACT_VERSION: u32 = 1;
const WORKERS_ENV: &str = "GEOLAB_WORKERS";

#[derive(Parser)]
#[command(name = "geolab", version, about = "Crossing statistics of geodesics and symbolic U-statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment.
    Run {
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config `out` key, then `out/<experiment>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; also read from GEOLAB_WORKERS.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute the summary of a finished run from its raw CSV and config.
    Summarize { dir: PathBuf },
    /// List the experiment names.
    List,
}

struct Config {
    raw: String,
    experiment: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    params: toml::Table,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    geolab::Error::Config(msg.into()).into()
}

fn load_config(path: &Path) -> Result<Config> {
    let raw = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut doc: toml::Table = raw.parse().map_err(|e: toml::de::Error| config_error(e.message().to_string()))?;
    let experiment = match doc.remove("experiment") {
        Some(toml::Value::String(s)) => Some(s),
        None => None,
        Some(v) => return Err(config_error(format!("experiment must be a string, got {v}"))),
    };
    let seed = match doc.remove("seed") {
        Some(toml::Value::Integer(i)) if i >= 0 => Some(i as u64),
        None => None,
        Some(v) => return Err(config_error(format!("seed must be a nonnegative integer, got {v}"))),
    };
    let out = match doc.remove("out") {
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        None => None,
        Some(v) => return Err(config_error(format!("out must be a string, got {v}"))),
    };
    let params = match doc.remove("params") {
        Some(toml::Value::Table(t)) => t,
        None => toml::Table::new(),
        Some(_) => return Err(config_error("params must be a table")),
    };
    if let Some(k) = doc.keys().next() {
        return Err(config_error(format!("unknown top-level key {k:?}")));
    }
    Ok(Config { raw, experiment, seed, out, params })
}

fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<geolab::Error>() {
        Some(g) => g.kind(),
        None if e.downcast_ref::<std::io::Error>().is_some() => "IoError",
        None => "Error",
    }
}

fn workers(flag: Option<usize>) -> Result<usize> {
    let env = match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            Some(v.parse::<usize>().map_err(|_| config_error(format!("{WORKERS_ENV} must be a count, got {v:?}")))?)
        }
        Err(_) => None,
    };
    let k = flag.or(env).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if k == 0 {
        return Err(config_error("worker count must be positive"));
    }
    Ok(k)
}

fn summary_document(
    experiment: &str,
    cfg_hash: &str,
    seed: u64,
    workers: usize,
    wall: f64,
    o: &experiments::Outcome,
) -> Value {
    json!({
        "experiment": experiment,
        "version": env!("CARGO_PKG_VERSION"),
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": cfg_hash,
        "seed": seed,
        "workers": workers,
        "wall_time_s": wall,
        "verdict": if o.pass { "PASS" } else { "FAIL" },
        "stats": o.stats,
    })
}

fn run(
    experiment: &str,
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    k: Option<usize>,
    out_dir: &mut Option<PathBuf>,
) -> Result<bool> {
    let cfg = load_config(config)?;
    let dir = out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(experiment));
    *out_dir = Some(dir.clone());
    if let Some(named) = &cfg.experiment {
        if named != experiment {
            return Err(config_error(format!("config is for {named:?}, not {experiment:?}")));
        }
    }
    experiments::validate(experiment, &cfg.params)?;
    let seed = seed.or(cfg.seed).ok_or_else(|| config_error("no seed: set `seed` in the config or pass --seed"))?;
    let k = workers(k)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build()?;
    let cfg_hash = hash_hex(cfg.raw.as_bytes());

    let start = Instant::now();
    let table = pool.install(|| experiments::run(experiment, &cfg.params, seed))?;
    let csv = table.to_csv(&[
        ("experiment", experiment.to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("artifact_version", ARTIFACT_VERSION.to_string()),
        ("config_hash", cfg_hash.clone()),
        ("seed", seed.to_string()),
    ])?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("raw.csv"), &csv)?;
    std::fs::write(dir.join("config.toml"), &cfg.raw)?;
    // Summaries read the CSV back, so they are reproducible from it.
    let frame = Frame::read(&dir.join("raw.csv"))?;
    let outcome = pool.install(|| experiments::summarize(experiment, &cfg.params, seed, &frame))?;
    let wall = start.elapsed().as_secs_f64();
    let doc = summary_document(experiment, &cfg_hash, seed, k, wall, &outcome);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    println!("{} {experiment}: {}", if outcome.pass { "PASS" } else { "FAIL" }, dir.join("summary.json").display());
    Ok(outcome.pass)
}

/// Reads `experiment` and `seed` from the CSV preamble.
fn preamble(path: &Path) -> Result<(String, u64)> {
    let text = std::fs::read_to_string(path)?;
    let mut exp = None;
    let mut seed = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line[1..].trim().split_once('=') {
            match k {
                "experiment" => exp = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                _ => {}
            }
        }
    }
    Ok((exp.ok_or_else(|| anyhow!("no experiment in preamble"))?, seed.ok_or_else(|| anyhow!("no seed in preamble"))?))
}

fn summarize(dir: &Path) -> Result<bool> {
    let (experiment, seed) = preamble(&dir.join("raw.csv"))?;
    let cfg = load_config(&dir.join("config.toml"))?;
    let frame = Frame::read(&dir.join("raw.csv"))?;
    let o = experiments::summarize(&experiment, &cfg.params, seed, &frame)?;
    let doc = json!({ "verdict": if o.pass { "PASS" } else { "FAIL" }, "stats": o.stats });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(o.pass)
}

fn report_error(e: &anyhow::Error, experiment: Option<&str>, dir: Option<&Path>) {
    let doc = json!({
        "error": error_kind(e),
        "message": format!("{e:#}"),
        "experiment": experiment,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    eprintln!("{text}");
    if let Some(d) = dir {
        if std::fs::create_dir_all(d).is_ok() {
            let _ = std::fs::write(d.join("error.json"), text + "\n");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for e in experiments::EXPERIMENTS {
                println!("{e}");
            }
            ExitCode::SUCCESS
        }
        Command::Summarize { dir } => match summarize(&dir) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                report_error(&e, None, None);
                ExitCode::from(1)
            }
        },
        Command::Run { experiment, config, seed, out, workers } => {
            let mut dir = None;
            match run(&experiment, &config, seed, out, workers, &mut dir) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(2),
                Err(e) => {
                    // Unknown names never get a directory of their own.
                    let known = experiments::EXPERIMENTS.contains(&experiment.as_str());
                    report_error(&e, Some(&experiment), dir.as_deref().filter(|_| known));
                    ExitCode::from(1)
                }
            }
        }
    }
}
