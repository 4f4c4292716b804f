//! Command-line front end for scenario files.
//!
//! Exit codes: 0 on success, 1 when the config (or `BLIPSIM_SEED`) is
//! invalid, 2 on any other failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use blipsim::harness::{
    build_world, compare_baselines, export_metrics, export_radial, load_config, run_scenario, BaselineError, LoadError,
    MetricsFormat, RadialFormat, ScenarioConfig,
};
use blipsim::placement::RadialModel;
use blipsim::simnet::export_trace;

#[derive(Parser)]
#[command(name = "blipsim", version, about = "Deterministic edge orchestration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a scenario config.
    Validate { config: PathBuf },
    /// Run a scenario and write metrics, trace and radial files.
    Run {
        config: PathBuf,
        /// Overrides the config seed and BLIPSIM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Independent runs with seeds seed, seed+1, ...; each in out/run-<k>.
        #[arg(long, default_value_t = 1)]
        runs: u32,
    },
    /// Print the radial model at a point in simulated time.
    Radial {
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        at: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rerun the workload under every baseline profile.
    Baselines {
        config: PathBuf,
        /// Print the comparison as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => Failure::Runtime(e.to_string()),
            LoadError::Invalid(_) | LoadError::BadSeed(_) => Failure::Invalid(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct Snapshot<'a> {
    at_ms: f64,
    model: &'a RadialModel,
}

fn write_outputs(cfg: &ScenarioConfig, dir: &Path) -> Result<String, Failure> {
    let run = run_scenario(cfg).map_err(runtime)?;
    fs::create_dir_all(dir).map_err(runtime)?;
    let put = |name: &str, bytes: &[u8]| fs::write(dir.join(name), bytes).map_err(runtime);
    put("metrics.jsonl", &export_metrics(&run.report, MetricsFormat::Jsonl))?;
    put("metrics.csv", &export_metrics(&run.report, MetricsFormat::Csv))?;
    put("trace.log", export_trace(&run.trace).as_bytes())?;
    let last = run
        .radial
        .last()
        .map(|(_, m)| m.clone())
        .unwrap_or_else(|| run.world.radial_now());
    put("radial.json", &export_radial(&last, RadialFormat::Json))?;
    put("radial.dot", &export_radial(&last, RadialFormat::Dot))?;
    let mut snaps = Vec::new();
    for (at_ms, model) in &run.radial {
        serde_json::to_writer(&mut snaps, &Snapshot { at_ms: *at_ms, model }).map_err(runtime)?;
        snaps.push(b'\n');
    }
    put("radial-snapshots.jsonl", &snaps)?;
    let r = &run.report;
    Ok(format!(
        "{}: seed {} requests {} ok {} failed {} p50 {} ms, cold starts {}, migrations {}, trace {}",
        dir.display(),
        r.seed,
        r.requests.len(),
        r.ok,
        r.failed,
        r.latency.map(|p| p.p50.to_string()).unwrap_or_else(|| "-".into()),
        r.cold_starts,
        r.migrations,
        r.trace_hash
    ))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => {
            let cfg = load(&config, None)?;
            println!(
                "{}: ok ({} stamps, {} links, {} services, {} streams)",
                cfg.name,
                cfg.topology.stamps.len(),
                cfg.topology.links.len(),
                cfg.services.len(),
                cfg.workload.len()
            );
        }
        Command::Run {
            config,
            seed,
            out,
            runs,
        } => {
            let base = load(&config, seed)?;
            if runs == 0 {
                return Err(Failure::Invalid("--runs must be at least 1".into()));
            }
            let lines = if runs == 1 {
                vec![write_outputs(&base, &out)]
            } else {
                (0..runs)
                    .into_par_iter()
                    .map(|k| {
                        let mut cfg = base.clone();
                        cfg.seed = base.seed.wrapping_add(k as u64);
                        write_outputs(&cfg, &out.join(format!("run-{k}")))
                    })
                    .collect()
            };
            for line in lines {
                println!("{}", line?);
            }
        }
        Command::Radial {
            config,
            at,
            format,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            if !(at >= 0.0 && at.is_finite()) {
                return Err(Failure::Invalid(format!("--at {at} must be a finite time >= 0")));
            }
            let mut world = build_world(&cfg).map_err(runtime)?;
            world.run_until(at);
            let format = match format {
                Format::Json => RadialFormat::Json,
                Format::Dot => RadialFormat::Dot,
            };
            print!(
                "{}",
                String::from_utf8_lossy(&export_radial(&world.radial_now(), format))
            );
        }
        Command::Baselines { config, json } => {
            let cfg = load(&config, None)?;
            let table = compare_baselines(&cfg).map_err(|e| match e {
                BaselineError::NoBaselines => Failure::Invalid(e.to_string()),
                BaselineError::Run(..) => runtime(e),
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table).map_err(runtime)?);
                return Ok(());
            }
            println!("profile\tboot_ms\tlifetime_ms\tratio\tfirst_cold_ms\tcold_starts\tforced_restarts\tok\tfailed");
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            for r in &table.rows {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.profile,
                    r.boot_time_ms,
                    opt(r.max_lifetime_ms),
                    opt(r.cold_start_ratio),
                    opt(r.first_cold_latency_ms),
                    r.cold_starts,
                    r.forced_restarts,
                    r.ok,
                    r.failed
                );
            }
            println!(
                "reference {}; identical workload: {}",
                table.reference, table.workload_identical
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("invalid: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
