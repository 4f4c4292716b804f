//! The smart-home light switch over the cloud path and the Blip path.
//!
//! `cargo run --example smart_home [-- path/to/config.json]`

use std::path::PathBuf;

use blipsim::harness::{load_config, run_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/smart-home.json")));
    let cfg = load_config(&path)?;
    let run = run_scenario(&cfg)?;
    let r = &run.report;
    for stream in ["cloud-path", "blip-first", "blip-warm"] {
        let lat: Vec<String> = r.stream(stream).map(|q| format!("{}", q.latency_ms)).collect();
        println!("{stream:>11}: {} ms", lat.join(", "));
    }
    println!(
        "{} requests, {} ok, {} cold starts, replay hits {} / misses {}",
        r.requests.len(),
        r.ok,
        r.cold_starts,
        r.replay_hits,
        r.replay_misses
    );
    if let Some(p) = r.latency {
        println!("latency p50 {} p90 {} p99 {} ms", p.p50, p.p90, p.p99);
    }
    println!("trace hash {}", r.trace_hash);
    Ok(())
}
