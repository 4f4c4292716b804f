//! One workload rerun under several boot and lifetime profiles.
//!
//! `cargo run --example baselines [-- path/to/config.json]`

use std::path::PathBuf;

use blipsim::harness::{compare_baselines, load_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/baselines.json")));
    let cfg = load_config(&path)?;
    let table = compare_baselines(&cfg)?;
    println!(
        "{:<10} {:>10} {:>10} {:>14} {:>8} {:>6}",
        "profile", "boot ms", "ratio", "first cold ms", "restarts", "ok"
    );
    for r in &table.rows {
        println!(
            "{:<10} {:>10} {:>10} {:>14} {:>8} {:>6}",
            r.profile,
            r.boot_time_ms,
            r.cold_start_ratio.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            r.first_cold_latency_ms
                .map(|x| x.to_string())
                .unwrap_or_else(|| "-".into()),
            r.forced_restarts,
            r.ok
        );
    }
    println!("identical workload across profiles: {}", table.workload_identical);
    Ok(())
}
