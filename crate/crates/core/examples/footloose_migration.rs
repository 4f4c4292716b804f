//! Placement pulling an instance from the Core to the stamp where its demand
//! enters.
//!
//! `cargo run --example footloose_migration [-- path/to/config.json]`

use std::path::PathBuf;

use blipsim::harness::{load_config, run_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/scenarios/footloose-migration.json"
        ))
    });
    let cfg = load_config(&path)?;
    let run = run_scenario(&cfg)?;
    for tick in &run.world.metrics().placement {
        let hosts: Vec<String> = tick
            .assignment
            .iter()
            .map(|(svc, at)| format!("{svc}@{}", at.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+")))
            .collect();
        let moves: Vec<String> = tick
            .actions
            .iter()
            .map(|a| {
                format!(
                    "{} {}->{} ({:.0}%)",
                    a.service_id,
                    a.from_stamp,
                    a.to_stamp,
                    100.0 * a.relative_gain
                )
            })
            .collect();
        println!(
            "t={:>6} cost={:>8} {} {}",
            tick.at,
            tick.cost.map(|c| format!("{c:.1}")).unwrap_or_else(|| "-".into()),
            hosts.join(" "),
            moves.join(", ")
        );
    }
    let r = &run.report;
    println!(
        "{} requests, {} migrations, final cost {:?}, p50 {:?} ms",
        r.requests.len(),
        r.migrations,
        r.final_assignment_cost,
        r.latency.map(|p| p.p50)
    );
    Ok(())
}
