//! Both sides of a partition keep serving; state converges after the heal.
//!
//! `cargo run --example partition_heal [-- path/to/config.json]`

use std::path::PathBuf;

use blipsim::harness::{build_world, load_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/partition-heal.json")));
    let cfg = load_config(&path)?;
    let mut world = build_world(&cfg)?;
    let part = &cfg.partitions[0];
    let heal = part.heal_at_ms.unwrap_or(cfg.duration_ms);

    world.run_until(part.at_ms + 1.0);
    println!("t={} partitioned: {}", world.now(), world.partitioned());
    world.run_until(heal - 1.0);
    println!(
        "t={} stores converged: {}, catalogs converged: {}",
        world.now(),
        world.stores_converged(),
        world.catalogs_converged()
    );
    world.run_until(heal + cfg.timers.gossip_ms);
    println!(
        "t={} stores converged: {}, catalogs converged: {}",
        world.now(),
        world.stores_converged(),
        world.catalogs_converged()
    );
    println!("successes per subnet during the partition:");
    for (stamp, n) in &world.metrics().subnet_success {
        println!("  {stamp}: {n}");
    }
    Ok(())
}
