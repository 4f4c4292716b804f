//! Coordinate error on a planar topology, both as all-pairs relaxation and
//! as the simulator's one-random-peer-per-tick sampling.
//!
//! `cargo run --example vivaldi_convergence [-- path/to/config.json]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use blipsim::coordinates::{coordinate_error_stats, relax_all_pairs, VivaldiCoordinate};
use blipsim::harness::{build_world, load_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/scenarios/vivaldi-convergence.json"
        ))
    });
    let cfg = load_config(&path)?;
    let topo = cfg.validated_topology()?;
    let table = topo.latency_table();

    println!("all-pairs relaxation, median relative error:");
    let mut coords: BTreeMap<_, _> = topo
        .stamp_ids()
        .map(|id| (id.clone(), VivaldiCoordinate::default()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for round in (50..=200).step_by(50) {
        relax_all_pairs(&mut coords, &table, 50, &cfg.vivaldi, &mut rng);
        let s = coordinate_error_stats(&coords, &topo)?;
        println!("  round {round:>3}: {:.6}", s.median_relative_error);
    }

    println!("simulator, median relative error:");
    let mut world = build_world(&cfg)?;
    let step = cfg.duration_ms / 4.0;
    for k in 1..=4 {
        world.run_until(step * k as f64);
        let s = coordinate_error_stats(world.coordinates(), &topo)?;
        println!("  t={:>6}: {:.6}", world.now(), s.median_relative_error);
    }
    Ok(())
}
