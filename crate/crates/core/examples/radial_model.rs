//! The radial view of a deployment: providers as axes, round-trip latency
//! from the user's equipment as radius, units as node size, tier as shade.
//!
//! `cargo run --example radial_model [-- path/to/config.json [at_ms]]`

use std::io::Write;
use std::path::PathBuf;

use blipsim::harness::{build_world, export_radial, load_config, RadialFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/radial-providers.json")));
    let cfg = load_config(&path)?;
    let at: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.0);
    let mut world = build_world(&cfg)?;
    world.run_until(at);
    let model = world.radial_now();
    for n in &model.nodes {
        eprintln!(
            "{:>2} {:<10} {:<9} {:>6.1} ms {:>2} units",
            n.provider_axis_index,
            n.stamp_id,
            n.tier.as_str(),
            n.radius_ms,
            n.size_units
        );
    }
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    std::io::stdout().write_all(&export_radial(&model, RadialFormat::Dot))?;
    Ok(())
}
