//! A single stamp's locator choosing between a local instance, a fresh
//! spawn, and a remote stamp, then the instance lifecycle through idle
//! reaping.
//!
//! `cargo run --example stamp_locator`

use blipsim::ids::StampId;
use blipsim::stamp::{RoutingDecision, ServiceSpec, StampState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let here = StampId::from("bbu");
    let cloud = StampId::from("cloud");
    // 10 ms round trip to the cloud from anywhere.
    let oracle = |_: &StampId, to: &StampId| (to == &StampId::from("cloud")).then_some(10.0);

    let mut bbu = StampState::new(here.clone(), 2);
    let mut spec = ServiceSpec::new("lights", 30.0);
    spec.idle_timeout_ms = 1000.0;

    // Only the cloud hosts the service and this stamp has no spec: route there.
    bbu.catalog.note_location(&spec.id, &cloud, 0.0);
    println!(
        "t=0    no spec here      -> {:?}",
        bbu.external_request(&spec.id, 0.0, &oracle)
    );

    // With the service spec cached, a 30 ms boot still loses to a 10 ms round trip.
    bbu.catalog.insert_spec(spec.clone());
    println!(
        "t=0    spec cached       -> {:?}",
        bbu.external_request(&spec.id, 0.0, &oracle)
    );

    // A 5 ms boot wins.
    spec.boot_time_ms = 5.0;
    spec.version += 1;
    bbu.catalog.insert_spec(spec.clone());
    let decision = bbu.external_request(&spec.id, 0.0, &oracle);
    println!("t=0    5 ms boot         -> {decision:?}");
    let RoutingDecision::SpawnLocal(s) = decision else {
        return Ok(());
    };
    let inst = bbu.jit_spawn(&s, 0.0)?;
    bbu.enqueue(&inst.instance_id, 0.0)?;
    bbu.mark_ready(&inst.instance_id, inst.ready_at)?;
    bbu.complete(&inst.instance_id, inst.ready_at)?;
    println!(
        "t={:<4} first request done, {} of 2 units used",
        inst.ready_at,
        bbu.used_capacity()
    );

    println!(
        "t=100  warm instance     -> {:?}",
        bbu.external_request(&spec.id, 100.0, &oracle)
    );
    bbu.complete(&inst.instance_id, 100.0)?;

    let reaped = bbu.reap_idle(1200.0);
    println!("t=1200 reaped {reaped:?}, {} units used", bbu.used_capacity());
    if let Some(rec) = bbu.instance(&inst.instance_id) {
        println!("lifecycle: {:?}", rec.history);
    }
    Ok(())
}
