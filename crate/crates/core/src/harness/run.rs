//! Turning a config into a simulation run and a metrics report.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ArrivalProcess, ConfigErrors, ScenarioConfig};
use crate::coordinates::nearest_rank;
use crate::ids::{ServiceId, StampId};
use crate::latency::GraphTruth;
use crate::placement::{assignment_cost, Assignment, DemandProfile, RadialModel};
use crate::simnet::{
    trace_hash, Arrival, Outcome, PartitionSpec, RequestRecord, SimError, SimSettings, TraceRecord, World,
};

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Workload streams draw from their own ChaCha stream, offset from this.
const WORKLOAD_STREAM_BASE: u64 = 1000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Every client request of the scenario, in stream then time order.
pub fn generate_workload(cfg: &ScenarioConfig) -> Vec<Arrival> {
    let mut out = Vec::new();
    for (i, s) in cfg.workload.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(WORKLOAD_STREAM_BASE + i as u64);
        let origin = s.origin.clone().unwrap_or_else(|| cfg.topology.ue_origin.clone());
        let mut times = Vec::new();
        match s.rate_per_s {
            None => times.extend(std::iter::repeat_n(s.start_ms, s.count.unwrap_or(1) as usize)),
            Some(rate) => {
                let end = s.duration_ms.map_or(cfg.duration_ms, |d| s.start_ms + d);
                let cap = s.count.unwrap_or(u64::MAX);
                let gap = Exp::new(rate / 1000.0).expect("rate checked positive");
                let mut t = s.start_ms;
                if s.arrival == ArrivalProcess::Poisson {
                    t += gap.sample(&mut rng);
                }
                let mut k = 0;
                while t < end && (times.len() as u64) < cap {
                    times.push(t);
                    k += 1;
                    t = match s.arrival {
                        ArrivalProcess::Periodic => s.start_ms + k as f64 * 1000.0 / rate,
                        ArrivalProcess::Poisson => t + gap.sample(&mut rng),
                    };
                }
            }
        }
        for (n, at) in times.into_iter().enumerate() {
            out.push(Arrival {
                at,
                stream: s.name.clone(),
                service: s.service.clone(),
                origin: origin.clone(),
                ingress: s.ingress.clone(),
                method: s.method.clone(),
                args: s.args.replace("{n}", &n.to_string()).into_bytes(),
                writes_key: s.writes_key.clone(),
            });
        }
    }
    out
}

/// FNV-1a 64 over the JSON serialization of the arrivals.
pub fn workload_hash(arrivals: &[Arrival]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&serde_json::to_vec(arrivals).expect("arrivals serialize"));
    h.finish()
}

pub fn sim_settings(cfg: &ScenarioConfig) -> SimSettings {
    SimSettings {
        seed: cfg.seed,
        timers: cfg.timers,
        vivaldi: cfg.vivaldi,
        latency_source: cfg.placement.latency_source,
        weights: cfg.placement.weights.clone(),
        hysteresis: cfg.placement.hysteresis,
        load_aware: cfg.placement.load_aware,
    }
}

/// A world loaded with the config's services, workload and partitions,
/// at time zero.
pub fn build_world(cfg: &ScenarioConfig) -> Result<World, RunError> {
    let topo = cfg.validated_topology()?;
    let services = cfg.services.iter().map(|s| (s.clone(), cfg.cached_at(&s.id))).collect();
    let initial: Assignment = cfg
        .initial_assignment
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
        .collect();
    let mut world = World::new(topo, services, &initial, sim_settings(cfg))?;
    world.add_arrivals(generate_workload(cfg))?;
    for p in &cfg.partitions {
        world.add_partition(PartitionSpec::clone(p))?;
    }
    Ok(world)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Nearest-rank percentiles; `None` for no samples.
pub fn percentiles(samples: &[f64]) -> Option<Percentiles> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Percentiles {
        p50: nearest_rank(&v, 50.0),
        p90: nearest_rank(&v, 90.0),
        p99: nearest_rank(&v, 99.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub requests: Vec<RequestRecord>,
    pub ok: usize,
    pub failed: usize,
    /// Over every terminated request.
    pub latency: Option<Percentiles>,
    pub cold_starts: u64,
    pub migrations: u64,
    /// Lifetime expiries before the scenario's end (drain excluded).
    pub forced_restarts: usize,
    pub replay_hits: u64,
    pub replay_misses: u64,
    pub replay_hit_rate: Option<f64>,
    pub subnet_success: BTreeMap<StampId, u64>,
    /// Graph-truth cost of the assignment at `duration_ms` under the
    /// run's average demand.
    pub final_assignment_cost: Option<f64>,
    /// Hex digests.
    pub trace_hash: String,
    pub workload_hash: String,
}

impl MetricsReport {
    pub fn stream(&self, name: &str) -> impl Iterator<Item = &RequestRecord> + '_ {
        let name = name.to_owned();
        self.requests.iter().filter(move |r| r.stream == name)
    }
}

pub struct ScenarioRun {
    pub report: MetricsReport,
    pub trace: Vec<TraceRecord>,
    pub radial: Vec<(f64, RadialModel)>,
    pub world: World,
}

fn average_demand(arrivals: &[Arrival], duration_ms: f64) -> DemandProfile {
    let mut d = DemandProfile::default();
    for a in arrivals {
        *d.external.entry((a.ingress.clone(), a.service.clone())).or_insert(0.0) += 1000.0 / duration_ms;
    }
    d
}

fn final_cost(world: &World, arrivals: &[Arrival], duration_ms: f64) -> Option<f64> {
    let assignment = world.assignment();
    let mut demand = average_demand(arrivals, duration_ms);
    demand.external.retain(|(_, s), _| assignment.contains_key(s));
    let units: BTreeMap<ServiceId, u32> = world
        .registry()
        .iter()
        .map(|(k, v)| (k.clone(), v.resource_units))
        .collect();
    let table = world.topology().latency_table();
    assignment_cost(
        &assignment,
        &demand,
        &world.settings().weights,
        &units,
        &GraphTruth(&table),
    )
    .ok()
}

/// Run a scenario to `duration_ms + drain_ms` and time out whatever is
/// still open.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    let arrivals = generate_workload(cfg);
    let mut world = build_world(cfg)?;
    world.run_until(cfg.duration_ms);
    let final_assignment_cost = final_cost(&world, &arrivals, cfg.duration_ms);
    world.run_until(cfg.horizon_ms());
    world.close_open_requests();

    let m = world.metrics().clone();
    let mut requests = m.requests.clone();
    requests.sort_by_key(|r| r.id);
    let latencies: Vec<f64> = requests.iter().map(|r| r.latency_ms).collect();
    let ok = requests.iter().filter(|r| r.outcome == Outcome::Ok).count();
    let lookups = m.replay_hits + m.replay_misses;
    let trace = world.trace().to_vec();
    let report = MetricsReport {
        format_version: METRICS_FORMAT_VERSION,
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        ok,
        failed: requests.len() - ok,
        latency: percentiles(&latencies),
        cold_starts: m.cold_starts,
        migrations: m.migrations,
        forced_restarts: m.forced_restarts.iter().filter(|t| **t < cfg.duration_ms).count(),
        replay_hits: m.replay_hits,
        replay_misses: m.replay_misses,
        replay_hit_rate: (lookups > 0).then(|| m.replay_hits as f64 / lookups as f64),
        subnet_success: m.subnet_success.clone(),
        final_assignment_cost,
        trace_hash: format!("{:016x}", trace_hash(&trace)),
        workload_hash: format!("{:016x}", workload_hash(&arrivals)),
        requests,
    };
    Ok(ScenarioRun {
        report,
        trace,
        radial: m.radial,
        world,
    })
}
