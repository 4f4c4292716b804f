//! Shared strategies, property checks and independent oracles for the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use blipsim::harness::{load_config, ScenarioConfig};
use blipsim::simnet::statelog::{merge_state_logs, LogPayload, StateLogEntry};
use blipsim::stamp::*;
use blipsim::topology::NetworkTopology;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Checked = Result<(), TestCaseError>;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn scenario(name: &str) -> ScenarioConfig {
    load_config(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn bundled_scenarios() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenario_path(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

/// Round trip between every pair of stamps by Floyd-Warshall over the
/// config's links, skipping links listed in `down`. Missing entries are
/// unreachable pairs.
pub fn rtt_oracle(topo: &NetworkTopology, down: &[(StampId, StampId)]) -> BTreeMap<(StampId, StampId), f64> {
    let ids: Vec<StampId> = topo.stamps.iter().map(|s| s.id.clone()).collect();
    let n = ids.len();
    let idx = |s: &StampId| ids.iter().position(|x| x == s).unwrap();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for l in &topo.links {
        let cut = down
            .iter()
            .any(|(a, b)| (*a == l.a && *b == l.b) || (*a == l.b && *b == l.a));
        if !l.up || cut {
            continue;
        }
        let (i, j) = (idx(&l.a), idx(&l.b));
        d[i][j] = d[i][j].min(l.latency_ms);
        d[j][i] = d[j][i].min(l.latency_ms);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if d[i][j].is_finite() {
                out.insert((ids[i].clone(), ids[j].clone()), 2.0 * d[i][j]);
            }
        }
    }
    out
}

/// Connected components by breadth-first search, skipping `down` links.
pub fn components(topo: &NetworkTopology, down: &[(StampId, StampId)]) -> Vec<BTreeSet<StampId>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in &topo.stamps {
        if seen.contains(&s.id) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut q = VecDeque::from([s.id.clone()]);
        while let Some(x) = q.pop_front() {
            if !comp.insert(x.clone()) {
                continue;
            }
            for l in &topo.links {
                let cut = down
                    .iter()
                    .any(|(a, b)| (*a == l.a && *b == l.b) || (*a == l.b && *b == l.a));
                if cut || !l.up {
                    continue;
                }
                if l.a == x {
                    q.push_back(l.b.clone());
                } else if l.b == x {
                    q.push_back(l.a.clone());
                }
            }
        }
        seen.extend(comp.iter().cloned());
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug)]
pub enum Op {
    Request { service: usize, dt: f64 },
    Spawn { service: usize },
    Ready { pick: usize },
    Complete { pick: usize },
    Drain { pick: usize },
    Reap { dt: f64 },
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..3, 0.0..50.0f64).prop_map(|(service, dt)| Op::Request { service, dt }),
        (0usize..3).prop_map(|service| Op::Spawn { service }),
        any::<usize>().prop_map(|pick| Op::Ready { pick }),
        any::<usize>().prop_map(|pick| Op::Complete { pick }),
        any::<usize>().prop_map(|pick| Op::Drain { pick }),
        (0.0..2000.0f64).prop_map(|dt| Op::Reap { dt }),
    ]
}

pub fn specs() -> Vec<ServiceSpec> {
    (0..3)
        .map(|i| {
            let mut s = ServiceSpec::new(format!("svc{i}"), 10.0 * i as f64);
            s.resource_units = i as u32 + 1;
            s.idle_timeout_ms = 300.0 + 200.0 * i as f64;
            s
        })
        .collect()
}

pub fn legal_history(h: &[InstanceState]) -> bool {
    h.first() == Some(&InstanceState::Provisioning) && h.windows(2).all(|w| w[0].can_become(w[1]))
}

/// Random stamp operations never exceed capacity and every instance's
/// history follows the lifecycle graph.
pub fn check_capacity_and_lifecycle(capacity: u32, ops: Vec<Op>) -> Checked {
    let specs = specs();
    let mut s = StampState::new("st", capacity);
    for sp in &specs {
        s.catalog.insert_spec(sp.clone());
    }
    let oracle = |_: &StampId, _: &StampId| None;
    let mut now = 0.0;
    let mut booting: Vec<InstanceId> = Vec::new();
    let mut busy: Vec<InstanceId> = Vec::new();
    for o in ops {
        match o {
            Op::Request { service, dt } => {
                now += dt;
                let req = ServiceRequest::internal(specs[service].id.clone());
                match s.handle_request(&req, now, &oracle) {
                    RoutingDecision::RouteLocal(id) => busy.push(id),
                    RoutingDecision::SpawnLocal(spec) => {
                        let rec = s.jit_spawn(&spec, now).expect("locator checked capacity");
                        s.enqueue(&rec.instance_id, now).unwrap();
                        booting.push(rec.instance_id.clone());
                        busy.push(rec.instance_id);
                    }
                    RoutingDecision::RouteRemote(_) => prop_assert!(false, "no peers are reachable"),
                    RoutingDecision::Fail(_) => {}
                }
            }
            Op::Spawn { service } => {
                if let Ok(rec) = s.jit_spawn(&specs[service], now) {
                    booting.push(rec.instance_id);
                }
            }
            Op::Ready { pick } if !booting.is_empty() => {
                let id = booting.remove(pick % booting.len());
                s.mark_ready(&id, now).unwrap();
            }
            Op::Complete { pick } if !busy.is_empty() => {
                let idx = pick % busy.len();
                let id = busy[idx].clone();
                // only requests on running instances can finish
                if s.instance(&id).unwrap().state == InstanceState::Running {
                    busy.remove(idx);
                    s.complete(&id, now).unwrap();
                }
            }
            Op::Drain { pick } => {
                let live: Vec<_> = s.live_instances().map(|i| i.instance_id.clone()).collect();
                if !live.is_empty() {
                    s.drain(&live[pick % live.len()]).unwrap();
                }
            }
            Op::Reap { dt } => {
                now += dt;
                s.reap_idle(now);
            }
            _ => {}
        }
        prop_assert!(s.used_capacity() <= capacity);
        for inst in s.instances() {
            prop_assert!(legal_history(&inst.history), "{:?}", inst.history);
            if matches!(inst.state, InstanceState::Idle | InstanceState::Terminated) {
                prop_assert_eq!(inst.in_flight, 0);
            }
            prop_assert_eq!(
                inst.ready_at,
                inst.spawned_at + specs.iter().find(|x| x.id == inst.service_id).unwrap().boot_time_ms
            );
        }
    }
    Ok(())
}

pub fn catalog() -> impl Strategy<Value = ServiceCatalog> {
    // content is a function of (id, version), as published specs are
    let spec = (0usize..4, 1u32..4).prop_map(|(i, v)| {
        let mut s = ServiceSpec::new(format!("s{i}"), (i as u32 * 7 + v) as f64);
        s.version = v;
        s
    });
    let loc = (0usize..4, 0usize..4, 0u32..100);
    (prop::collection::vec(spec, 0..6), prop::collection::vec(loc, 0..6)).prop_map(|(specs, locs)| {
        let mut c = ServiceCatalog::new();
        for s in specs {
            c.insert_spec(s);
        }
        for (svc, st, t) in locs {
            c.note_location(&format!("s{svc}").into(), &format!("st{st}").into(), t as f64);
        }
        c
    })
}

pub fn merged(a: &ServiceCatalog, b: &ServiceCatalog) -> ServiceCatalog {
    let mut out = a.clone();
    out.merge(b);
    out
}

/// Merge is commutative, associative and idempotent.
pub fn check_catalog_laws(a: ServiceCatalog, b: ServiceCatalog, c: ServiceCatalog) -> Checked {
    prop_assert_eq!(merged(&a, &b), merged(&b, &a));
    prop_assert_eq!(merged(&merged(&a, &b), &c), merged(&a, &merged(&b, &c)));
    prop_assert_eq!(merged(&merged(&a, &b), &b), merged(&a, &b));
    prop_assert_eq!(merged(&a, &a), a);
    Ok(())
}

/// Per-origin monotone logs built from random writes on a few stamps.
pub fn write_logs() -> impl Strategy<Value = Vec<StampStore>> {
    prop::collection::vec((0usize..3, 0usize..3, any::<u8>(), any::<bool>()), 0..30).prop_map(|writes| {
        let mut stores: Vec<StampStore> = (0..3).map(|i| StampStore::new(format!("st{i}"))).collect();
        for (who, key, val, sync) in writes {
            stores[who].put(&format!("k{key}"), &[val]);
            if sync {
                // occasional partial sync so clocks interleave
                let next = (who + 1) % 3;
                let entries = stores[who].entries_since(&stores[next].version_vector());
                stores[next].merge_entries(&entries).unwrap();
            }
        }
        stores
    })
}

/// Greatest-lamport value per key over a plain list of entries.
pub fn lww_oracle(entries: &[StateLogEntry]) -> BTreeMap<String, Vec<u8>> {
    let mut best: BTreeMap<String, (LamportStamp, Vec<u8>)> = BTreeMap::new();
    for e in entries {
        if let LogPayload::KvWrite { key, value } = &e.payload {
            match best.get(key) {
                Some((at, _)) if *at >= e.lamport => {}
                _ => {
                    best.insert(key.clone(), (e.lamport.clone(), value.clone()));
                }
            }
        }
    }
    best.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

/// Log merge is a commutative, associative, idempotent union in total
/// order.
pub fn check_log_merge_laws(stores: Vec<StampStore>) -> Checked {
    let (a, b, c) = (stores[0].log(), stores[1].log(), stores[2].log());
    let ab = merge_state_logs(a, b).unwrap();
    prop_assert_eq!(&ab, &merge_state_logs(b, a).unwrap());
    prop_assert_eq!(&merge_state_logs(&ab, &ab).unwrap(), &ab);
    prop_assert_eq!(
        merge_state_logs(&ab, c).unwrap(),
        merge_state_logs(a, &merge_state_logs(b, c).unwrap()).unwrap()
    );
    for w in ab.windows(2) {
        prop_assert!((w[0].lamport.counter, &w[0].origin) < (w[1].lamport.counter, &w[1].origin));
    }
    Ok(())
}

/// After everyone has everyone's log, all stores hold the LWW oracle's map.
pub fn check_full_sync(stores: Vec<StampStore>) -> Checked {
    let mut stores = stores;
    let all: Vec<StateLogEntry> = stores.iter().flat_map(|s| s.log().to_vec()).collect();
    let snapshot: Vec<Vec<StateLogEntry>> = stores.iter().map(|s| s.log().to_vec()).collect();
    for s in &mut stores {
        for log in &snapshot {
            s.merge_entries(log).unwrap();
        }
    }
    let oracle = lww_oracle(&all);
    for s in &stores {
        prop_assert!(s.same_contents(&stores[0]));
        let got: BTreeMap<String, Vec<u8>> = s.entries().iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect();
        prop_assert_eq!(&got, &oracle);
    }
    Ok(())
}

/// A small random scenario: a chain of 2 to 4 stamps, 1 to 3 services with
/// random boot times, units and lifetimes, periodic or Poisson streams at
/// random ingresses, and an optional partition of one link.
pub fn small_scenario() -> impl Strategy<Value = ScenarioConfig> {
    let stamps = prop::collection::vec((0u32..5, 1u32..30), 2..5);
    let services = prop::collection::vec((0u32..80, 1u32..4, 50u32..2000, prop::option::of(300u32..3000)), 1..4);
    let streams = prop::collection::vec((0usize..3, 0usize..4, 0u32..2000, 1u32..20, any::<bool>()), 1..4);
    let partition = prop::option::of((0usize..3, 0u32..3000, 1u32..3000));
    (stamps, services, streams, partition, any::<u64>()).prop_map(|(stamps, services, streams, partition, seed)| {
        let n = stamps.len();
        let stamp_json: Vec<_> = stamps
            .iter()
            .enumerate()
            .map(|(i, (cap, _))| serde_json::json!({"id": format!("s{i}"), "provider": "p", "tier": "Edge", "capacity_units": cap}))
            .collect();
        let links: Vec<_> = (1..n)
            .map(|i| serde_json::json!({"a": format!("s{}", i - 1), "b": format!("s{i}"), "latency_ms": stamps[i].1}))
            .collect();
        let svc_json: Vec<_> = services
            .iter()
            .enumerate()
            .map(|(i, (boot, units, idle, life))| {
                let mut v = serde_json::json!({"id": format!("v{i}"), "boot_time_ms": boot, "resource_units": units, "idle_timeout_ms": idle});
                if let Some(l) = life {
                    v["max_lifetime_ms"] = (*l).into();
                }
                v
            })
            .collect();
        let stream_json: Vec<_> = streams
            .iter()
            .enumerate()
            .map(|(i, (svc, ingress, start, rate, poisson))| {
                serde_json::json!({
                    "name": format!("w{i}"),
                    "service": format!("v{}", svc % services.len()),
                    "ingress": format!("s{}", ingress % n),
                    "start_ms": start,
                    "rate_per_s": rate,
                    "arrival": if *poisson { "poisson" } else { "periodic" },
                    "args": "{n}",
                    "writes_key": format!("k{}", i % 2),
                })
            })
            .collect();
        let partitions: Vec<_> = partition
            .filter(|_| n > 1)
            .map(|(l, at, len)| {
                let l = l % (n - 1);
                serde_json::json!({"at_ms": at, "links_down": [[format!("s{l}"), format!("s{}", l + 1)]], "heal_at_ms": at + len})
            })
            .into_iter()
            .collect();
        let doc = serde_json::json!({
            "format_version": 1, "name": "random", "seed": seed, "duration_ms": 4000, "drain_ms": 2000,
            "topology": {"ue_origin": "s0", "stamps": stamp_json, "links": links},
            "services": svc_json,
            "workload": stream_json,
            "partitions": partitions,
            "timers": {"gossip_ms": 500, "placement_ms": 700, "reap_ms": 300, "vivaldi_ms": 100},
            "placement": {"hysteresis": 0.0}
        });
        blipsim::harness::parse_config(&serde_json::to_vec(&doc).unwrap()).expect("generated config is valid")
    })
}

/// Run the scenario in 100 ms steps; at every step each stamp stays within
/// capacity and every instance history is a legal lifecycle path.
pub fn check_sim_capacity(cfg: &ScenarioConfig) -> Checked {
    let mut world = blipsim::harness::build_world(cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut t = 0.0;
    while t < cfg.horizon_ms() {
        t += 100.0;
        world.run_until(t);
        for st in world.stamps().values() {
            prop_assert!(
                st.used_capacity() <= st.capacity_units,
                "{} over capacity at {t}",
                st.id
            );
            for inst in st.instances() {
                prop_assert!(legal_history(&inst.history), "{:?}", inst.history);
            }
        }
    }
    Ok(())
}
