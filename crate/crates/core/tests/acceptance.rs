//! Acceptance suite: eight criteria over the bundled scenarios, each printed
//! as one PASS or FAIL line. Runs without the libtest harness so the lines
//! always show; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use blipsim::coordinates::{coordinate_error_stats, relax_all_pairs, VivaldiCoordinate};
use blipsim::harness::baselines::with_profile;
use blipsim::harness::{build_world, compare_baselines, export_metrics, run_scenario, MetricsFormat, ScenarioConfig};
use blipsim::simnet::statelog::{LogPayload, StateLogEntry};
use blipsim::simnet::Outcome;
use blipsim::stamp::ServiceKind;
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
/// Name, check, and wall-clock budget.
type Criterion = (&'static str, fn() -> Verdict, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Boot constants: workload element, unikernel, VM, slow VM, FaaS lifetime.
const WE_BOOT_MS: f64 = 30.0;
const JITSU_BOOT_MS: f64 = 23.0;
const VM_BOOT_MS: f64 = 180_000.0;
const AZURE_VM_BOOT_MS: f64 = 390_000.0;
const FAAS_LIFETIME_MS: f64 = 60_000.0;

fn first_cold(cfg: &ScenarioConfig) -> Result<(f64, f64), String> {
    let run = run_scenario(cfg).map_err(|e| e.to_string())?;
    let q = run
        .report
        .requests
        .iter()
        .filter(|q| q.cold && q.outcome == Outcome::Ok)
        .min_by(|a, b| a.issued_at.total_cmp(&b.issued_at))
        .ok_or("no cold request")?;
    let rtt = rtt_oracle(&cfg.topology, &[])[&(q.origin.clone(), q.ingress.clone())];
    Ok((q.latency_ms, rtt))
}

fn jit_boot() -> Verdict {
    let cfg = scenario("smart-home.json");
    let b = cfg.baselines.as_ref().ok_or("no baselines")?;
    let profile = |name: &str| {
        b.profiles
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .ok_or(format!("no {name}"))
    };
    let (we, jitsu) = (profile("we")?, profile("jitsu")?);
    ensure!(
        we.boot_time_ms == WE_BOOT_MS && jitsu.boot_time_ms == JITSU_BOOT_MS,
        "bundled boot times changed"
    );
    let (we_lat, rtt) = first_cold(&with_profile(&cfg, &we))?;
    let (jitsu_lat, rtt2) = first_cold(&with_profile(&cfg, &jitsu))?;
    ensure!(
        we_lat == rtt + WE_BOOT_MS,
        "WE first cold {we_lat} != {rtt} + {WE_BOOT_MS}"
    );
    ensure!(
        jitsu_lat == rtt2 + JITSU_BOOT_MS,
        "Jitsu first cold {jitsu_lat} != {rtt2} + {JITSU_BOOT_MS}"
    );
    Ok(format!(
        "WE {we_lat} = {rtt} + 30 ms, Jitsu {jitsu_lat} = {rtt2} + 23 ms"
    ))
}

fn baseline_contrast() -> Verdict {
    let cfg = scenario("baselines.json");
    let t = compare_baselines(&cfg).map_err(|e| e.to_string())?;
    let row = |n: &str| t.row(n).ok_or(format!("no row {n}"));
    let (we, vm, azure, faas) = (row("we")?, row("vm")?, row("azure-vm")?, row("faas")?);
    ensure!(we.boot_time_ms == WE_BOOT_MS, "reference boot {}", we.boot_time_ms);
    ensure!(
        vm.cold_start_ratio == Some(VM_BOOT_MS / WE_BOOT_MS),
        "VM ratio {:?}",
        vm.cold_start_ratio
    );
    ensure!(
        vm.cold_start_ratio == Some(6000.0),
        "VM ratio {:?}",
        vm.cold_start_ratio
    );
    ensure!(
        azure.cold_start_ratio == Some(AZURE_VM_BOOT_MS / WE_BOOT_MS),
        "Azure ratio {:?}",
        azure.cold_start_ratio
    );
    ensure!(
        azure.cold_start_ratio == Some(13000.0),
        "Azure ratio {:?}",
        azure.cold_start_ratio
    );
    ensure!(
        we.cold_start_ratio == Some(1.0),
        "reference ratio {:?}",
        we.cold_start_ratio
    );
    ensure!(
        faas.max_lifetime_ms == Some(FAAS_LIFETIME_MS),
        "FaaS lifetime {:?}",
        faas.max_lifetime_ms
    );
    // A flow of `duration` ms restarts at every lifetime boundary but the last.
    let expected = (cfg.duration_ms / FAAS_LIFETIME_MS).ceil() as usize - 1;
    ensure!(faas.forced_restarts >= 4, "FaaS restarts {}", faas.forced_restarts);
    ensure!(
        faas.forced_restarts == expected,
        "FaaS restarts {} != {expected}",
        faas.forced_restarts
    );
    ensure!(t.workload_identical, "workload differs between profiles");
    ensure!(t.rows.iter().all(|r| r.failed == 0), "failed requests");
    Ok(format!(
        "VM {}x, Azure {}x, FaaS {} forced restarts over {} ms",
        vm.cold_start_ratio.unwrap(),
        azure.cold_start_ratio.unwrap(),
        faas.forced_restarts,
        cfg.duration_ms
    ))
}

fn smart_home_ordering() -> Verdict {
    let base = scenario("smart-home.json");
    let rtt = rtt_oracle(&base.topology, &[]);
    let gateway = base
        .services
        .iter()
        .find(|s| s.kind == ServiceKind::GatewayProxy)
        .ok_or("no gateway")?;
    let stream = |n: &str| {
        base.workload
            .iter()
            .find(|w| w.name == n)
            .ok_or(format!("no stream {n}"))
    };
    let (cloud_s, warm_s) = (stream("cloud-path")?, stream("blip-warm")?);
    let origin = base.topology.ue_origin.clone();
    let cloud_host = base.initial_assignment[&cloud_s.service]
        .first()
        .ok_or("cloud not placed")?;
    let want_cloud = rtt[&(origin.clone(), cloud_host.clone())];
    let want_warm = rtt[&(origin.clone(), warm_s.ingress.clone())];
    let want_cold = want_warm + gateway.boot_time_ms;
    ensure!(
        (want_warm, want_cold, want_cloud) == (10.0, 40.0, 110.0),
        "oracle {want_warm} {want_cold} {want_cloud}"
    );
    for seed in 0..20u64 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let r = run_scenario(&cfg).map_err(|e| e.to_string())?.report;
        let lat = |n: &str| r.stream(n).map(|q| q.latency_ms).collect::<Vec<_>>();
        let (cloud, cold, warm) = (lat("cloud-path"), lat("blip-first"), lat("blip-warm"));
        ensure!(cloud == [want_cloud], "seed {seed}: cloud {cloud:?}");
        ensure!(cold == [want_cold], "seed {seed}: cold {cold:?}");
        ensure!(
            !warm.is_empty() && warm.iter().all(|w| *w == want_warm),
            "seed {seed}: warm {warm:?}"
        );
        ensure!(warm[0] < cold[0] && cold[0] < cloud[0], "seed {seed}: ordering");
    }
    Ok(format!("{want_warm} < {want_cold} < {want_cloud} ms on 20 seeds"))
}

fn footloose() -> Verdict {
    let cfg = scenario("footloose-migration.json");
    let mut world = build_world(&cfg).map_err(|e| e.to_string())?;
    world.run_until(cfg.duration_ms);
    let ticks = &world.metrics().placement;
    let first_move = ticks.iter().position(|t| !t.actions.is_empty()).ok_or("never moved")?;
    ensure!(first_move < 3, "first move on tick {}", first_move + 1);
    let costs: Vec<f64> = ticks
        .iter()
        .map(|t| t.cost.ok_or("tick without cost"))
        .collect::<Result<_, _>>()?;
    for w in costs.windows(2) {
        ensure!(w[1] <= w[0], "cost rose {} -> {}", w[0], w[1]);
    }

    // Brute force: every stamp that can hold the single instance, costed by
    // rate times round trip from each ingress.
    let rtt = rtt_oracle(&cfg.topology, &[]);
    let secs = cfg.duration_ms / 1000.0;
    let arrivals = blipsim::harness::generate_workload(&cfg);
    let mut rates: BTreeMap<_, f64> = BTreeMap::new();
    for a in &arrivals {
        *rates.entry(a.ingress.clone()).or_default() += 1.0 / secs;
    }
    let svc = &cfg.services[0];
    let best = cfg
        .topology
        .stamps
        .iter()
        .filter(|s| s.capacity_units >= svc.resource_units)
        .map(|s| {
            let cost: f64 = rates.iter().map(|(ing, r)| r * rtt[&(ing.clone(), s.id.clone())]).sum();
            (cost, s.id.clone())
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or("no feasible stamp")?;
    let fin = world.assignment();
    let want = BTreeSet::from([best.1.clone()]);
    ensure!(fin.get(&svc.id) == Some(&want), "final {fin:?}, optimum {want:?}");
    Ok(format!(
        "moved on tick {}, costs {:?}, final {} = optimum",
        first_move + 1,
        costs.iter().take(3).collect::<Vec<_>>(),
        best.1
    ))
}

fn lww(entries: &[StateLogEntry]) -> BTreeMap<String, Vec<u8>> {
    let mut best: BTreeMap<String, (&StateLogEntry, Vec<u8>)> = BTreeMap::new();
    for e in entries {
        if let LogPayload::KvWrite { key, value } = &e.payload {
            if best.get(key).is_none_or(|(b, _)| e.lamport > b.lamport) {
                best.insert(key.clone(), (e, value.clone()));
            }
        }
    }
    best.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

fn partition_heal() -> Verdict {
    let cfg = scenario("partition-heal.json");
    let p = cfg.partitions.first().ok_or("no partition")?;
    let heal = p.heal_at_ms.ok_or("no heal")?;
    let comps = components(&cfg.topology, &p.links_down);
    ensure!(comps.len() == 2, "partition splits into {} components", comps.len());

    let mut world = build_world(&cfg).map_err(|e| e.to_string())?;
    world.run_until(heal - 1.0);
    ensure!(!world.stores_converged(), "stores already equal during the partition");
    let mut per_comp = vec![0usize; comps.len()];
    for q in &world.metrics().requests {
        if q.outcome == Outcome::Ok && q.issued_at >= p.at_ms && q.completed_at < heal {
            let c = comps.iter().position(|c| c.contains(&q.ingress)).unwrap();
            per_comp[c] += 1;
        }
    }
    ensure!(per_comp.iter().all(|n| *n >= 1), "successes per component {per_comp:?}");

    world.run_until(heal + cfg.timers.gossip_ms);
    let stamps: Vec<_> = world.stamps().values().collect();
    for a in &stamps {
        for b in &stamps {
            ensure!(a.store.same_contents(&b.store), "stores {} and {} differ", a.id, b.id);
            ensure!(
                a.catalog.same_contents(&b.catalog),
                "catalogs {} and {} differ",
                a.id,
                b.id
            );
        }
    }
    let all: Vec<StateLogEntry> = stamps.iter().flat_map(|s| s.store.log().to_vec()).collect();
    let oracle = lww(&all);
    ensure!(!oracle.is_empty(), "no writes recorded");
    for s in &stamps {
        let got: BTreeMap<String, Vec<u8>> = s
            .store
            .entries()
            .iter()
            .map(|(k, (v, _))| (k.clone(), v.clone()))
            .collect();
        ensure!(got == oracle, "{} disagrees with the LWW oracle", s.id);
        let union: BTreeSet<_> = all.iter().map(|e| (e.lamport.clone(), e.origin.clone())).collect();
        ensure!(s.store.log().len() == union.len(), "{} log is not the union", s.id);
    }
    Ok(format!(
        "successes per component {per_comp:?}; {} stamps equal after heal + {} ms",
        stamps.len(),
        cfg.timers.gossip_ms
    ))
}

fn vivaldi() -> Verdict {
    let cfg = scenario("vivaldi-convergence.json");
    let topo = cfg.validated_topology().map_err(|e| e.to_string())?;
    ensure!(topo.stamps().len() == 16, "{} stamps", topo.stamps().len());
    let check = |medians: &[f64], what: &str| -> Result<(), String> {
        ensure!(*medians.last().unwrap() < 0.05, "{what}: {medians:?}");
        for w in medians.windows(2) {
            ensure!(w[1] <= w[0] + 0.01, "{what} rose: {medians:?}");
        }
        Ok(())
    };

    let table = topo.latency_table();
    let mut coords: BTreeMap<_, _> = topo
        .stamp_ids()
        .map(|id| (id.clone(), VivaldiCoordinate::default()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut relaxed = Vec::new();
    for _ in 0..4 {
        relax_all_pairs(&mut coords, &table, 50, &cfg.vivaldi, &mut rng);
        relaxed.push(
            coordinate_error_stats(&coords, &topo)
                .map_err(|e| e.to_string())?
                .median_relative_error,
        );
    }
    check(&relaxed, "all-pairs")?;

    // The simulator samples one random peer per stamp per tick, so 50
    // all-pairs rounds are 50 * 15 ticks.
    let per_50 = 50.0 * 15.0 * cfg.timers.vivaldi_ms;
    ensure!(4.0 * per_50 <= cfg.duration_ms, "scenario too short");
    let mut world = build_world(&cfg).map_err(|e| e.to_string())?;
    let mut simulated = Vec::new();
    for k in 1..=4 {
        world.run_until(per_50 * k as f64);
        simulated.push(
            coordinate_error_stats(world.coordinates(), &topo)
                .map_err(|e| e.to_string())?
                .median_relative_error,
        );
    }
    check(&simulated, "simulator")?;
    Ok(format!(
        "median after 200 rounds: all-pairs {:.2e}, simulator {:.2e}",
        relaxed[3], simulated[3]
    ))
}

fn property_suite() -> Verdict {
    const CASES: u32 = 1000;
    let run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| -> Result<(), String> {
        let mut runner = TestRunner::new(Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        });
        f(&mut runner).map_err(|e| format!("{name}: {e}"))
    };
    run("stamp capacity and lifecycle", &|r| {
        r.run(&(0u32..7, prop::collection::vec(op(), 1..60)), |(c, ops)| {
            check_capacity_and_lifecycle(c, ops)
        })
        .map_err(|e| e.to_string())
    })?;
    run("catalog merge laws", &|r| {
        r.run(&(catalog(), catalog(), catalog()), |(a, b, c)| {
            check_catalog_laws(a, b, c)
        })
        .map_err(|e| e.to_string())
    })?;
    run("log merge laws", &|r| {
        r.run(&write_logs(), check_log_merge_laws).map_err(|e| e.to_string())
    })?;
    run("full sync matches LWW", &|r| {
        r.run(&write_logs(), check_full_sync).map_err(|e| e.to_string())
    })?;
    run("simulated capacity and lifecycle", &|r| {
        r.run(&small_scenario(), |cfg| check_sim_capacity(&cfg))
            .map_err(|e| e.to_string())
    })?;
    Ok(format!("5 properties x {CASES} cases"))
}

fn determinism() -> Verdict {
    let mut lines = Vec::new();
    for path in bundled_scenarios() {
        let cfg = blipsim::harness::load_config(&path).map_err(|e| e.to_string())?;
        let a = run_scenario(&cfg).map_err(|e| e.to_string())?.report;
        let b = run_scenario(&cfg).map_err(|e| e.to_string())?.report;
        ensure!(
            a.trace_hash == b.trace_hash,
            "{}: {} vs {}",
            cfg.name,
            a.trace_hash,
            b.trace_hash
        );
        for f in [MetricsFormat::Jsonl, MetricsFormat::Csv] {
            ensure!(
                export_metrics(&a, f) == export_metrics(&b, f),
                "{}: metrics differ",
                cfg.name
            );
        }
        let randomized = cfg
            .workload
            .iter()
            .any(|w| w.arrival == blipsim::harness::config::ArrivalProcess::Poisson);
        if randomized {
            let mut other = cfg.clone();
            other.seed = cfg.seed.wrapping_add(1);
            let c = run_scenario(&other).map_err(|e| e.to_string())?.report;
            ensure!(
                c.trace_hash != a.trace_hash,
                "{}: seeds {} and {} collide",
                cfg.name,
                cfg.seed,
                other.seed
            );
            lines.push(format!("{} (seed-sensitive)", cfg.name));
        } else {
            lines.push(cfg.name.clone());
        }
    }
    Ok(lines.join(", "))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 JIT boot modeling", jit_boot, Duration::from_secs(1)),
        ("2 baseline contrast", baseline_contrast, Duration::from_secs(5)),
        ("3 smart-home ordering", smart_home_ordering, Duration::from_secs(5)),
        ("4 footloose convergence", footloose, Duration::from_secs(5)),
        ("5 partition and heal", partition_heal, Duration::from_secs(5)),
        ("6 coordinate quality", vivaldi, Duration::from_secs(10)),
        ("7 capacity safety", property_suite, Duration::from_secs(120)),
        ("8 determinism", determinism, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let t0 = Instant::now();
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t0.elapsed();
        let verdict = verdict.and_then(|msg| {
            if took <= budget {
                Ok(msg)
            } else {
                Err(format!("took {took:.2?}, budget {budget:?} ({msg})"))
            }
        });
        match verdict {
            Ok(msg) => println!("PASS criterion {name}: {msg} [{took:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} [{took:.2?}]");
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
