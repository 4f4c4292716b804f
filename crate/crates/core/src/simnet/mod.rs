//! Deterministic discrete-event simulation of a network of stamps.
//!
//! A [`World`] owns the topology, every [`StampState`], the Vivaldi
//! coordinates and a single virtual clock. Messages take the one-way path
//! latency of the current link state to arrive. Timers drive gossip,
//! coordinate sampling, idle reaping and placement; partitions take links
//! down and heals bring them back with a state-log exchange between every
//! pair that was cut off from each other.
//!
//! Requests are modeled as calls. A client call travels from its origin
//! stamp to an ingress stamp, whose locator serves it locally, spawns an
//! instance, or forwards it once to another stamp. Gateway proxies answer
//! from the stamp store when a matching exchange was recorded and call
//! their upstream otherwise.

pub mod queue;
pub mod statelog;
pub mod trace;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinates::{vivaldi_update, RttSample, VivaldiCoordinate, VivaldiParams};
use crate::ids::{InstanceId, ServiceId, StampId};
use crate::latency::{CoordinateEstimates, GraphTruth, LatencyOracle, LatencySource};
use crate::placement::{
    assignment_cost, compute_radial_model, placement_step, Assignment, CostWeights, DemandProfile, MigrationAction,
    PlacementView, RadialLatency, RadialModel,
};
use crate::stamp::{
    CatalogDelta, CatalogSummary, FailReason, Ingress, InstanceRecord, InstanceState, Replay, RequestKey,
    RoutingDecision, ServiceKind, ServiceRequest, ServiceSpec, StampError, StampState,
};
use crate::topology::{LatencyTable, TopologyError, ValidatedTopology};
pub use queue::{EventQueue, QueueError, SimEvent};
use statelog::StateLogEntry;
pub use trace::{export_trace, trace_hash, TraceRecord, EMPTY_TRACE_HASH, TRACE_FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub at_ms: f64,
    pub links_down: Vec<(StampId, StampId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heal_at_ms: Option<f64>,
}

/// Timer periods in simulated milliseconds. A period of zero disables the
/// timer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timers {
    pub gossip_ms: f64,
    pub placement_ms: f64,
    pub reap_ms: f64,
    pub vivaldi_ms: f64,
}

impl Default for Timers {
    fn default() -> Self {
        Self {
            gossip_ms: 1000.0,
            placement_ms: 1000.0,
            reap_ms: 1000.0,
            vivaldi_ms: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub seed: u64,
    pub timers: Timers,
    pub vivaldi: VivaldiParams,
    /// Used by stamp locators, the placement engine and radial snapshots.
    pub latency_source: LatencySource,
    pub weights: CostWeights,
    pub hysteresis: f64,
    pub load_aware: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            timers: Timers::default(),
            vivaldi: VivaldiParams::default(),
            latency_source: LatencySource::default(),
            weights: CostWeights::default(),
            hysteresis: 0.05,
            load_aware: false,
        }
    }
}

/// A client request entering the platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub at: f64,
    pub stream: String,
    pub service: ServiceId,
    /// Where the client sits; the response is delivered back here.
    pub origin: StampId,
    /// Stamp whose external interface receives the request.
    pub ingress: StampId,
    pub method: String,
    pub args: Vec<u8>,
    /// Store key the serving stamp writes the arguments to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes_key: Option<String>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("initial placement of `{service}` on `{stamp}`: {source}")]
    InitialPlacement {
        service: ServiceId,
        stamp: StampId,
        source: StampError,
    },
    #[error("unknown stamp `{0}`")]
    UnknownStamp(StampId),
    #[error("unknown service `{0}`")]
    UnknownService(ServiceId),
    #[error("partition heals at {heal} ms, not after it starts at {at} ms")]
    HealBeforePartition { at: f64, heal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Failed(FailReason),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Failed(r) => write!(f, "{r:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub stream: String,
    pub service: ServiceId,
    pub origin: StampId,
    pub ingress: StampId,
    pub issued_at: f64,
    pub completed_at: f64,
    pub latency_ms: f64,
    pub outcome: Outcome,
    /// Waited on at least one booting instance.
    pub cold: bool,
    /// Answered from a recorded exchange.
    pub replayed: bool,
    /// Component label (smallest stamp id) of the origin when the request
    /// finished during a partition.
    pub subnet: Option<StampId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementTick {
    pub at: f64,
    pub demand: DemandProfile,
    /// Assignment the step started from.
    pub assignment: Assignment,
    /// Graph-truth cost of `assignment` under `demand`.
    pub cost: Option<f64>,
    pub actions: Vec<MigrationAction>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimMetrics {
    pub requests: Vec<RequestRecord>,
    /// Instances started on demand by a locator.
    pub cold_starts: u64,
    pub migrations: u64,
    /// Times at which an instance hit its maximum lifetime.
    pub forced_restarts: Vec<f64>,
    pub replay_hits: u64,
    pub replay_misses: u64,
    pub placement: Vec<PlacementTick>,
    pub radial: Vec<(f64, RadialModel)>,
    /// Successful requests per component while a partition was active.
    pub subnet_success: BTreeMap<StampId, u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerKind {
    Gossip,
    Placement,
    Reap,
    Vivaldi,
}

impl TimerKind {
    fn name(self) -> &'static str {
        match self {
            TimerKind::Gossip => "timer-gossip",
            TimerKind::Placement => "timer-placement",
            TimerKind::Reap => "timer-reap",
            TimerKind::Vivaldi => "timer-vivaldi",
        }
    }
}

type CallId = u64;

#[derive(Clone, Debug, PartialEq)]
enum Event {
    Arrival(usize),
    Deliver(u64),
    Timer(TimerKind),
    PartitionStart(usize),
    PartitionHeal(usize),
    InstanceReady(StampId, InstanceId),
    InstanceExpiry(StampId, InstanceId),
    Processed {
        stamp: StampId,
        instance: InstanceId,
        call: CallId,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Caller {
    Client {
        origin: StampId,
    },
    /// The stamp forwarded `parent` here.
    Relay {
        stamp: StampId,
        parent: CallId,
    },
    /// An instance at `stamp` serving `parent` needs its upstream.
    Upstream {
        stamp: StampId,
        parent: CallId,
        instance: InstanceId,
    },
}

impl Caller {
    fn stamp(&self) -> &StampId {
        match self {
            Caller::Client { origin } => origin,
            Caller::Relay { stamp, .. } | Caller::Upstream { stamp, .. } => stamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Call {
    root: u64,
    service: ServiceId,
    method: String,
    args: Vec<u8>,
    writes_key: Option<String>,
    caller: Caller,
    forwarded: bool,
    handler: StampId,
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Request(CallId),
    Response {
        call: CallId,
        result: Result<Vec<u8>, FailReason>,
    },
    GossipSummary {
        catalog: CatalogSummary,
        versions: BTreeMap<StampId, u64>,
    },
    GossipReply {
        catalog: CatalogDelta,
        entries: Vec<StateLogEntry>,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Message {
    from: StampId,
    to: StampId,
    body: Body,
}

#[derive(Clone, Debug, PartialEq)]
struct Track {
    arrival: usize,
    issued_at: f64,
    cold: bool,
    replayed: bool,
    done: bool,
}

/// Response body of a plain service.
pub fn plain_response(service: &ServiceId, method: &str, args: &[u8]) -> Vec<u8> {
    format!("{service}.{method}({}) ok", String::from_utf8_lossy(args)).into_bytes()
}

pub struct World {
    topo: ValidatedTopology,
    table: LatencyTable,
    settings: SimSettings,
    registry: BTreeMap<ServiceId, ServiceSpec>,
    stamps: BTreeMap<StampId, StampState>,
    coords: BTreeMap<StampId, VivaldiCoordinate>,
    rng: ChaCha8Rng,
    queue: EventQueue<Event>,
    arrivals: Vec<Arrival>,
    partitions: Vec<PartitionSpec>,
    messages: BTreeMap<u64, Message>,
    next_message: u64,
    calls: BTreeMap<CallId, Call>,
    next_call: CallId,
    requests: BTreeMap<u64, Track>,
    waiting: BTreeMap<(StampId, InstanceId), Vec<CallId>>,
    /// New instance at a target -> (source stamp, service) to drain once ready.
    migrating: BTreeMap<(StampId, InstanceId), (StampId, ServiceId)>,
    flows: BTreeMap<(ServiceId, ServiceId), u64>,
    metrics: SimMetrics,
    trace: Vec<TraceRecord>,
    detail: String,
}

/// Sub-stream of the seed used for simulator-internal draws.
const SIM_STREAM: u64 = 1;

impl World {
    /// `services` pairs each spec with the stamps that have it cached.
    /// Instances in `initial` are running at time zero and every stamp
    /// knows where they are.
    pub fn new(
        topo: ValidatedTopology,
        services: Vec<(ServiceSpec, Vec<StampId>)>,
        initial: &Assignment,
        settings: SimSettings,
    ) -> Result<World, SimError> {
        let mut stamps: BTreeMap<StampId, StampState> = topo
            .stamps()
            .iter()
            .map(|s| {
                let mut st = StampState::new(s.id.clone(), s.capacity_units);
                st.load_aware = settings.load_aware;
                (s.id.clone(), st)
            })
            .collect();
        let mut registry = BTreeMap::new();
        for (spec, cached_at) in services {
            for at in &cached_at {
                stamps
                    .get_mut(at)
                    .ok_or_else(|| SimError::UnknownStamp(at.clone()))?
                    .catalog
                    .insert_spec(spec.clone());
            }
            registry.insert(spec.id.clone(), spec);
        }
        for (service, hosts) in initial {
            let spec = registry
                .get(service)
                .ok_or_else(|| SimError::UnknownService(service.clone()))?;
            for host in hosts {
                stamps
                    .get_mut(host)
                    .ok_or_else(|| SimError::UnknownStamp(host.clone()))?
                    .place_running(spec, 0.0)
                    .map_err(|source| SimError::InitialPlacement {
                        service: service.clone(),
                        stamp: host.clone(),
                        source,
                    })?;
                for st in stamps.values_mut() {
                    st.catalog.note_location(service, host, 0.0);
                }
            }
        }
        let coords = stamps
            .keys()
            .map(|k| (k.clone(), VivaldiCoordinate::default()))
            .collect();
        let mut world = World {
            table: topo.latency_table(),
            topo,
            rng: {
                let mut r = ChaCha8Rng::seed_from_u64(settings.seed);
                r.set_stream(SIM_STREAM);
                r
            },
            settings,
            registry,
            stamps,
            coords,
            queue: EventQueue::new(),
            arrivals: Vec::new(),
            partitions: Vec::new(),
            messages: BTreeMap::new(),
            next_message: 0,
            calls: BTreeMap::new(),
            next_call: 0,
            requests: BTreeMap::new(),
            waiting: BTreeMap::new(),
            migrating: BTreeMap::new(),
            flows: BTreeMap::new(),
            metrics: SimMetrics::default(),
            trace: Vec::new(),
            detail: String::new(),
        };
        let t = world.settings.timers;
        for (period, kind) in [
            (t.vivaldi_ms, TimerKind::Vivaldi),
            (t.gossip_ms, TimerKind::Gossip),
            (t.reap_ms, TimerKind::Reap),
            (t.placement_ms, TimerKind::Placement),
        ] {
            if period > 0.0 {
                world.queue.schedule(period, Event::Timer(kind))?;
            }
        }
        Ok(world)
    }

    pub fn add_arrivals(&mut self, arrivals: impl IntoIterator<Item = Arrival>) -> Result<(), SimError> {
        for a in arrivals {
            for st in [&a.origin, &a.ingress] {
                if !self.topo.contains(st) {
                    return Err(SimError::UnknownStamp(st.clone()));
                }
            }
            self.queue.schedule(a.at, Event::Arrival(self.arrivals.len()))?;
            self.arrivals.push(a);
        }
        Ok(())
    }

    pub fn add_partition(&mut self, p: PartitionSpec) -> Result<(), SimError> {
        for (a, b) in &p.links_down {
            if self.topo.link(a, b).is_none() {
                return Err(TopologyError::UnknownLink(a.clone(), b.clone()).into());
            }
        }
        if let Some(heal) = p.heal_at_ms {
            if heal <= p.at_ms {
                return Err(SimError::HealBeforePartition { at: p.at_ms, heal });
            }
        }
        let idx = self.partitions.len();
        self.queue.schedule(p.at_ms, Event::PartitionStart(idx))?;
        if let Some(heal) = p.heal_at_ms {
            self.queue.schedule(heal, Event::PartitionHeal(idx))?;
        }
        self.partitions.push(p);
        Ok(())
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn topology(&self) -> &ValidatedTopology {
        &self.topo
    }

    pub fn settings(&self) -> &SimSettings {
        &self.settings
    }

    pub fn stamp(&self, id: &StampId) -> Option<&StampState> {
        self.stamps.get(id)
    }

    pub fn stamps(&self) -> &BTreeMap<StampId, StampState> {
        &self.stamps
    }

    pub fn coordinates(&self) -> &BTreeMap<StampId, VivaldiCoordinate> {
        &self.coords
    }

    pub fn metrics(&self) -> &SimMetrics {
        &self.metrics
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn registry(&self) -> &BTreeMap<ServiceId, ServiceSpec> {
        &self.registry
    }

    pub fn partitioned(&self) -> bool {
        self.topo.links().iter().any(|l| !l.up)
    }

    /// Live instances that still take work, by service.
    pub fn assignment(&self) -> Assignment {
        let mut out = Assignment::new();
        for (id, st) in &self.stamps {
            for inst in st.live_instances().filter(|i| !i.draining) {
                out.entry(inst.service_id.clone()).or_default().insert(id.clone());
            }
        }
        out
    }

    /// Resource units held per stamp by live instances.
    pub fn deployment(&self) -> BTreeMap<StampId, u32> {
        self.stamps
            .iter()
            .map(|(id, st)| (id.clone(), st.used_capacity()))
            .filter(|(_, u)| *u > 0)
            .collect()
    }

    pub fn radial_now(&self) -> RadialModel {
        let source = match self.settings.latency_source {
            LatencySource::GraphTruth => RadialLatency::GraphTruth,
            LatencySource::Vivaldi => RadialLatency::Vivaldi(&self.coords),
        };
        compute_radial_model(&self.topo, &self.deployment(), source)
    }

    /// Every store holds the same log.
    pub fn stores_converged(&self) -> bool {
        let mut it = self.stamps.values();
        let first = it.next();
        it.all(|s| first.is_some_and(|f| f.store.same_contents(&s.store)))
    }

    /// Every catalog has the same specs and locations.
    pub fn catalogs_converged(&self) -> bool {
        let mut it = self.stamps.values();
        let first = it.next();
        it.all(|s| first.is_some_and(|f| f.catalog.same_contents(&s.catalog)))
    }

    /// Apply every event due no later than `t_end` and return the trace
    /// records this added.
    pub fn run_until(&mut self, t_end: f64) -> &[TraceRecord] {
        let start = self.trace.len();
        while let Some(ev) = self.queue.pop_until(t_end) {
            self.apply(ev);
        }
        self.queue.advance_to(t_end);
        &self.trace[start..]
    }

    /// Fail every request still open with `Timeout`.
    pub fn close_open_requests(&mut self) {
        let open: Vec<u64> = self
            .requests
            .iter()
            .filter(|(_, t)| !t.done)
            .map(|(id, _)| *id)
            .collect();
        for id in open {
            let origin = self.arrivals[self.requests[&id].arrival].origin.clone();
            self.finish_request(id, Err(FailReason::Timeout), &origin);
        }
    }

    fn schedule(&mut self, at: f64, ev: Event) {
        self.queue
            .schedule(at, ev)
            .expect("internal events are never scheduled in the past");
    }

    fn note(&mut self, args: std::fmt::Arguments<'_>) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.write_fmt(args).expect("writing to a String");
    }

    fn apply(&mut self, ev: SimEvent<Event>) {
        self.detail.clear();
        let (kind, stamp): (&str, Option<StampId>) = match ev.payload {
            Event::Arrival(i) => {
                self.on_arrival(i);
                ("arrival", Some(self.arrivals[i].origin.clone()))
            }
            Event::Deliver(id) => match self.messages.remove(&id) {
                Some(m) => {
                    let kind = match &m.body {
                        Body::Request(_) => "deliver-request",
                        Body::Response { .. } => "deliver-response",
                        Body::GossipSummary { .. } => "deliver-gossip-summary",
                        Body::GossipReply { .. } => "deliver-gossip-reply",
                    };
                    let to = m.to.clone();
                    self.on_deliver(m);
                    (kind, Some(to))
                }
                // cancelled by a partition
                None => return,
            },
            Event::Timer(k) => {
                self.on_timer(k);
                (k.name(), None)
            }
            Event::PartitionStart(i) => {
                self.on_partition(i);
                ("partition", None)
            }
            Event::PartitionHeal(i) => {
                self.on_heal(i);
                ("heal", None)
            }
            Event::InstanceReady(st, inst) => {
                self.on_ready(&st, &inst);
                ("instance-ready", Some(st))
            }
            Event::InstanceExpiry(st, inst) => {
                self.on_expiry(&st, &inst);
                ("instance-expiry", Some(st))
            }
            Event::Processed { stamp, instance, call } => {
                self.on_processed(&stamp, &instance, call);
                ("processed", Some(stamp))
            }
        };
        self.trace.push(TraceRecord {
            seq: ev.seq,
            at: ev.at,
            kind: kind.to_owned(),
            stamp: stamp.map(|s| s.to_string()),
            detail: std::mem::take(&mut self.detail),
        });
    }

    fn send(&mut self, from: &StampId, to: &StampId, body: Body) {
        let delay = if from == to {
            Some(0.0)
        } else {
            self.table.one_way(from, to)
        };
        match delay {
            Some(d) => {
                let id = self.next_message;
                self.next_message += 1;
                self.messages.insert(
                    id,
                    Message {
                        from: from.clone(),
                        to: to.clone(),
                        body,
                    },
                );
                self.schedule(self.now() + d, Event::Deliver(id));
            }
            None => self.undeliverable(body),
        }
    }

    /// The sender learns at once that its call cannot complete; gossip is
    /// simply lost.
    fn undeliverable(&mut self, body: Body) {
        match body {
            Body::Request(call) | Body::Response { call, .. } => {
                self.note(format_args!("call {call} unreachable"));
                self.on_response(call, Err(FailReason::Unreachable));
            }
            Body::GossipSummary { .. } | Body::GossipReply { .. } => {}
        }
    }

    fn new_call(&mut self, call: Call) -> CallId {
        let id = self.next_call;
        self.next_call += 1;
        self.calls.insert(id, call);
        id
    }

    fn on_arrival(&mut self, i: usize) {
        let a = self.arrivals[i].clone();
        let root = i as u64;
        self.requests.insert(
            root,
            Track {
                arrival: i,
                issued_at: self.now(),
                cold: false,
                replayed: false,
                done: false,
            },
        );
        let call = self.new_call(Call {
            root,
            service: a.service.clone(),
            method: a.method.clone(),
            args: a.args.clone(),
            writes_key: a.writes_key.clone(),
            caller: Caller::Client {
                origin: a.origin.clone(),
            },
            forwarded: false,
            handler: a.ingress.clone(),
        });
        self.note(format_args!(
            "request {root} {} {} -> {}",
            a.stream, a.service, a.ingress
        ));
        self.send(&a.origin, &a.ingress, Body::Request(call));
    }

    fn on_deliver(&mut self, m: Message) {
        debug_assert!(m.from == m.to || self.table.connected(&m.from, &m.to));
        match m.body {
            Body::Request(call) => self.handle_at(&m.to, call),
            Body::Response { call, result } => {
                self.note(format_args!(
                    "call {call} {}",
                    if result.is_ok() { "ok" } else { "failed" }
                ));
                self.on_response(call, result);
            }
            Body::GossipSummary { catalog, versions } => {
                let st = &self.stamps[&m.to];
                let delta = st.catalog.gossip_delta(&catalog);
                let entries = st.store.entries_since(&versions);
                self.note(format_args!(
                    "from {} specs {} locations {} entries {}",
                    m.from,
                    delta.specs.len(),
                    delta.locations.len(),
                    entries.len()
                ));
                if !delta.is_empty() || !entries.is_empty() {
                    self.send(
                        &m.to,
                        &m.from,
                        Body::GossipReply {
                            catalog: delta,
                            entries,
                        },
                    );
                }
            }
            Body::GossipReply { catalog, entries } => {
                let now = self.now();
                let st = self.stamps.get_mut(&m.to).expect("known stamp");
                st.catalog.apply_gossip_delta(&catalog, now);
                match st.store.merge_entries(&entries) {
                    Ok(n) => self.note(format_args!("from {} merged {n}", m.from)),
                    Err(e) => self.note(format_args!("from {} rejected: {e}", m.from)),
                }
            }
        }
    }

    fn decide(&mut self, stamp: &StampId, req: &ServiceRequest) -> RoutingDecision {
        let now = self.now();
        let table = &self.table;
        let st = self.stamps.get_mut(stamp).expect("known stamp");
        match self.settings.latency_source {
            LatencySource::GraphTruth => st.handle_request(req, now, &GraphTruth(table)),
            LatencySource::Vivaldi => st.handle_request(
                req,
                now,
                &CoordinateEstimates {
                    coords: &self.coords,
                    reach: Some(table),
                },
            ),
        }
    }

    /// Run the locator at `stamp` for `call` and act on its decision.
    fn handle_at(&mut self, stamp: &StampId, call_id: CallId) {
        let Some(call) = self.calls.get(&call_id) else {
            return;
        };
        let req = ServiceRequest {
            service: call.service.clone(),
            ingress: match call.caller {
                Caller::Client { .. } => Ingress::External,
                _ => Ingress::Internal,
            },
            forwarded: call.forwarded,
        };
        let decision = self.decide(stamp, &req);
        match decision {
            RoutingDecision::RouteLocal(inst) => {
                self.note(format_args!("call {call_id} {} local {inst}", req.service));
                self.dispatch(stamp, &inst, call_id);
            }
            RoutingDecision::SpawnLocal(spec) => {
                let now = self.now();
                let st = self.stamps.get_mut(stamp).expect("known stamp");
                let rec = st.jit_spawn(&spec, now).expect("locator checked capacity");
                st.enqueue(&rec.instance_id, now).expect("fresh instance");
                self.metrics.cold_starts += 1;
                self.note(format_args!("call {call_id} {} spawn {}", req.service, rec.instance_id));
                self.schedule_lifecycle(stamp, &rec, &spec);
                self.dispatch(stamp, &rec.instance_id, call_id);
            }
            RoutingDecision::RouteRemote(target) => {
                let child = Call {
                    caller: Caller::Relay {
                        stamp: stamp.clone(),
                        parent: call_id,
                    },
                    forwarded: true,
                    handler: target.clone(),
                    ..self.calls[&call_id].clone()
                };
                let child = self.new_call(child);
                self.note(format_args!(
                    "call {call_id} {} remote {target} as {child}",
                    req.service
                ));
                self.send(stamp, &target, Body::Request(child));
            }
            RoutingDecision::Fail(reason) => {
                self.note(format_args!("call {call_id} {} fail {reason:?}", req.service));
                self.reply(call_id, Err(reason));
            }
        }
    }

    fn schedule_lifecycle(&mut self, stamp: &StampId, rec: &InstanceRecord, spec: &ServiceSpec) {
        self.schedule(
            rec.ready_at,
            Event::InstanceReady(stamp.clone(), rec.instance_id.clone()),
        );
        if let Some(life) = spec.max_lifetime_ms {
            self.schedule(
                rec.spawned_at + life,
                Event::InstanceExpiry(stamp.clone(), rec.instance_id.clone()),
            );
        }
    }

    fn spec_at(&self, stamp: &StampId, service: &ServiceId) -> Option<&ServiceSpec> {
        self.stamps[stamp]
            .catalog
            .spec(service)
            .or_else(|| self.registry.get(service))
    }

    /// Hand a call to an instance that already counts it in `in_flight`.
    fn dispatch(&mut self, stamp: &StampId, inst: &InstanceId, call: CallId) {
        let rec = self.stamps[stamp].instance(inst).expect("routed to a known instance");
        if rec.state == InstanceState::Provisioning {
            let root = self.calls[&call].root;
            if let Some(t) = self.requests.get_mut(&root) {
                t.cold = true;
            }
            self.waiting
                .entry((stamp.clone(), inst.clone()))
                .or_default()
                .push(call);
        } else {
            let service = rec.service_id.clone();
            let p = self.spec_at(stamp, &service).map_or(0.0, |s| s.processing_ms);
            self.schedule(
                self.now() + p,
                Event::Processed {
                    stamp: stamp.clone(),
                    instance: inst.clone(),
                    call,
                },
            );
        }
    }

    fn on_ready(&mut self, stamp: &StampId, inst: &InstanceId) {
        let now = self.now();
        let st = self.stamps.get_mut(stamp).expect("known stamp");
        let busy = st.mark_ready(inst, now).expect("booting instance becomes ready");
        let draining = st.instance(inst).is_some_and(|i| i.draining);
        if !busy && draining {
            st.drain(inst).expect("known instance");
        }
        self.note(format_args!("{inst} ready"));
        for call in self.waiting.remove(&(stamp.clone(), inst.clone())).unwrap_or_default() {
            self.dispatch(stamp, inst, call);
        }
        if let Some((from, service)) = self.migrating.remove(&(stamp.clone(), inst.clone())) {
            let src = self.stamps.get_mut(&from).expect("known stamp");
            let victim = src
                .live_instances()
                .filter(|i| i.service_id == service && !i.draining)
                .map(|i| i.instance_id.clone())
                .next();
            if let Some(v) = victim {
                let gone = src.drain(&v).expect("known instance");
                self.note(format_args!("drain {v}{}", if gone { " terminated" } else { "" }));
            }
        }
    }

    fn on_expiry(&mut self, stamp: &StampId, inst: &InstanceId) {
        let st = self.stamps.get_mut(stamp).expect("known stamp");
        if st.instance(inst).is_some_and(|i| i.is_live()) {
            let gone = st.drain(inst).expect("known instance");
            self.metrics.forced_restarts.push(self.queue.now());
            self.note(format_args!(
                "{inst} lifetime reached{}",
                if gone { ", terminated" } else { "" }
            ));
        }
    }

    fn complete(&mut self, stamp: &StampId, inst: &InstanceId) {
        let now = self.now();
        let st = self.stamps.get_mut(stamp).expect("known stamp");
        if st.complete(inst, now).expect("completing a known instance") {
            self.note(format_args!("{inst} terminated"));
        }
    }

    fn on_processed(&mut self, stamp: &StampId, inst: &InstanceId, call_id: CallId) {
        let Some(call) = self.calls.get(&call_id).cloned() else {
            self.complete(stamp, inst);
            return;
        };
        if let Some(key) = &call.writes_key {
            let at = self
                .stamps
                .get_mut(stamp)
                .expect("known stamp")
                .store
                .put(key, &call.args);
            self.note(format_args!("write {key} at {}", at.counter));
        }
        let spec = self.spec_at(stamp, &call.service).cloned();
        let upstream = spec.as_ref().and_then(|s| s.upstream.clone());
        let gateway = spec.as_ref().is_some_and(|s| s.kind == ServiceKind::GatewayProxy);
        match upstream {
            Some(up) if gateway => {
                let key = RequestKey::new(&up, &call.method, &call.args);
                let hit = match self.stamps[stamp].store.replay_lookup(&key) {
                    Replay::Hit(bytes) => Some(bytes.to_vec()),
                    Replay::Miss => None,
                };
                match hit {
                    Some(bytes) => {
                        self.metrics.replay_hits += 1;
                        if let Some(t) = self.requests.get_mut(&call.root) {
                            t.replayed = true;
                        }
                        self.note(format_args!("call {call_id} replay hit"));
                        self.complete(stamp, inst);
                        self.reply(call_id, Ok(bytes));
                    }
                    None => {
                        self.metrics.replay_misses += 1;
                        self.note(format_args!("call {call_id} replay miss"));
                        self.call_upstream(stamp, inst, call_id, up);
                    }
                }
            }
            Some(up) => {
                *self.flows.entry((call.service.clone(), up.clone())).or_default() += 1;
                self.call_upstream(stamp, inst, call_id, up);
            }
            None => {
                self.complete(stamp, inst);
                self.reply(call_id, Ok(plain_response(&call.service, &call.method, &call.args)));
            }
        }
    }

    fn call_upstream(&mut self, stamp: &StampId, inst: &InstanceId, parent: CallId, up: ServiceId) {
        let child = Call {
            service: up,
            writes_key: None,
            caller: Caller::Upstream {
                stamp: stamp.clone(),
                parent,
                instance: inst.clone(),
            },
            forwarded: false,
            handler: stamp.clone(),
            ..self.calls[&parent].clone()
        };
        let child = self.new_call(child);
        self.note(format_args!("call {parent} upstream as {child}"));
        self.handle_at(stamp, child);
    }

    /// The handler of `call` answers its caller.
    fn reply(&mut self, call_id: CallId, result: Result<Vec<u8>, FailReason>) {
        let Some(call) = self.calls.get(&call_id) else {
            return;
        };
        let (from, to) = (call.handler.clone(), call.caller.stamp().clone());
        self.send(&from, &to, Body::Response { call: call_id, result });
    }

    /// `call`'s result is now known at its caller.
    fn on_response(&mut self, call_id: CallId, result: Result<Vec<u8>, FailReason>) {
        let Some(call) = self.calls.remove(&call_id) else {
            return;
        };
        match call.caller.clone() {
            Caller::Client { origin } => self.finish_request(call.root, result.map(|_| ()), &origin),
            Caller::Relay { stamp, parent } => {
                self.maybe_record(&stamp, &call, &result);
                self.reply(parent, result);
            }
            Caller::Upstream {
                stamp,
                parent,
                instance,
            } => {
                self.maybe_record(&stamp, &call, &result);
                self.complete(&stamp, &instance);
                self.reply(parent, result);
            }
        }
    }

    /// A stamp that caches a gateway for `call.service` records every new
    /// successful exchange with it that passes through.
    fn maybe_record(&mut self, stamp: &StampId, call: &Call, result: &Result<Vec<u8>, FailReason>) {
        let Ok(bytes) = result else {
            return;
        };
        let st = self.stamps.get_mut(stamp).expect("known stamp");
        let fronted = st
            .catalog
            .specs()
            .any(|s| s.kind == ServiceKind::GatewayProxy && s.upstream.as_ref() == Some(&call.service));
        if !fronted {
            return;
        }
        let key = RequestKey::new(&call.service, &call.method, &call.args);
        if st.store.replay_lookup(&key) != Replay::Hit(bytes) {
            st.store.record_exchange(key, bytes);
            self.note(format_args!("recorded {} exchange", call.service));
        }
    }

    fn component_label(&self, stamp: &StampId) -> Option<StampId> {
        self.topo
            .reachable_components()
            .into_iter()
            .find(|c| c.contains(stamp))
            .and_then(|c| c.first().cloned())
    }

    fn finish_request(&mut self, root: u64, result: Result<(), FailReason>, origin: &StampId) {
        let now = self.now();
        let Some(track) = self.requests.get_mut(&root) else {
            return;
        };
        if track.done {
            return;
        }
        track.done = true;
        let track = track.clone();
        let subnet = if self.partitioned() {
            self.component_label(origin)
        } else {
            None
        };
        let outcome = match result {
            Ok(()) => Outcome::Ok,
            Err(r) => Outcome::Failed(r),
        };
        if let (Outcome::Ok, Some(label)) = (outcome, &subnet) {
            *self.metrics.subnet_success.entry(label.clone()).or_default() += 1;
        }
        self.note(format_args!(
            "request {root} {outcome} after {} ms",
            now - track.issued_at
        ));
        let a = &self.arrivals[track.arrival];
        self.metrics.requests.push(RequestRecord {
            id: root,
            stream: a.stream.clone(),
            service: a.service.clone(),
            origin: a.origin.clone(),
            ingress: a.ingress.clone(),
            issued_at: track.issued_at,
            completed_at: now,
            latency_ms: now - track.issued_at,
            outcome,
            cold: track.cold,
            replayed: track.replayed,
            subnet,
        });
    }

    fn on_timer(&mut self, kind: TimerKind) {
        let t = self.settings.timers;
        let period = match kind {
            TimerKind::Gossip => {
                self.gossip_round();
                t.gossip_ms
            }
            TimerKind::Vivaldi => {
                self.vivaldi_round();
                t.vivaldi_ms
            }
            TimerKind::Reap => {
                let now = self.now();
                let mut reaped = Vec::new();
                for st in self.stamps.values_mut() {
                    reaped.extend(st.reap_idle(now));
                }
                for r in reaped {
                    self.note(format_args!("reaped {r}"));
                }
                t.reap_ms
            }
            TimerKind::Placement => {
                self.placement_round();
                t.placement_ms
            }
        };
        self.schedule(self.now() + period, Event::Timer(kind));
    }

    fn gossip_round(&mut self) {
        let ids: Vec<StampId> = self.stamps.keys().cloned().collect();
        for s in &ids {
            let catalog = self.stamps[s].catalog.summary();
            let versions = self.stamps[s].store.version_vector();
            let peers: Vec<&StampId> = ids.iter().filter(|p| *p != s && self.table.connected(s, p)).collect();
            for p in peers {
                self.send(
                    s,
                    p,
                    Body::GossipSummary {
                        catalog: catalog.clone(),
                        versions: versions.clone(),
                    },
                );
            }
        }
    }

    /// Each stamp measures the true round trip to one random reachable peer.
    fn vivaldi_round(&mut self) {
        let ids: Vec<StampId> = self.stamps.keys().cloned().collect();
        for me in &ids {
            let peers: Vec<&StampId> = ids.iter().filter(|p| *p != me && self.table.connected(me, p)).collect();
            if peers.is_empty() {
                continue;
            }
            let peer = peers[self.rng.random_range(0..peers.len())];
            let Some(rtt) = self.table.rtt(me, peer).filter(|r| *r > 0.0) else {
                continue;
            };
            let sample = RttSample {
                peer: peer.clone(),
                peer_coordinate: self.coords[peer],
                rtt_ms: rtt,
            };
            let next = vivaldi_update(&self.coords[me], &sample, &self.settings.vivaldi, &mut self.rng);
            self.coords.insert(me.clone(), next);
        }
    }

    fn placement_round(&mut self) {
        let now = self.now();
        let period_s = self.settings.timers.placement_ms / 1000.0;
        let mut demand = DemandProfile::default();
        for (id, st) in self.stamps.iter_mut() {
            for (svc, n) in st.take_demand() {
                demand.external.insert((id.clone(), svc), n as f64 / period_s);
            }
        }
        for (pair, n) in std::mem::take(&mut self.flows) {
            demand.flows.insert(pair, n as f64 / period_s);
        }
        let assignment = self.assignment();
        let units: BTreeMap<ServiceId, u32> = self
            .registry
            .iter()
            .map(|(k, v)| (k.clone(), v.resource_units))
            .collect();
        let load: BTreeMap<StampId, u32> = self
            .stamps
            .iter()
            .map(|(k, v)| (k.clone(), v.used_capacity()))
            .collect();
        let components = self.partitioned().then(|| self.topo.reachable_components());
        let estimates = CoordinateEstimates {
            coords: &self.coords,
            reach: Some(&self.table),
        };
        let truth = GraphTruth(&self.table);
        let oracle: &dyn LatencyOracle = match self.settings.latency_source {
            LatencySource::GraphTruth => &truth,
            LatencySource::Vivaldi => &estimates,
        };
        let view = PlacementView {
            topology: &self.topo,
            assignment: &assignment,
            demand: &demand,
            weights: &self.settings.weights,
            units: &units,
            load: &load,
            oracle,
            components: components.as_deref(),
        };
        let actions = placement_step(&view, self.settings.hysteresis);
        let relevant = DemandProfile {
            external: demand
                .external
                .iter()
                .filter(|((_, s), _)| assignment.contains_key(s))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            flows: demand
                .flows
                .iter()
                .filter(|((a, b), _)| assignment.contains_key(a) && assignment.contains_key(b))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        };
        let cost = assignment_cost(&assignment, &relevant, &self.settings.weights, &units, &truth).ok();

        for a in &actions {
            let spec = self.registry[&a.service_id].clone();
            let st = self
                .stamps
                .get_mut(&a.to_stamp)
                .expect("placement targets known stamps");
            match st.jit_spawn(&spec, now) {
                Ok(rec) => {
                    self.metrics.migrations += 1;
                    self.note(format_args!(
                        "move {} {} -> {} as {}",
                        a.service_id, a.from_stamp, a.to_stamp, rec.instance_id
                    ));
                    self.migrating.insert(
                        (a.to_stamp.clone(), rec.instance_id.clone()),
                        (a.from_stamp.clone(), a.service_id.clone()),
                    );
                    self.schedule_lifecycle(&a.to_stamp.clone(), &rec, &spec);
                }
                Err(e) => self.note(format_args!("move {} skipped: {e}", a.service_id)),
            }
        }
        if let Some(c) = cost {
            self.note(format_args!("cost {c}"));
        }
        self.metrics.placement.push(PlacementTick {
            at: now,
            demand,
            assignment,
            cost,
            actions,
        });
        let radial = self.radial_now();
        self.metrics.radial.push((now, radial));
    }

    fn on_partition(&mut self, i: usize) {
        let p = self.partitions[i].clone();
        for (a, b) in &p.links_down {
            self.topo.set_link_up(a, b, false).expect("checked when added");
        }
        self.table = self.topo.latency_table();
        self.note(format_args!("{} links down", p.links_down.len()));
        let cut: Vec<u64> = self
            .messages
            .iter()
            .filter(|(_, m)| !self.table.connected(&m.from, &m.to))
            .map(|(id, _)| *id)
            .collect();
        for id in cut {
            let m = self.messages.remove(&id).expect("listed above");
            self.undeliverable(m.body);
        }
    }

    fn on_heal(&mut self, i: usize) {
        let p = self.partitions[i].clone();
        let before = self.table.clone();
        for (a, b) in &p.links_down {
            self.topo.set_link_up(a, b, true).expect("checked when added");
        }
        self.table = self.topo.latency_table();
        let ids: Vec<StampId> = self.stamps.keys().cloned().collect();
        let mut synced = 0;
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                if before.connected(a, b) || !self.table.connected(a, b) {
                    continue;
                }
                let la = self.stamps[a].store.log().to_vec();
                let lb = self.stamps[b].store.log().to_vec();
                let ra = self.stamps.get_mut(a).expect("known").store.merge_entries(&lb);
                let rb = self.stamps.get_mut(b).expect("known").store.merge_entries(&la);
                if let Err(e) = ra.and(rb) {
                    self.note(format_args!("sync {a}/{b} rejected: {e}"));
                }
                synced += 1;
            }
        }
        self.note(format_args!("{} links up, {synced} pairs synced", p.links_down.len()));
    }
}
