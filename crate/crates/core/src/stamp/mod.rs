//! Per-stamp runtime: the service locator, just-in-time instance lifecycle,
//! the service catalog shared with other stamps, and the stamp store.
//!
//! A [`StampState`] is a plain state machine. Nothing here knows about
//! time passing on its own; the simulator feeds it `now` with every call.

pub mod catalog;
pub mod spec;
pub mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::{InstanceId, ServiceId, StampId};
use crate::latency::LatencyOracle;
pub use catalog::{CatalogDelta, CatalogSummary, ServiceCatalog};
pub use spec::{InstanceRecord, InstanceState, LifecycleError, ServiceKind, ServiceSpec};
pub use store::{LamportStamp, RecordedExchange, Replay, RequestKey, StampStore};

/// Where a request entered the locator from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ingress {
    /// From a non-hosted client through the external interface.
    External,
    /// From a hosted service or another stamp.
    Internal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceRequest {
    pub service: ServiceId,
    pub ingress: Ingress,
    /// Already routed here by another stamp's locator; may not be sent on.
    pub forwarded: bool,
}

impl ServiceRequest {
    pub fn external(service: impl Into<ServiceId>) -> Self {
        Self {
            service: service.into(),
            ingress: Ingress::External,
            forwarded: false,
        }
    }

    pub fn internal(service: impl Into<ServiceId>) -> Self {
        Self {
            service: service.into(),
            ingress: Ingress::Internal,
            forwarded: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailReason {
    UnknownService,
    CapacityExhausted,
    Unreachable,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoutingDecision {
    RouteLocal(InstanceId),
    RouteRemote(StampId),
    SpawnLocal(ServiceSpec),
    Fail(FailReason),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StampError {
    #[error("stamp `{stamp}` has {free} free units, {needed} needed")]
    CapacityExhausted { stamp: StampId, free: u32, needed: u32 },
    #[error("no instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngressCounts {
    pub external: u64,
    pub internal: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StampState {
    pub id: StampId,
    pub capacity_units: u32,
    pub catalog: ServiceCatalog,
    pub store: StampStore,
    /// Include queued work in local instance cost.
    pub load_aware: bool,
    instances: BTreeMap<InstanceId, InstanceRecord>,
    demand: BTreeMap<ServiceId, u64>,
    ingress: IngressCounts,
    next_instance: u64,
}

/// Option kinds in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum OptionRank {
    Local,
    Spawn,
    Remote,
}

impl StampState {
    pub fn new(id: impl Into<StampId>, capacity_units: u32) -> Self {
        let id = id.into();
        Self {
            store: StampStore::new(id.clone()),
            id,
            capacity_units,
            catalog: ServiceCatalog::new(),
            load_aware: false,
            instances: BTreeMap::new(),
            demand: BTreeMap::new(),
            ingress: IngressCounts::default(),
            next_instance: 0,
        }
    }

    pub fn used_capacity(&self) -> u32 {
        self.instances
            .values()
            .filter(|i| i.is_live())
            .map(|i| i.resource_units)
            .sum()
    }

    pub fn free_capacity(&self) -> u32 {
        self.capacity_units.saturating_sub(self.used_capacity())
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&InstanceRecord> {
        self.instances.get(id)
    }

    /// All instances ever created here, including terminated ones.
    pub fn instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.values()
    }

    pub fn live_instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.values().filter(|i| i.is_live())
    }

    pub fn ingress_counts(&self) -> &IngressCounts {
        &self.ingress
    }

    /// Requests counted per service since the last call.
    pub fn take_demand(&mut self) -> BTreeMap<ServiceId, u64> {
        std::mem::take(&mut self.demand)
    }

    fn local_cost(&self, inst: &InstanceRecord, now: f64) -> f64 {
        let base = match inst.state {
            InstanceState::Provisioning => (inst.ready_at - now).max(0.0),
            _ => 0.0,
        };
        if self.load_aware {
            let per = self.catalog.spec(&inst.service_id).map_or(0.0, |s| s.processing_ms);
            base + inst.in_flight as f64 * per
        } else {
            base
        }
    }

    /// Decide how to serve a request: an existing local instance, a fresh
    /// local spawn, or a remote stamp, whichever adds the least estimated
    /// latency. Ties go local, then spawn, then remote (smallest stamp id).
    pub fn handle_request(&mut self, req: &ServiceRequest, now: f64, oracle: &dyn LatencyOracle) -> RoutingDecision {
        match req.ingress {
            Ingress::External => self.ingress.external += 1,
            Ingress::Internal => self.ingress.internal += 1,
        }
        if !req.forwarded {
            *self.demand.entry(req.service.clone()).or_default() += 1;
        }

        let mut best: Option<(f64, OptionRank, String)> = None;
        let mut consider = |cost: f64, rank: OptionRank, tie: String| {
            let better = match &best {
                None => true,
                Some((c, r, t)) => cost.total_cmp(c).then(rank.cmp(r)).then_with(|| tie.cmp(t)).is_lt(),
            };
            if better {
                best = Some((cost, rank, tie));
            }
        };

        for inst in self
            .instances
            .values()
            .filter(|i| i.service_id == req.service && i.accepts_work())
        {
            consider(
                self.local_cost(inst, now),
                OptionRank::Local,
                inst.instance_id.to_string(),
            );
        }

        let spec = self.catalog.spec(&req.service).cloned();
        let spawnable = spec.as_ref().is_some_and(|s| s.resource_units <= self.free_capacity());
        if let (Some(s), true) = (&spec, spawnable) {
            consider(s.boot_time_ms, OptionRank::Spawn, String::new());
        }

        let mut any_remote = false;
        if !req.forwarded {
            for (stamp, _) in self.catalog.locations(&req.service) {
                if *stamp == self.id {
                    continue;
                }
                if let Some(rtt) = oracle.rtt_ms(&self.id, stamp) {
                    any_remote = true;
                    consider(rtt, OptionRank::Remote, stamp.to_string());
                }
            }
        }

        match best {
            Some((_, OptionRank::Local, id)) => {
                let id = InstanceId::new(id);
                let inst = self.instances.get_mut(&id).expect("candidate exists");
                if inst.state == InstanceState::Idle {
                    inst.transition(InstanceState::Running).expect("idle revives");
                }
                inst.in_flight += 1;
                inst.last_used = now;
                RoutingDecision::RouteLocal(id)
            }
            Some((_, OptionRank::Spawn, _)) => RoutingDecision::SpawnLocal(spec.expect("spawn needs spec")),
            Some((_, OptionRank::Remote, stamp)) => RoutingDecision::RouteRemote(StampId::new(stamp)),
            None if spec.is_some() && !any_remote => RoutingDecision::Fail(FailReason::CapacityExhausted),
            None => RoutingDecision::Fail(FailReason::UnknownService),
        }
    }

    /// Identical to [`handle_request`](Self::handle_request) for a request
    /// from outside the platform.
    pub fn external_request(&mut self, service: &ServiceId, now: f64, oracle: &dyn LatencyOracle) -> RoutingDecision {
        self.handle_request(&ServiceRequest::external(service.clone()), now, oracle)
    }

    /// Start a new instance. It is `Provisioning` until `ready_at`.
    pub fn jit_spawn(&mut self, spec: &ServiceSpec, now: f64) -> Result<InstanceRecord, StampError> {
        let free = self.free_capacity();
        if spec.resource_units > free {
            return Err(StampError::CapacityExhausted {
                stamp: self.id.clone(),
                free,
                needed: spec.resource_units,
            });
        }
        self.next_instance += 1;
        let id = InstanceId::new(format!("{}#{}", self.id, self.next_instance));
        let rec = InstanceRecord {
            instance_id: id.clone(),
            service_id: spec.id.clone(),
            version: spec.version,
            home_stamp: self.id.clone(),
            state: InstanceState::Provisioning,
            resource_units: spec.resource_units,
            spawned_at: now,
            ready_at: now + spec.boot_time_ms,
            last_used: now,
            in_flight: 0,
            draining: false,
            history: vec![InstanceState::Provisioning],
        };
        self.catalog.insert_spec(spec.clone());
        self.catalog.note_location(&spec.id, &self.id, now);
        self.instances.insert(id, rec.clone());
        Ok(rec)
    }

    /// An instance already running at time zero (initial deployment).
    pub fn place_running(&mut self, spec: &ServiceSpec, now: f64) -> Result<InstanceId, StampError> {
        let rec = self.jit_spawn(spec, now)?;
        let inst = self.instances.get_mut(&rec.instance_id).expect("just inserted");
        inst.ready_at = now;
        inst.transition(InstanceState::Running)?;
        inst.transition(InstanceState::Idle)?;
        Ok(rec.instance_id)
    }

    fn get_mut(&mut self, id: &InstanceId) -> Result<&mut InstanceRecord, StampError> {
        self.instances
            .get_mut(id)
            .ok_or_else(|| StampError::UnknownInstance(id.clone()))
    }

    /// Attach one more request to an instance (queued if still booting).
    pub fn enqueue(&mut self, id: &InstanceId, now: f64) -> Result<(), StampError> {
        let inst = self.get_mut(id)?;
        if inst.state == InstanceState::Idle {
            inst.transition(InstanceState::Running)?;
        }
        inst.in_flight += 1;
        inst.last_used = now;
        Ok(())
    }

    /// Boot finished. Returns true if the instance has queued work.
    pub fn mark_ready(&mut self, id: &InstanceId, now: f64) -> Result<bool, StampError> {
        let inst = self.get_mut(id)?;
        inst.transition(InstanceState::Running)?;
        if inst.in_flight == 0 {
            inst.transition(InstanceState::Idle)?;
            inst.last_used = now;
            Ok(false)
        } else {
            Ok(true)
        }
    }

    /// One request finished. Returns true if the instance terminated
    /// because it was draining.
    pub fn complete(&mut self, id: &InstanceId, now: f64) -> Result<bool, StampError> {
        let inst = self.get_mut(id)?;
        debug_assert!(inst.in_flight > 0);
        inst.in_flight = inst.in_flight.saturating_sub(1);
        inst.last_used = now;
        if inst.in_flight == 0 && inst.state == InstanceState::Running {
            inst.transition(InstanceState::Idle)?;
            if inst.draining {
                inst.transition(InstanceState::Terminated)?;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Stop taking work and terminate once idle. Returns true if the
    /// instance terminated immediately.
    pub fn drain(&mut self, id: &InstanceId) -> Result<bool, StampError> {
        let inst = self.get_mut(id)?;
        if !inst.is_live() {
            return Ok(false);
        }
        inst.draining = true;
        match inst.state {
            InstanceState::Idle => {
                inst.transition(InstanceState::Terminated)?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Terminate every idle instance whose idle time reached its timeout.
    pub fn reap_idle(&mut self, now: f64) -> Vec<InstanceId> {
        let mut reaped = Vec::new();
        for inst in self.instances.values_mut() {
            if inst.state != InstanceState::Idle || inst.in_flight != 0 {
                continue;
            }
            let Some(timeout) = self.catalog.spec(&inst.service_id).map(|s| s.idle_timeout_ms) else {
                continue;
            };
            if now - inst.last_used >= timeout {
                inst.transition(InstanceState::Terminated).expect("idle terminates");
                reaped.push(inst.instance_id.clone());
            }
        }
        reaped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_peers(_: &StampId, _: &StampId) -> Option<f64> {
        None
    }

    fn stamp_with(spec: ServiceSpec, capacity: u32) -> StampState {
        let mut s = StampState::new("bbu", capacity);
        s.catalog.insert_spec(spec);
        s
    }

    #[test]
    fn running_local_instance_wins() {
        let spec = ServiceSpec::new("d", 30.0);
        let mut s = stamp_with(spec.clone(), 4);
        let id = s.place_running(&spec, 0.0).unwrap();
        let d = s.handle_request(&ServiceRequest::internal("d"), 5.0, &no_peers);
        assert_eq!(d, RoutingDecision::RouteLocal(id.clone()));
        let inst = s.instance(&id).unwrap();
        assert_eq!(
            (inst.state, inst.in_flight, inst.last_used),
            (InstanceState::Running, 1, 5.0)
        );
    }

    #[test]
    fn cached_spec_without_peers_spawns() {
        let spec = ServiceSpec::new("d", 30.0);
        let mut s = stamp_with(spec.clone(), 4);
        s.catalog.note_location(&"d".into(), &"far".into(), 0.0);
        let d = s.handle_request(&ServiceRequest::internal("d"), 0.0, &no_peers);
        assert_eq!(d, RoutingDecision::SpawnLocal(spec));
    }

    #[test]
    fn near_remote_beats_boot() {
        let spec = ServiceSpec::new("d", 30.0);
        let mut s = stamp_with(spec, 4);
        s.catalog.note_location(&"d".into(), &"peer".into(), 0.0);
        let oracle = |_: &StampId, _: &StampId| Some(8.0);
        let d = s.handle_request(&ServiceRequest::internal("d"), 0.0, &oracle);
        assert_eq!(d, RoutingDecision::RouteRemote("peer".into()));
        let slow = |_: &StampId, _: &StampId| Some(31.0);
        let d = s.handle_request(&ServiceRequest::internal("d"), 0.0, &slow);
        assert!(matches!(d, RoutingDecision::SpawnLocal(_)));
    }

    #[test]
    fn equal_cost_prefers_spawn_then_smaller_remote() {
        let spec = ServiceSpec::new("d", 30.0);
        let mut s = stamp_with(spec, 4);
        s.catalog.note_location(&"d".into(), &"z".into(), 0.0);
        s.catalog.note_location(&"d".into(), &"y".into(), 0.0);
        let tie = |_: &StampId, _: &StampId| Some(30.0);
        assert!(matches!(
            s.handle_request(&ServiceRequest::internal("d"), 0.0, &tie),
            RoutingDecision::SpawnLocal(_)
        ));
        let mut full = stamp_with(ServiceSpec::new("d", 30.0), 0);
        full.catalog.note_location(&"d".into(), &"z".into(), 0.0);
        full.catalog.note_location(&"d".into(), &"y".into(), 0.0);
        assert_eq!(
            full.handle_request(&ServiceRequest::internal("d"), 0.0, &tie),
            RoutingDecision::RouteRemote("y".into())
        );
    }

    #[test]
    fn failures() {
        let mut s = StampState::new("a", 4);
        assert_eq!(
            s.external_request(&"nope".into(), 0.0, &no_peers),
            RoutingDecision::Fail(FailReason::UnknownService)
        );
        let mut full = stamp_with(ServiceSpec::new("d", 30.0), 0);
        assert_eq!(
            full.handle_request(&ServiceRequest::internal("d"), 0.0, &no_peers),
            RoutingDecision::Fail(FailReason::CapacityExhausted)
        );
    }

    #[test]
    fn forwarded_requests_never_route_on() {
        let mut s = StampState::new("a", 4);
        s.catalog.note_location(&"d".into(), &"b".into(), 0.0);
        let req = ServiceRequest {
            forwarded: true,
            ..ServiceRequest::internal("d")
        };
        assert_eq!(
            s.handle_request(&req, 0.0, &|_: &StampId, _: &StampId| Some(1.0)),
            RoutingDecision::Fail(FailReason::UnknownService)
        );
        assert!(s.take_demand().is_empty());
    }

    #[test]
    fn spawn_sets_ready_at() {
        for (boot, now, ready) in [(30.0, 1000.0, 1030.0), (23.0, 500.0, 523.0), (0.0, 7.0, 7.0)] {
            let spec = ServiceSpec::new("we", boot);
            let mut s = stamp_with(spec.clone(), 1);
            let rec = s.jit_spawn(&spec, now).unwrap();
            assert_eq!(rec.ready_at, ready);
            assert_eq!(rec.state, InstanceState::Provisioning);
            assert_eq!(s.free_capacity(), 0);
            assert!(matches!(
                s.jit_spawn(&spec, now),
                Err(StampError::CapacityExhausted { .. })
            ));
        }
    }

    #[test]
    fn booting_instance_is_reused_at_remaining_cost() {
        let spec = ServiceSpec::new("we", 30.0);
        let mut s = stamp_with(spec.clone(), 4);
        let rec = s.jit_spawn(&spec, 0.0).unwrap();
        s.enqueue(&rec.instance_id, 0.0).unwrap();
        let d = s.handle_request(&ServiceRequest::internal("we"), 10.0, &no_peers);
        assert_eq!(d, RoutingDecision::RouteLocal(rec.instance_id.clone()));
        assert_eq!(s.instance(&rec.instance_id).unwrap().in_flight, 2);
        assert!(s.mark_ready(&rec.instance_id, 30.0).unwrap());
    }

    #[test]
    fn reaping() {
        let mut spec = ServiceSpec::new("we", 0.0);
        spec.idle_timeout_ms = 500.0;
        let mut s = stamp_with(spec.clone(), 4);
        let id = s.place_running(&spec, 1000.0).unwrap();
        assert!(s.reap_idle(1000.0).is_empty());
        assert!(s.reap_idle(1499.0).is_empty());
        assert_eq!(s.reap_idle(1501.0), vec![id.clone()]);
        assert_eq!(s.free_capacity(), 4);
        assert_eq!(s.instance(&id).unwrap().state, InstanceState::Terminated);

        let busy = s.jit_spawn(&spec, 0.0).unwrap().instance_id;
        s.mark_ready(&busy, 0.0).unwrap();
        s.enqueue(&busy, 0.0).unwrap();
        s.enqueue(&busy, 0.0).unwrap();
        assert!(s.reap_idle(1e9).is_empty());
    }

    #[test]
    fn idle_instance_revives_for_free() {
        let spec = ServiceSpec::new("we", 30.0);
        let mut s = stamp_with(spec.clone(), 4);
        let id = s.place_running(&spec, 0.0).unwrap();
        assert_eq!(s.instance(&id).unwrap().state, InstanceState::Idle);
        s.handle_request(&ServiceRequest::internal("we"), 1.0, &no_peers);
        assert_eq!(s.instance(&id).unwrap().state, InstanceState::Running);
        assert!(!s.complete(&id, 1.0).unwrap());
        assert_eq!(s.instance(&id).unwrap().state, InstanceState::Idle);
    }

    #[test]
    fn draining_instance_terminates_after_last_request() {
        let spec = ServiceSpec::new("we", 0.0);
        let mut s = stamp_with(spec.clone(), 4);
        let id = s.place_running(&spec, 0.0).unwrap();
        s.enqueue(&id, 0.0).unwrap();
        assert!(!s.drain(&id).unwrap());
        assert!(s.complete(&id, 1.0).unwrap());
        assert_eq!(s.free_capacity(), 4);
    }
}
