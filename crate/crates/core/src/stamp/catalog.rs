//! Which services a stamp knows how to run, and where copies are running.
//!
//! The catalog is a state-based CRDT: specs merge by highest version and
//! locations by union (keeping the most recent `last_heard`). Pairwise
//! anti-entropy exchanges a [`CatalogSummary`] one way and a
//! [`CatalogDelta`] back.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ServiceId, StampId};
use crate::stamp::spec::ServiceSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceCatalog {
    specs: BTreeMap<ServiceId, ServiceSpec>,
    /// service -> stamp -> last heard (sim ms)
    locations: BTreeMap<ServiceId, BTreeMap<StampId, f64>>,
}

/// What a peer already knows, sent to ask for a delta.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub versions: BTreeMap<ServiceId, u32>,
    pub locations: BTreeSet<(ServiceId, StampId)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogDelta {
    pub specs: Vec<ServiceSpec>,
    pub locations: Vec<(ServiceId, StampId)>,
}

impl CatalogDelta {
    pub fn is_empty(&self) -> bool {
        self.specs.is_empty() && self.locations.is_empty()
    }
}

/// Total precedence between two specs: higher version wins, and equal
/// versions fall back to a canonical serialization so that merge stays
/// commutative.
fn supersedes(new: &ServiceSpec, old: &ServiceSpec) -> bool {
    match new.version.cmp(&old.version) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => new != old && serde_json::to_string(new).ok() > serde_json::to_string(old).ok(),
    }
}

impl ServiceCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spec(&self, service: &ServiceId) -> Option<&ServiceSpec> {
        self.specs.get(service)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ServiceSpec> {
        self.specs.values()
    }

    /// Max-merge a single spec. Returns whether the catalog changed.
    pub fn insert_spec(&mut self, spec: ServiceSpec) -> bool {
        match self.specs.get(&spec.id) {
            Some(old) if !supersedes(&spec, old) => false,
            _ => {
                self.specs.insert(spec.id.clone(), spec);
                true
            }
        }
    }

    pub fn note_location(&mut self, service: &ServiceId, stamp: &StampId, heard_at: f64) {
        let e = self
            .locations
            .entry(service.clone())
            .or_default()
            .entry(stamp.clone())
            .or_insert(heard_at);
        *e = e.max(heard_at);
    }

    /// Known hosting stamps for a service, with when each was last heard of.
    pub fn locations(&self, service: &ServiceId) -> impl Iterator<Item = (&StampId, f64)> {
        self.locations
            .get(service)
            .into_iter()
            .flat_map(|m| m.iter().map(|(s, t)| (s, *t)))
    }

    pub fn summary(&self) -> CatalogSummary {
        CatalogSummary {
            versions: self.specs.iter().map(|(k, v)| (k.clone(), v.version)).collect(),
            locations: self
                .locations
                .iter()
                .flat_map(|(svc, m)| m.keys().map(move |st| (svc.clone(), st.clone())))
                .collect(),
        }
    }

    /// Specs newer than the peer's and locations the peer has not heard of.
    pub fn gossip_delta(&self, peer: &CatalogSummary) -> CatalogDelta {
        let specs = self
            .specs
            .values()
            .filter(|s| peer.versions.get(&s.id).is_none_or(|v| s.version > *v))
            .cloned()
            .collect();
        let locations = self
            .summary()
            .locations
            .into_iter()
            .filter(|l| !peer.locations.contains(l))
            .collect();
        CatalogDelta { specs, locations }
    }

    /// Idempotent: applying the same delta twice at the same `now` is a no-op.
    pub fn apply_gossip_delta(&mut self, delta: &CatalogDelta, now: f64) {
        for spec in &delta.specs {
            self.insert_spec(spec.clone());
        }
        for (svc, stamp) in &delta.locations {
            self.note_location(svc, stamp, now);
        }
    }

    /// Full state merge (join of the two lattices).
    pub fn merge(&mut self, other: &ServiceCatalog) {
        for spec in other.specs.values() {
            self.insert_spec(spec.clone());
        }
        for (svc, m) in &other.locations {
            for (stamp, t) in m {
                self.note_location(svc, stamp, *t);
            }
        }
    }

    /// Same specs and location sets, ignoring `last_heard` times.
    pub fn same_contents(&self, other: &ServiceCatalog) -> bool {
        self.specs == other.specs && self.summary().locations == other.summary().locations
    }
}
