//! The weighted graph of stamps and links.
//!
//! Links are undirected and carry a single one-way latency. Latency between
//! non-adjacent stamps is the shortest additive path over links that are up;
//! a round trip is twice that.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::StampId;

/// Proximity class of a stamp, as declared in the topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Edge,
    Periphery,
    Core,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Edge => "Edge",
            Tier::Periphery => "Periphery",
            Tier::Core => "Core",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StampDescriptor {
    pub id: StampId,
    pub provider: String,
    pub tier: Tier,
    pub capacity_units: u32,
    /// Ground-truth location in milliseconds-space. Only the simulator and
    /// the coordinate tests look at this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

impl StampDescriptor {
    pub fn new(id: impl Into<StampId>, provider: &str, tier: Tier, capacity_units: u32) -> Self {
        Self {
            id: id.into(),
            provider: provider.to_owned(),
            tier,
            capacity_units,
            position: None,
        }
    }
}

fn default_up() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkLink {
    pub a: StampId,
    pub b: StampId,
    pub latency_ms: f64,
    #[serde(default = "default_up")]
    pub up: bool,
}

impl NetworkLink {
    pub fn new(a: impl Into<StampId>, b: impl Into<StampId>, latency_ms: f64) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            latency_ms,
            up: true,
        }
    }
}

/// Unordered endpoint pair, smaller id first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey(pub StampId, pub StampId);

impl LinkKey {
    pub fn new(a: &StampId, b: &StampId) -> Self {
        if a <= b {
            Self(a.clone(), b.clone())
        } else {
            Self(b.clone(), a.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTopology {
    pub ue_origin: StampId,
    pub stamps: Vec<StampDescriptor>,
    #[serde(default)]
    pub links: Vec<NetworkLink>,
}

impl NetworkTopology {
    /// Full mesh over stamps that all carry a `position`, with one-way link
    /// latency equal to half the Euclidean distance, so that the round trip
    /// between any two stamps is exactly their distance.
    pub fn planar_mesh(ue_origin: StampId, stamps: Vec<StampDescriptor>) -> Self {
        let mut links = Vec::new();
        for (i, a) in stamps.iter().enumerate() {
            for b in &stamps[i + 1..] {
                let (pa, pb) = (a.position.unwrap_or_default(), b.position.unwrap_or_default());
                let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                links.push(NetworkLink::new(a.id.clone(), b.id.clone(), d / 2.0));
            }
        }
        Self {
            ue_origin,
            stamps,
            links,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TopologyError {
    #[error("duplicate stamp id `{0}`")]
    DuplicateStampId(StampId),
    #[error("link endpoint `{0}` names no stamp")]
    DanglingLinkEndpoint(StampId),
    #[error("link {a}-{b} has non-positive latency {latency_ms}")]
    NonPositiveLatency { a: StampId, b: StampId, latency_ms: f64 },
    #[error("ue_origin `{0}` names no stamp")]
    MissingUeOrigin(StampId),
    #[error("link connects `{0}` to itself")]
    SelfLink(StampId),
    #[error("more than one link between `{0}` and `{1}`")]
    DuplicateLink(StampId, StampId),
    #[error("unknown stamp `{0}`")]
    UnknownStamp(StampId),
    #[error("no link between `{0}` and `{1}`")]
    UnknownLink(StampId, StampId),
    #[error("no up-path from `{0}` to `{1}`")]
    Unreachable(StampId, StampId),
}

/// Every violation found in a raw topology.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("invalid topology: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct TopologyErrors(pub Vec<TopologyError>);

/// A topology whose invariants have been checked. Only link up/down state
/// may change afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedTopology {
    raw: NetworkTopology,
    index: BTreeMap<StampId, usize>,
    links: BTreeMap<LinkKey, usize>,
}

pub fn validate_topology(raw: NetworkTopology) -> Result<ValidatedTopology, TopologyErrors> {
    let mut errors = Vec::new();
    let mut index = BTreeMap::new();
    for (i, s) in raw.stamps.iter().enumerate() {
        if index.insert(s.id.clone(), i).is_some() {
            errors.push(TopologyError::DuplicateStampId(s.id.clone()));
        }
    }
    if !index.contains_key(&raw.ue_origin) {
        errors.push(TopologyError::MissingUeOrigin(raw.ue_origin.clone()));
    }
    let mut links = BTreeMap::new();
    for (i, l) in raw.links.iter().enumerate() {
        let mut dangling = false;
        for end in [&l.a, &l.b] {
            if !index.contains_key(end) {
                errors.push(TopologyError::DanglingLinkEndpoint(end.clone()));
                dangling = true;
            }
        }
        // NaN fails this comparison too.
        if !(l.latency_ms > 0.0 && l.latency_ms.is_finite()) {
            errors.push(TopologyError::NonPositiveLatency {
                a: l.a.clone(),
                b: l.b.clone(),
                latency_ms: l.latency_ms,
            });
        }
        if l.a == l.b {
            errors.push(TopologyError::SelfLink(l.a.clone()));
        } else if !dangling && links.insert(LinkKey::new(&l.a, &l.b), i).is_some() {
            let key = LinkKey::new(&l.a, &l.b);
            errors.push(TopologyError::DuplicateLink(key.0, key.1));
        }
    }
    if errors.is_empty() {
        Ok(ValidatedTopology { raw, index, links })
    } else {
        Err(TopologyErrors(errors))
    }
}

impl ValidatedTopology {
    pub fn raw(&self) -> &NetworkTopology {
        &self.raw
    }

    pub fn ue_origin(&self) -> &StampId {
        &self.raw.ue_origin
    }

    pub fn stamps(&self) -> &[StampDescriptor] {
        &self.raw.stamps
    }

    pub fn links(&self) -> &[NetworkLink] {
        &self.raw.links
    }

    pub fn stamp_ids(&self) -> impl Iterator<Item = &StampId> {
        self.index.keys()
    }

    pub fn stamp(&self, id: &StampId) -> Option<&StampDescriptor> {
        self.index.get(id).map(|&i| &self.raw.stamps[i])
    }

    pub fn contains(&self, id: &StampId) -> bool {
        self.index.contains_key(id)
    }

    pub fn link(&self, a: &StampId, b: &StampId) -> Option<&NetworkLink> {
        self.links.get(&LinkKey::new(a, b)).map(|&i| &self.raw.links[i])
    }

    /// Sorted, de-duplicated provider names.
    pub fn providers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.raw.stamps.iter().map(|s| s.provider.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn set_link_up(&mut self, a: &StampId, b: &StampId, up: bool) -> Result<(), TopologyError> {
        match self.links.get(&LinkKey::new(a, b)) {
            Some(&i) => {
                self.raw.links[i].up = up;
                Ok(())
            }
            None => Err(TopologyError::UnknownLink(a.clone(), b.clone())),
        }
    }

    fn check(&self, id: &StampId) -> Result<usize, TopologyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TopologyError::UnknownStamp(id.clone()))
    }

    /// Shortest one-way latency over up-links.
    pub fn path_latency(&self, from: &StampId, to: &StampId) -> Result<f64, TopologyError> {
        let (src, dst) = (self.check(from)?, self.check(to)?);
        if src == dst {
            return Ok(0.0);
        }
        let n = self.raw.stamps.len();
        let adj = self.adjacency();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[src] = 0.0;
        // Dense Dijkstra; topologies here have tens of stamps.
        for _ in 0..n {
            let Some(u) = (0..n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&x, &y| dist[x].total_cmp(&dist[y]))
            else {
                break;
            };
            if u == dst {
                return Ok(dist[u]);
            }
            done[u] = true;
            for &(v, w) in &adj[u] {
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                }
            }
        }
        Err(TopologyError::Unreachable(from.clone(), to.clone()))
    }

    /// Round-trip time between two stamps (twice the one-way path latency).
    pub fn path_rtt(&self, from: &StampId, to: &StampId) -> Result<f64, TopologyError> {
        self.path_latency(from, to).map(|l| 2.0 * l)
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.raw.stamps.len()];
        for l in self.raw.links.iter().filter(|l| l.up) {
            let (a, b) = (self.index[&l.a], self.index[&l.b]);
            adj[a].push((b, l.latency_ms));
            adj[b].push((a, l.latency_ms));
        }
        adj
    }

    /// All-pairs one-way latencies over up-links.
    pub fn latency_table(&self) -> LatencyTable {
        let n = self.raw.stamps.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for l in self.raw.links.iter().filter(|l| l.up) {
            let (a, b) = (self.index[&l.a], self.index[&l.b]);
            d[a][b] = d[a][b].min(l.latency_ms);
            d[b][a] = d[b][a].min(l.latency_ms);
        }
        for k in 0..n {
            for i in 0..n {
                if !d[i][k].is_finite() {
                    continue;
                }
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        LatencyTable {
            index: self.index.clone(),
            one_way: d,
        }
    }

    /// Connected components over up-links, each sorted, ordered by their
    /// smallest member.
    pub fn reachable_components(&self) -> Vec<BTreeSet<StampId>> {
        let n = self.raw.stamps.len();
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; n];
        let mut comps: Vec<BTreeSet<StampId>> = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let c = comps.len();
            let mut members = BTreeSet::new();
            let mut stack = vec![start];
            label[start] = c;
            while let Some(u) = stack.pop() {
                members.insert(self.raw.stamps[u].id.clone());
                for &(v, _) in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = c;
                        stack.push(v);
                    }
                }
            }
            comps.push(members);
        }
        comps.sort_by(|a, b| a.first().cmp(&b.first()));
        comps
    }
}

/// Precomputed shortest one-way latencies.
#[derive(Clone, Debug)]
pub struct LatencyTable {
    index: BTreeMap<StampId, usize>,
    one_way: Vec<Vec<f64>>,
}

impl LatencyTable {
    /// One-way latency, `None` when unreachable or unknown.
    pub fn one_way(&self, a: &StampId, b: &StampId) -> Option<f64> {
        let (i, j) = (self.index.get(a)?, self.index.get(b)?);
        let d = self.one_way[*i][*j];
        d.is_finite().then_some(d)
    }

    pub fn rtt(&self, a: &StampId, b: &StampId) -> Option<f64> {
        self.one_way(a, b).map(|d| 2.0 * d)
    }

    pub fn connected(&self, a: &StampId, b: &StampId) -> bool {
        self.one_way(a, b).is_some()
    }
}
