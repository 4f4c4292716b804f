//! Footloose placement: a multivariate assignment cost, capacity filtering,
//! a greedy single-move improvement step with hysteresis, and the radial
//! deployment view.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinates::{estimate_rtt, VivaldiCoordinate};
use crate::ids::{ServiceId, StampId};
use crate::latency::LatencyOracle;
use crate::stamp::ServiceSpec;
use crate::topology::{Tier, ValidatedTopology};

/// Service -> stamps hosting one instance each.
pub type Assignment = BTreeMap<ServiceId, BTreeSet<StampId>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemandProfile {
    /// Requests per simulated second entering at a stamp for a service.
    pub external: BTreeMap<(StampId, ServiceId), f64>,
    /// Requests per second from one service to another.
    pub flows: BTreeMap<(ServiceId, ServiceId), f64>,
}

impl DemandProfile {
    pub fn is_zero(&self) -> bool {
        self.external.values().chain(self.flows.values()).all(|r| *r == 0.0)
    }

    /// Only the demand that targets assigned services.
    fn restricted_to(&self, assignment: &Assignment) -> DemandProfile {
        DemandProfile {
            external: self
                .external
                .iter()
                .filter(|((_, s), _)| assignment.contains_key(s))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            flows: self
                .flows
                .iter()
                .filter(|((a, b), _)| assignment.contains_key(a) && assignment.contains_key(b))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StampCost {
    /// Per resource unit.
    #[serde(default)]
    pub money: f64,
    /// Per resource unit.
    #[serde(default)]
    pub privacy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub latency: f64,
    pub money: f64,
    pub privacy: f64,
    #[serde(default)]
    pub stamp_costs: BTreeMap<StampId, StampCost>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::latency_only()
    }
}

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl CostWeights {
    pub fn latency_only() -> Self {
        Self {
            latency: 1.0,
            money: 0.0,
            privacy: 0.0,
            stamp_costs: BTreeMap::new(),
        }
    }

    pub fn new(latency: f64, money: f64, privacy: f64) -> Result<Self, PlacementError> {
        let w = Self {
            latency,
            money,
            privacy,
            stamp_costs: BTreeMap::new(),
        };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), PlacementError> {
        let parts = [self.latency, self.money, self.privacy];
        let costs_ok = self.stamp_costs.values().all(|c| c.money >= 0.0 && c.privacy >= 0.0);
        if parts.iter().any(|w| w.is_nan() || *w < 0.0) || !costs_ok {
            return Err(PlacementError::InvalidWeights("negative weight or cost".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(PlacementError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PlacementError {
    #[error("service `{0}` has demand but no assigned stamp")]
    UnassignedService(ServiceId),
    #[error("no latency estimate between `{0}` and `{1}`")]
    NoLatency(StampId, StampId),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub latency: f64,
    pub money: f64,
    pub privacy: f64,
    pub total: f64,
}

fn nearest(from: &StampId, hosts: &BTreeSet<StampId>, oracle: &dyn LatencyOracle) -> Result<f64, PlacementError> {
    hosts
        .iter()
        .filter_map(|h| oracle.rtt_ms(from, h))
        .min_by(f64::total_cmp)
        .ok_or_else(|| PlacementError::NoLatency(from.clone(), hosts.first().cloned().unwrap_or_else(|| from.clone())))
}

/// Each term of the weighted cost, and the total.
pub fn cost_breakdown(
    assignment: &Assignment,
    demand: &DemandProfile,
    weights: &CostWeights,
    units: &BTreeMap<ServiceId, u32>,
    oracle: &dyn LatencyOracle,
) -> Result<CostBreakdown, PlacementError> {
    let hosts = |s: &ServiceId| {
        assignment
            .get(s)
            .filter(|h| !h.is_empty())
            .ok_or_else(|| PlacementError::UnassignedService(s.clone()))
    };
    let mut latency = 0.0;
    for ((at, service), rate) in &demand.external {
        if *rate == 0.0 {
            continue;
        }
        latency += rate * nearest(at, hosts(service)?, oracle)?;
    }
    for ((a, b), rate) in &demand.flows {
        if *rate == 0.0 {
            continue;
        }
        let (ha, hb) = (hosts(a)?, hosts(b)?);
        let mut best: Option<f64> = None;
        for x in ha {
            if let Ok(d) = nearest(x, hb, oracle) {
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        latency += rate * best.ok_or_else(|| PlacementError::NoLatency(a.to_string().into(), b.to_string().into()))?;
    }
    let (mut money, mut privacy) = (0.0, 0.0);
    for (service, stamps) in assignment {
        let u = units.get(service).copied().unwrap_or(1) as f64;
        for st in stamps {
            let c = weights.stamp_costs.get(st).copied().unwrap_or_default();
            money += u * c.money;
            privacy += u * c.privacy;
        }
    }
    Ok(CostBreakdown {
        latency,
        money,
        privacy,
        total: weights.latency * latency + weights.money * money + weights.privacy * privacy,
    })
}

pub fn assignment_cost(
    assignment: &Assignment,
    demand: &DemandProfile,
    weights: &CostWeights,
    units: &BTreeMap<ServiceId, u32>,
    oracle: &dyn LatencyOracle,
) -> Result<f64, PlacementError> {
    cost_breakdown(assignment, demand, weights, units, oracle).map(|c| c.total)
}

/// Stamps with at least `spec.resource_units` free, given units in use.
pub fn feasible_stamps(
    topo: &ValidatedTopology,
    current_load: &BTreeMap<StampId, u32>,
    spec: &ServiceSpec,
) -> BTreeSet<StampId> {
    topo.stamps()
        .iter()
        .filter(|s| {
            let used = current_load.get(&s.id).copied().unwrap_or(0);
            s.capacity_units.saturating_sub(used) >= spec.resource_units
        })
        .map(|s| s.id.clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationAction {
    pub service_id: ServiceId,
    pub from_stamp: StampId,
    pub to_stamp: StampId,
    /// Cost reduction of this move alone, in cost units.
    pub predicted_gain: f64,
    /// `predicted_gain` as a fraction of the pre-step cost.
    pub relative_gain: f64,
}

/// Immutable snapshot the placement engine reasons over.
pub struct PlacementView<'a> {
    pub topology: &'a ValidatedTopology,
    pub assignment: &'a Assignment,
    pub demand: &'a DemandProfile,
    pub weights: &'a CostWeights,
    pub units: &'a BTreeMap<ServiceId, u32>,
    /// Units in use per stamp.
    pub load: &'a BTreeMap<StampId, u32>,
    pub oracle: &'a dyn LatencyOracle,
    /// When set, an instance only moves within its own component.
    pub components: Option<&'a [BTreeSet<StampId>]>,
}

impl PlacementView<'_> {
    fn free(&self, stamp: &StampId) -> u32 {
        let cap = self.topology.stamp(stamp).map_or(0, |s| s.capacity_units);
        cap.saturating_sub(self.load.get(stamp).copied().unwrap_or(0))
    }

    fn same_component(&self, a: &StampId, b: &StampId) -> bool {
        self.components
            .is_none_or(|cs| cs.iter().any(|c| c.contains(a) && c.contains(b)))
    }

    fn cost(&self, assignment: &Assignment, demand: &DemandProfile) -> Option<f64> {
        assignment_cost(assignment, demand, self.weights, self.units, self.oracle).ok()
    }
}

fn moved(assignment: &Assignment, service: &ServiceId, from: &StampId, to: &StampId) -> Assignment {
    let mut next = assignment.clone();
    let hosts = next.get_mut(service).expect("service is assigned");
    hosts.remove(from);
    hosts.insert(to.clone());
    next
}

/// One round of greedy local search.
///
/// Every single-instance move to a capacity-feasible stamp is scored
/// against the current assignment; the best move per service is kept when
/// its relative gain exceeds `hysteresis`. Kept moves are then applied in
/// descending gain order, dropping any that no longer fit or that would
/// raise the running cost.
pub fn placement_step(view: &PlacementView<'_>, hysteresis: f64) -> Vec<MigrationAction> {
    let demand = view.demand.restricted_to(view.assignment);
    let Some(pre) = view.cost(view.assignment, &demand) else {
        return Vec::new();
    };
    if pre <= 0.0 {
        return Vec::new();
    }

    let mut candidates = Vec::new();
    for (service, hosts) in view.assignment {
        let need = view.units.get(service).copied().unwrap_or(1);
        let mut best: Option<MigrationAction> = None;
        for from in hosts {
            for target in view.topology.stamps() {
                let to = &target.id;
                if hosts.contains(to) || view.free(to) < need || !view.same_component(from, to) {
                    continue;
                }
                let Some(after) = view.cost(&moved(view.assignment, service, from, to), &demand) else {
                    continue;
                };
                let gain = pre - after;
                if best.as_ref().is_none_or(|b| gain > b.predicted_gain) {
                    best = Some(MigrationAction {
                        service_id: service.clone(),
                        from_stamp: from.clone(),
                        to_stamp: to.clone(),
                        predicted_gain: gain,
                        relative_gain: gain / pre,
                    });
                }
            }
        }
        if let Some(b) = best.filter(|b| b.relative_gain > hysteresis) {
            candidates.push(b);
        }
    }
    candidates.sort_by(|a, b| {
        b.predicted_gain
            .total_cmp(&a.predicted_gain)
            .then_with(|| a.service_id.cmp(&b.service_id))
    });

    let mut current = view.assignment.clone();
    let mut running = pre;
    let mut spent: BTreeMap<StampId, u32> = BTreeMap::new();
    let mut accepted = Vec::new();
    for c in candidates {
        let need = view.units.get(&c.service_id).copied().unwrap_or(1);
        let used = spent.get(&c.to_stamp).copied().unwrap_or(0);
        if view.free(&c.to_stamp) < used + need {
            continue;
        }
        if current[&c.service_id].contains(&c.to_stamp) || !current[&c.service_id].contains(&c.from_stamp) {
            continue;
        }
        let next = moved(&current, &c.service_id, &c.from_stamp, &c.to_stamp);
        match view.cost(&next, &demand) {
            Some(cost) if cost <= running => {
                running = cost;
                current = next;
                *spent.entry(c.to_stamp.clone()).or_default() += need;
                accepted.push(c);
            }
            _ => {}
        }
    }
    accepted
}

/// Apply actions to an assignment (test and driver helper).
pub fn apply_actions(assignment: &Assignment, actions: &[MigrationAction]) -> Assignment {
    actions.iter().fold(assignment.clone(), |a, m| {
        moved(&a, &m.service_id, &m.from_stamp, &m.to_stamp)
    })
}

pub const RADIAL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialNode {
    pub stamp_id: StampId,
    pub provider: String,
    pub provider_axis_index: usize,
    pub radius_ms: f64,
    pub size_units: u32,
    pub tier: Tier,
}

/// Snapshot of a deployment as seen from the UE origin: one axis per
/// provider, latency as radius, allocated units as size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialModel {
    pub format_version: u32,
    pub ue_origin: StampId,
    /// Axis `i` belongs to `providers[i]`.
    pub providers: Vec<String>,
    pub nodes: Vec<RadialNode>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub enum RadialLatency<'a> {
    GraphTruth,
    Vivaldi(&'a BTreeMap<StampId, VivaldiCoordinate>),
}

/// Units allocated per stamp for an assignment.
pub fn deployment_of(assignment: &Assignment, units: &BTreeMap<ServiceId, u32>) -> BTreeMap<StampId, u32> {
    let mut out = BTreeMap::new();
    for (svc, stamps) in assignment {
        for st in stamps {
            *out.entry(st.clone()).or_insert(0) += units.get(svc).copied().unwrap_or(1);
        }
    }
    out
}

/// One node per stamp with allocated units. `deployment` maps stamps to the
/// total resource units of their instances.
pub fn compute_radial_model(
    topo: &ValidatedTopology,
    deployment: &BTreeMap<StampId, u32>,
    source: RadialLatency<'_>,
) -> RadialModel {
    let providers = topo.providers();
    let origin = topo.ue_origin().clone();
    let mut nodes = Vec::new();
    let mut warnings = Vec::new();
    for (stamp, units) in deployment.iter().filter(|(_, u)| **u > 0) {
        let Some(desc) = topo.stamp(stamp) else {
            warnings.push(format!("stamp `{stamp}` is not in the topology"));
            continue;
        };
        let radius = match source {
            RadialLatency::GraphTruth => topo.path_rtt(&origin, stamp).ok(),
            RadialLatency::Vivaldi(coords) => match (coords.get(&origin), coords.get(stamp)) {
                _ if *stamp == origin => Some(0.0),
                (Some(a), Some(b)) => Some(estimate_rtt(a, b)),
                _ => None,
            },
        };
        let Some(radius_ms) = radius else {
            warnings.push(format!("no latency from `{origin}` to `{stamp}`; node omitted"));
            continue;
        };
        nodes.push(RadialNode {
            stamp_id: stamp.clone(),
            provider: desc.provider.clone(),
            provider_axis_index: providers.binary_search(&desc.provider).expect("provider listed"),
            radius_ms,
            size_units: *units,
            tier: desc.tier,
        });
    }
    let max_edge = nodes
        .iter()
        .filter(|n| n.tier == Tier::Edge)
        .map(|n| n.radius_ms)
        .max_by(f64::total_cmp);
    if let Some(edge) = max_edge {
        for n in nodes.iter().filter(|n| n.tier == Tier::Core && n.radius_ms < edge) {
            warnings.push(format!(
                "Core stamp `{}` at {:.3} ms sits inside an Edge stamp at {:.3} ms",
                n.stamp_id, n.radius_ms, edge
            ));
        }
    }
    RadialModel {
        format_version: RADIAL_FORMAT_VERSION,
        ue_origin: origin,
        providers,
        nodes,
        warnings,
    }
}
