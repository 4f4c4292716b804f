//! Where stamps and the placement engine get their latency numbers from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coordinates::{estimate_rtt, VivaldiCoordinate};
use crate::topology::{LatencyTable, StampId};

/// Round-trip estimates between stamps. `None` means the peer cannot be
/// reached right now.
pub trait LatencyOracle {
    fn rtt_ms(&self, from: &StampId, to: &StampId) -> Option<f64>;
}

impl<F> LatencyOracle for F
where
    F: Fn(&StampId, &StampId) -> Option<f64>,
{
    fn rtt_ms(&self, from: &StampId, to: &StampId) -> Option<f64> {
        self(from, to)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencySource {
    /// Twice the shortest path latency in the topology.
    GraphTruth,
    /// Distance between synthetic coordinates.
    #[default]
    Vivaldi,
}

/// True round trips from the current link state.
pub struct GraphTruth<'a>(pub &'a LatencyTable);

impl LatencyOracle for GraphTruth<'_> {
    fn rtt_ms(&self, from: &StampId, to: &StampId) -> Option<f64> {
        self.0.rtt(from, to)
    }
}

/// Coordinate-based estimates. When `reach` is set, unreachable pairs
/// report `None` even though a coordinate estimate exists.
pub struct CoordinateEstimates<'a> {
    pub coords: &'a BTreeMap<StampId, VivaldiCoordinate>,
    pub reach: Option<&'a LatencyTable>,
}

impl LatencyOracle for CoordinateEstimates<'_> {
    fn rtt_ms(&self, from: &StampId, to: &StampId) -> Option<f64> {
        if let Some(reach) = self.reach {
            if !reach.connected(from, to) {
                return None;
            }
        }
        if from == to {
            return Some(0.0);
        }
        Some(estimate_rtt(self.coords.get(from)?, self.coords.get(to)?))
    }
}
