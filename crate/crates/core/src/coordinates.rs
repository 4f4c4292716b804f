//! Synthetic network coordinates for latency estimation.
//!
//! Each stamp keeps a 2-D position in milliseconds-space and a confidence
//! weight. Positions are relaxed with the adaptive-timestep spring rule of
//! Vivaldi so that Euclidean distance predicts round-trip time.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{LatencyTable, StampId, ValidatedTopology};

/// Lower bound on the error estimate so that it stays strictly positive.
pub const MIN_ERROR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VivaldiCoordinate {
    pub position: [f64; 2],
    /// Relative error estimate in `(0, 1]`; 1.0 means no confidence.
    pub error: f64,
}

impl Default for VivaldiCoordinate {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0],
            error: 1.0,
        }
    }
}

impl VivaldiCoordinate {
    pub fn at(x: f64, y: f64, error: f64) -> Self {
        Self {
            position: [x, y],
            error,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VivaldiParams {
    /// Position gain.
    #[serde(default = "VivaldiParams::default_gain")]
    pub cc: f64,
    /// Error gain.
    #[serde(default = "VivaldiParams::default_gain")]
    pub ce: f64,
}

impl VivaldiParams {
    fn default_gain() -> f64 {
        0.25
    }
}

impl Default for VivaldiParams {
    fn default() -> Self {
        Self { cc: 0.25, ce: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RttSample {
    pub peer: StampId,
    pub peer_coordinate: VivaldiCoordinate,
    pub rtt_ms: f64,
}

/// Predicted round trip between two coordinates.
pub fn estimate_rtt(a: &VivaldiCoordinate, b: &VivaldiCoordinate) -> f64 {
    let dx = a.position[0] - b.position[0];
    let dy = a.position[1] - b.position[1];
    (dx * dx + dy * dy).sqrt()
}

/// One spring-relaxation step of `current` against a measured sample.
///
/// When the two positions coincide the push direction is drawn from `rng`,
/// so identical seeds and sample sequences give bit-identical results.
pub fn vivaldi_update<R: Rng + ?Sized>(
    current: &VivaldiCoordinate,
    sample: &RttSample,
    params: &VivaldiParams,
    rng: &mut R,
) -> VivaldiCoordinate {
    let rtt = sample.rtt_ms;
    if !(rtt > 0.0 && rtt.is_finite()) {
        debug_assert!(false, "non-positive rtt sample {rtt}");
        return *current;
    }
    let peer = &sample.peer_coordinate;
    let dist = estimate_rtt(current, peer);
    let w = current.error / (current.error + peer.error);
    let sample_error = (dist - rtt).abs() / rtt;
    let error = (sample_error * params.ce * w + current.error * (1.0 - params.ce * w)).clamp(MIN_ERROR, 1.0);

    let unit = if dist > 0.0 {
        [
            (current.position[0] - peer.position[0]) / dist,
            (current.position[1] - peer.position[1]) / dist,
        ]
    } else {
        let angle = rng.random::<f64>() * TAU;
        [angle.cos(), angle.sin()]
    };
    let step = params.cc * w * (rtt - dist);
    VivaldiCoordinate {
        position: [
            current.position[0] + step * unit[0],
            current.position[1] + step * unit[1],
        ],
        error,
    }
}

/// `rounds` sweeps in which every stamp (in id order) takes one sample
/// against every other stamp, measured from `truth`. Pairs that are not
/// connected are skipped.
pub fn relax_all_pairs<R: Rng + ?Sized>(
    coords: &mut BTreeMap<StampId, VivaldiCoordinate>,
    truth: &LatencyTable,
    rounds: usize,
    params: &VivaldiParams,
    rng: &mut R,
) {
    let ids: Vec<StampId> = coords.keys().cloned().collect();
    for _ in 0..rounds {
        for me in &ids {
            for peer in ids.iter().filter(|p| *p != me) {
                let Some(rtt) = truth.rtt(me, peer) else {
                    continue;
                };
                let sample = RttSample {
                    peer: peer.clone(),
                    peer_coordinate: coords[peer],
                    rtt_ms: rtt,
                };
                let next = vivaldi_update(&coords[me], &sample, params, rng);
                coords.insert(me.clone(), next);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub median_relative_error: f64,
    pub p90_relative_error: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CoordinateError {
    #[error("need at least two coordinates to compare")]
    EmptyInput,
    #[error("no true latency between `{0}` and `{1}`")]
    NoTruth(StampId, StampId),
}

/// Relative prediction error over all unordered pairs of coordinates,
/// against round trips derived from the topology. Percentiles use the
/// nearest-rank method.
pub fn coordinate_error_stats(
    coords: &BTreeMap<StampId, VivaldiCoordinate>,
    truth: &ValidatedTopology,
) -> Result<ErrorStats, CoordinateError> {
    let table = truth.latency_table();
    let ids: Vec<&StampId> = coords.keys().collect();
    let mut errors = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let rtt = table
                .rtt(a, b)
                .filter(|r| *r > 0.0)
                .ok_or_else(|| CoordinateError::NoTruth((*a).clone(), (*b).clone()))?;
            let est = estimate_rtt(&coords[*a], &coords[*b]);
            errors.push((est - rtt).abs() / rtt);
        }
    }
    if errors.is_empty() {
        return Err(CoordinateError::EmptyInput);
    }
    errors.sort_by(f64::total_cmp);
    Ok(ErrorStats {
        median_relative_error: nearest_rank(&errors, 50.0),
        p90_relative_error: nearest_rank(&errors, 90.0),
        pairs: errors.len(),
    })
}

/// Nearest-rank percentile of an ascending, non-empty slice.
pub(crate) fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}
