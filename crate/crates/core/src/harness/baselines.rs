//! Rerunning one workload under different boot and lifetime profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{BaselineProfile, ScenarioConfig};
use super::run::{run_scenario, RunError};
use crate::simnet::Outcome;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("the config declares no baselines")]
    NoBaselines,
    #[error("profile `{0}`: {1}")]
    Run(String, RunError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub profile: String,
    pub boot_time_ms: f64,
    pub max_lifetime_ms: Option<f64>,
    /// `boot_time_ms` over the reference profile's; `None` when the
    /// reference boots instantly.
    pub cold_start_ratio: Option<f64>,
    /// Latency of the first request that waited on a boot.
    pub first_cold_latency_ms: Option<f64>,
    pub cold_starts: u64,
    pub forced_restarts: usize,
    pub ok: usize,
    pub failed: usize,
    pub workload_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub scenario: String,
    pub reference: String,
    pub rows: Vec<BaselineRow>,
    /// Every profile ran on the byte-identical workload.
    pub workload_identical: bool,
}

impl BaselineComparison {
    pub fn row(&self, profile: &str) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.profile == profile)
    }
}

/// The config with the profile's boot time and lifetime substituted into
/// the affected services. Nothing else changes.
pub fn with_profile(cfg: &ScenarioConfig, p: &BaselineProfile) -> ScenarioConfig {
    let mut out = cfg.clone();
    let only = cfg.baselines.as_ref().and_then(|b| b.services.clone());
    for s in &mut out.services {
        if only.as_ref().is_none_or(|o| o.contains(&s.id)) {
            s.boot_time_ms = p.boot_time_ms;
            s.max_lifetime_ms = p.max_lifetime_ms;
        }
    }
    out
}

pub fn compare_baselines(cfg: &ScenarioConfig) -> Result<BaselineComparison, BaselineError> {
    let b = cfg.baselines.as_ref().ok_or(BaselineError::NoBaselines)?;
    let reference_boot = b
        .profiles
        .iter()
        .find(|p| p.name == b.reference)
        .map(|p| p.boot_time_ms)
        .ok_or(BaselineError::NoBaselines)?;
    let rows = b
        .profiles
        .par_iter()
        .map(|p| {
            let run = run_scenario(&with_profile(cfg, p)).map_err(|e| BaselineError::Run(p.name.clone(), e))?;
            let r = &run.report;
            Ok(BaselineRow {
                profile: p.name.clone(),
                boot_time_ms: p.boot_time_ms,
                max_lifetime_ms: p.max_lifetime_ms,
                cold_start_ratio: (reference_boot > 0.0).then(|| p.boot_time_ms / reference_boot),
                first_cold_latency_ms: r
                    .requests
                    .iter()
                    .filter(|q| q.cold && q.outcome == Outcome::Ok)
                    .min_by(|a, b| a.issued_at.total_cmp(&b.issued_at))
                    .map(|q| q.latency_ms),
                cold_starts: r.cold_starts,
                forced_restarts: r.forced_restarts,
                ok: r.ok,
                failed: r.failed,
                workload_hash: r.workload_hash.clone(),
            })
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    let workload_identical = rows.windows(2).all(|w| w[0].workload_hash == w[1].workload_hash);
    Ok(BaselineComparison {
        scenario: cfg.name.clone(),
        reference: b.reference.clone(),
        rows,
        workload_identical,
    })
}
