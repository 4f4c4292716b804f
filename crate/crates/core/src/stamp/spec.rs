use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{InstanceId, ServiceId, StampId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceKind {
    Plain,
    /// A small application gateway that answers from the stamp's recorded
    /// exchanges with its upstream service, and falls back to the upstream
    /// on a miss.
    GatewayProxy,
}

fn default_version() -> u32 {
    1
}

fn default_image_size() -> f64 {
    5.0
}

/// A workload element definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: ServiceId,
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_image_size")]
    pub image_size_mb: f64,
    pub boot_time_ms: f64,
    #[serde(default = "ServiceSpec::default_units")]
    pub resource_units: u32,
    pub idle_timeout_ms: f64,
    #[serde(default = "ServiceSpec::default_kind")]
    pub kind: ServiceKind,
    /// Service whose exchanges a `GatewayProxy` replays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<ServiceId>,
    /// Time to serve one request once running.
    #[serde(default)]
    pub processing_ms: f64,
    /// Hard cap on an instance's age (FaaS-style execution limits). At the
    /// limit the instance stops taking work and terminates once idle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lifetime_ms: Option<f64>,
}

/// Accepted image sizes for workload elements, in megabytes.
pub const IMAGE_SIZE_RANGE_MB: (f64, f64) = (3.0, 10.0);

impl ServiceSpec {
    fn default_units() -> u32 {
        1
    }

    fn default_kind() -> ServiceKind {
        ServiceKind::Plain
    }

    pub fn new(id: impl Into<ServiceId>, boot_time_ms: f64) -> Self {
        Self {
            id: id.into(),
            version: 1,
            image_size_mb: default_image_size(),
            boot_time_ms,
            resource_units: 1,
            idle_timeout_ms: 10_000.0,
            kind: ServiceKind::Plain,
            upstream: None,
            processing_ms: 0.0,
            max_lifetime_ms: None,
        }
    }

    /// Field-level invariant violations as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.version < 1 {
            out.push(("version", "must be >= 1".to_owned()));
        }
        let (lo, hi) = IMAGE_SIZE_RANGE_MB;
        if !(self.image_size_mb >= lo && self.image_size_mb <= hi) {
            out.push(("image_size_mb", format!("{} outside [{lo}, {hi}]", self.image_size_mb)));
        }
        if !(self.boot_time_ms >= 0.0 && self.boot_time_ms.is_finite()) {
            out.push(("boot_time_ms", format!("{} must be >= 0", self.boot_time_ms)));
        }
        if self.resource_units < 1 {
            out.push(("resource_units", "must be >= 1".to_owned()));
        }
        if self.idle_timeout_ms.is_nan() || self.idle_timeout_ms <= 0.0 {
            out.push(("idle_timeout_ms", format!("{} must be > 0", self.idle_timeout_ms)));
        }
        if !(self.processing_ms >= 0.0 && self.processing_ms.is_finite()) {
            out.push(("processing_ms", format!("{} must be >= 0", self.processing_ms)));
        }
        if let Some(l) = self.max_lifetime_ms {
            if l.is_nan() || l <= 0.0 {
                out.push(("max_lifetime_ms", format!("{l} must be > 0")));
            }
        }
        match (self.kind, &self.upstream) {
            (ServiceKind::GatewayProxy, None) => {
                out.push(("upstream", "a GatewayProxy needs an upstream service".to_owned()))
            }
            (ServiceKind::Plain, Some(_)) => out.push(("upstream", "only a GatewayProxy has an upstream".to_owned())),
            _ => {}
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstanceState {
    Provisioning,
    Running,
    Idle,
    Terminated,
}

impl InstanceState {
    pub fn can_become(self, next: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, next),
            (Provisioning, Running) | (Running, Idle) | (Idle, Running) | (Idle, Terminated)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("illegal lifecycle transition {from:?} -> {to:?} for {instance}")]
pub struct LifecycleError {
    pub instance: InstanceId,
    pub from: InstanceState,
    pub to: InstanceState,
}

/// One copy of a service on a stamp.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub instance_id: InstanceId,
    pub service_id: ServiceId,
    pub version: u32,
    pub home_stamp: StampId,
    pub state: InstanceState,
    pub resource_units: u32,
    pub spawned_at: f64,
    pub ready_at: f64,
    pub last_used: f64,
    pub in_flight: u32,
    /// No new work; terminates as soon as `in_flight` reaches zero.
    pub draining: bool,
    /// Every state this instance has been in, oldest first.
    pub history: Vec<InstanceState>,
}

impl InstanceRecord {
    pub fn is_live(&self) -> bool {
        self.state != InstanceState::Terminated
    }

    /// Can take a new request right now (possibly after waiting for boot).
    pub fn accepts_work(&self) -> bool {
        self.is_live() && !self.draining
    }

    pub(crate) fn transition(&mut self, to: InstanceState) -> Result<(), LifecycleError> {
        if !self.state.can_become(to) {
            return Err(LifecycleError {
                instance: self.instance_id.clone(),
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.history.push(to);
        Ok(())
    }
}
