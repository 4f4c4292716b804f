//! Scenario configuration: a versioned JSON document.
//!
//! Defaults, per field:
//! - `drain_ms`: 10000, time after `duration_ms` for open requests to finish
//! - `spec_cache`: every service not listed is cached at every stamp
//! - `initial_assignment`, `workload`, `partitions`: empty
//! - `timers`: gossip 1000, placement 1000, reap 1000, vivaldi 100 (ms)
//! - `placement.weights`: latency only; `placement.hysteresis`: 0.05;
//!   `placement.latency_source`: `vivaldi`; `placement.load_aware`: false
//! - `vivaldi`: cc = ce = 0.25
//! - stream `origin`: the topology's `ue_origin`; `method`: `"invoke"`;
//!   `args`: `""`; `arrival`: `periodic`; `count`: 1 when no rate is given

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinates::VivaldiParams;
use crate::ids::{ServiceId, StampId};
use crate::latency::LatencySource;
use crate::placement::CostWeights;
use crate::simnet::{PartitionSpec, Timers};
use crate::stamp::ServiceSpec;
use crate::topology::{validate_topology, NetworkTopology, TopologyError, ValidatedTopology};

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const SEED_ENV: &str = "BLIPSIM_SEED";

fn default_drain() -> f64 {
    10_000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub seed: u64,
    pub duration_ms: f64,
    #[serde(default = "default_drain")]
    pub drain_ms: f64,
    pub topology: NetworkTopology,
    pub services: Vec<ServiceSpec>,
    /// Stamps holding a service's spec at time zero.
    #[serde(default)]
    pub spec_cache: BTreeMap<ServiceId, Vec<StampId>>,
    #[serde(default)]
    pub initial_assignment: BTreeMap<ServiceId, Vec<StampId>>,
    #[serde(default)]
    pub workload: Vec<StreamSpec>,
    #[serde(default)]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default)]
    pub timers: Timers,
    #[serde(default)]
    pub placement: PlacementConfig,
    #[serde(default)]
    pub vivaldi: VivaldiParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<BaselinesConfig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Periodic,
    Poisson,
}

fn default_method() -> String {
    "invoke".into()
}

/// A client request stream. Without `rate_per_s`, `count` requests
/// (default one) arrive together at `start_ms`. With a rate, requests arrive from
/// `start_ms` for `duration_ms` (default: until the scenario ends), evenly
/// spaced or as a Poisson process, capped at `count` if given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub name: String,
    pub service: ServiceId,
    pub ingress: StampId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<StampId>,
    #[serde(default)]
    pub start_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(default)]
    pub arrival: ArrivalProcess,
    #[serde(default = "default_method")]
    pub method: String,
    /// `{n}` is replaced by the request's index within the stream.
    #[serde(default)]
    pub args: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes_key: Option<String>,
}

fn default_hysteresis() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
    #[serde(default)]
    pub latency_source: LatencySource,
    #[serde(default)]
    pub load_aware: bool,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            hysteresis: default_hysteresis(),
            latency_source: LatencySource::default(),
            load_aware: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineProfile {
    pub name: String,
    pub boot_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lifetime_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselinesConfig {
    /// Name of the profile ratios are taken against.
    pub reference: String,
    pub profiles: Vec<BaselineProfile>,
    /// Services whose boot and lifetime a profile replaces; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<Vec<ServiceId>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigErrorKind {
    SyntaxError,
    UnknownField,
    DanglingReference,
    InvariantViolation,
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{kind:?} at `{path}`: {message}")]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    /// Dotted path into the document, e.g. `workload[2].ingress`.
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn kinds(&self) -> Vec<ConfigErrorKind> {
        self.0.iter().map(|e| e.kind).collect()
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(#[from] ConfigErrors),
    #[error("{SEED_ENV}={0} is not an unsigned integer")]
    BadSeed(String),
}

/// Parse and fully validate a scenario document.
pub fn parse_config(bytes: &[u8]) -> Result<ScenarioConfig, ConfigErrors> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let kind = if inner.is_syntax() || inner.is_eof() {
            ConfigErrorKind::SyntaxError
        } else if message.starts_with("unknown field") {
            ConfigErrorKind::UnknownField
        } else {
            ConfigErrorKind::InvariantViolation
        };
        ConfigErrors(vec![ConfigError { kind, path, message }])
    })?;
    let errs = check(&cfg);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

/// Read, parse, and apply the `BLIPSIM_SEED` override.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, LoadError> {
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(&bytes)?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| LoadError::BadSeed(v))?;
    }
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validated_topology(&self) -> Result<ValidatedTopology, ConfigErrors> {
        validate_topology(self.topology.clone()).map_err(|e| ConfigErrors(e.0.iter().map(topology_error).collect()))
    }

    pub fn service(&self, id: &ServiceId) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| &s.id == id)
    }

    /// Stamps caching each service's spec, with the default filled in.
    pub fn cached_at(&self, id: &ServiceId) -> Vec<StampId> {
        match self.spec_cache.get(id) {
            Some(v) => v.clone(),
            None => self.topology.stamps.iter().map(|s| s.id.clone()).collect(),
        }
    }

    pub fn horizon_ms(&self) -> f64 {
        self.duration_ms + self.drain_ms
    }
}

fn topology_error(e: &TopologyError) -> ConfigError {
    use ConfigErrorKind::*;
    let (kind, path) = match e {
        TopologyError::DuplicateStampId(_) => (InvariantViolation, "topology.stamps"),
        TopologyError::DanglingLinkEndpoint(_) => (DanglingReference, "topology.links"),
        TopologyError::MissingUeOrigin(_) => (DanglingReference, "topology.ue_origin"),
        TopologyError::NonPositiveLatency { .. } | TopologyError::SelfLink(_) | TopologyError::DuplicateLink(..) => {
            (InvariantViolation, "topology.links")
        }
        _ => (InvariantViolation, "topology"),
    };
    ConfigError {
        kind,
        path: path.into(),
        message: e.to_string(),
    }
}

struct Checker {
    errs: Vec<ConfigError>,
}

impl Checker {
    fn push(&mut self, kind: ConfigErrorKind, path: impl Into<String>, message: impl Into<String>) {
        self.errs.push(ConfigError {
            kind,
            path: path.into(),
            message: message.into(),
        });
    }

    fn invariant(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.push(ConfigErrorKind::InvariantViolation, path, message);
        }
    }

    fn reference(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.push(ConfigErrorKind::DanglingReference, path, message);
        }
    }
}

fn check(cfg: &ScenarioConfig) -> Vec<ConfigError> {
    let mut c = Checker { errs: Vec::new() };
    c.invariant(
        cfg.format_version == CONFIG_FORMAT_VERSION,
        "format_version",
        format!(
            "unsupported version {}, expected {CONFIG_FORMAT_VERSION}",
            cfg.format_version
        ),
    );
    c.invariant(
        cfg.duration_ms > 0.0,
        "duration_ms",
        format!("{} must be > 0", cfg.duration_ms),
    );
    c.invariant(
        cfg.drain_ms >= 0.0,
        "drain_ms",
        format!("{} must be >= 0", cfg.drain_ms),
    );

    if let Err(e) = validate_topology(cfg.topology.clone()) {
        c.errs.extend(e.0.iter().map(topology_error));
    }
    let stamps: BTreeMap<&StampId, u32> = cfg.topology.stamps.iter().map(|s| (&s.id, s.capacity_units)).collect();

    let mut seen = BTreeSet::new();
    for (i, s) in cfg.services.iter().enumerate() {
        if !seen.insert(&s.id) {
            c.push(
                ConfigErrorKind::InvariantViolation,
                format!("services[{i}].id"),
                format!("duplicate service `{}`", s.id),
            );
        }
        for (field, msg) in s.violations() {
            c.push(
                ConfigErrorKind::InvariantViolation,
                format!("services[{i}].{field}"),
                msg,
            );
        }
    }
    let services: BTreeMap<&ServiceId, &ServiceSpec> = cfg.services.iter().map(|s| (&s.id, s)).collect();
    for (i, s) in cfg.services.iter().enumerate() {
        if let Some(up) = &s.upstream {
            c.reference(
                services.contains_key(up),
                format!("services[{i}].upstream"),
                format!("no service `{up}`"),
            );
        }
    }

    for (svc, at) in &cfg.spec_cache {
        c.reference(
            services.contains_key(svc),
            format!("spec_cache.{svc}"),
            format!("no service `{svc}`"),
        );
        for (j, st) in at.iter().enumerate() {
            c.reference(
                stamps.contains_key(st),
                format!("spec_cache.{svc}[{j}]"),
                format!("no stamp `{st}`"),
            );
        }
    }

    let mut load: BTreeMap<&StampId, u32> = BTreeMap::new();
    for (svc, at) in &cfg.initial_assignment {
        let spec = services.get(svc);
        c.reference(
            spec.is_some(),
            format!("initial_assignment.{svc}"),
            format!("no service `{svc}`"),
        );
        let mut hosts = BTreeSet::new();
        for (j, st) in at.iter().enumerate() {
            let path = format!("initial_assignment.{svc}[{j}]");
            c.reference(stamps.contains_key(st), path.clone(), format!("no stamp `{st}`"));
            c.invariant(hosts.insert(st), path, format!("`{st}` listed twice"));
            if let Some(spec) = spec {
                *load.entry(st).or_default() += spec.resource_units;
            }
        }
    }
    for (st, used) in &load {
        if let Some(cap) = stamps.get(st) {
            c.invariant(
                used <= cap,
                "initial_assignment",
                format!("stamp `{st}` needs {used} units but has {cap}"),
            );
        }
    }

    for (i, w) in cfg.workload.iter().enumerate() {
        let p = |f: &str| format!("workload[{i}].{f}");
        c.reference(
            services.contains_key(&w.service),
            p("service"),
            format!("no service `{}`", w.service),
        );
        c.reference(
            stamps.contains_key(&w.ingress),
            p("ingress"),
            format!("no stamp `{}`", w.ingress),
        );
        if let Some(o) = &w.origin {
            c.reference(stamps.contains_key(o), p("origin"), format!("no stamp `{o}`"));
        }
        c.invariant(w.start_ms >= 0.0, p("start_ms"), "must be >= 0");
        if let Some(r) = w.rate_per_s {
            c.invariant(r > 0.0 && r.is_finite(), p("rate_per_s"), format!("{r} must be > 0"));
        }
        if let Some(d) = w.duration_ms {
            c.invariant(d >= 0.0, p("duration_ms"), format!("{d} must be >= 0"));
            c.invariant(
                w.rate_per_s.is_some(),
                p("duration_ms"),
                "only meaningful with rate_per_s",
            );
        }
        if w.arrival == ArrivalProcess::Poisson {
            c.invariant(w.rate_per_s.is_some(), p("arrival"), "poisson arrivals need rate_per_s");
        }
    }

    for (i, part) in cfg.partitions.iter().enumerate() {
        c.invariant(part.at_ms >= 0.0, format!("partitions[{i}].at_ms"), "must be >= 0");
        if let Some(h) = part.heal_at_ms {
            c.invariant(
                h > part.at_ms,
                format!("partitions[{i}].heal_at_ms"),
                format!("{h} must be after {}", part.at_ms),
            );
        }
        for (j, (a, b)) in part.links_down.iter().enumerate() {
            let exists = cfg
                .topology
                .links
                .iter()
                .any(|l| (l.a == *a && l.b == *b) || (l.a == *b && l.b == *a));
            c.reference(
                exists,
                format!("partitions[{i}].links_down[{j}]"),
                format!("no link {a}-{b}"),
            );
        }
    }

    let t = &cfg.timers;
    for (name, v) in [
        ("gossip_ms", t.gossip_ms),
        ("placement_ms", t.placement_ms),
        ("reap_ms", t.reap_ms),
        ("vivaldi_ms", t.vivaldi_ms),
    ] {
        c.invariant(
            v >= 0.0 && v.is_finite(),
            format!("timers.{name}"),
            format!("{v} must be >= 0"),
        );
    }

    let pl = &cfg.placement;
    if let Err(e) = pl.weights.check() {
        c.push(ConfigErrorKind::InvariantViolation, "placement.weights", e.to_string());
    }
    for st in pl.weights.stamp_costs.keys() {
        c.reference(
            stamps.contains_key(st),
            format!("placement.weights.stamp_costs.{st}"),
            format!("no stamp `{st}`"),
        );
    }
    c.invariant(
        (0.0..1.0).contains(&pl.hysteresis),
        "placement.hysteresis",
        format!("{} outside [0, 1)", pl.hysteresis),
    );
    for (name, v) in [("cc", cfg.vivaldi.cc), ("ce", cfg.vivaldi.ce)] {
        c.invariant(
            v > 0.0 && v <= 1.0,
            format!("vivaldi.{name}"),
            format!("{v} outside (0, 1]"),
        );
    }

    if let Some(b) = &cfg.baselines {
        c.invariant(
            !b.profiles.is_empty(),
            "baselines.profiles",
            "at least one profile is needed",
        );
        c.reference(
            b.profiles.iter().any(|p| p.name == b.reference),
            "baselines.reference",
            format!("no profile `{}`", b.reference),
        );
        for (i, p) in b.profiles.iter().enumerate() {
            c.invariant(
                p.boot_time_ms >= 0.0 && p.boot_time_ms.is_finite(),
                format!("baselines.profiles[{i}].boot_time_ms"),
                "must be >= 0",
            );
            if let Some(l) = p.max_lifetime_ms {
                c.invariant(
                    l > 0.0,
                    format!("baselines.profiles[{i}].max_lifetime_ms"),
                    "must be > 0",
                );
            }
        }
        for (i, s) in b.services.iter().flatten().enumerate() {
            c.reference(
                services.contains_key(s),
                format!("baselines.services[{i}]"),
                format!("no service `{s}`"),
            );
        }
    }
    c.errs
}
