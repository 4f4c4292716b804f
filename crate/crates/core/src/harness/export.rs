//! File formats for metrics and radial models.
//!
//! Metrics JSONL: a `summary` object followed by one `request` object per
//! request, each line carrying `format_version` and `record` first.
//! Metrics CSV columns, in order: `format_version`, `id`, `stream`,
//! `service`, `origin`, `ingress`, `issued_at`, `completed_at`,
//! `latency_ms`, `outcome`, `cold`, `replayed`, `subnet`.
//! Radial DOT: one node per radial node labelled `provider/stamp`, width
//! proportional to its units, filled by tier (Edge gray30, Periphery
//! gray60, Core gray85), and an edge from a `ue-origin` node labelled with
//! the radius.

use serde::Serialize;

use super::run::{MetricsReport, Percentiles, METRICS_FORMAT_VERSION};
use crate::ids::StampId;
use crate::placement::RadialModel;
use crate::simnet::RequestRecord;
use crate::topology::Tier;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricsFormat {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadialFormat {
    Json,
    Dot,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "format_version",
    "id",
    "stream",
    "service",
    "origin",
    "ingress",
    "issued_at",
    "completed_at",
    "latency_ms",
    "outcome",
    "cold",
    "replayed",
    "subnet",
];

#[derive(Serialize)]
struct SummaryLine<'a> {
    format_version: u32,
    record: &'static str,
    scenario: &'a str,
    seed: u64,
    requests: usize,
    ok: usize,
    failed: usize,
    latency: Option<Percentiles>,
    cold_starts: u64,
    migrations: u64,
    forced_restarts: usize,
    replay_hits: u64,
    replay_misses: u64,
    replay_hit_rate: Option<f64>,
    subnet_success: &'a std::collections::BTreeMap<StampId, u64>,
    final_assignment_cost: Option<f64>,
    trace_hash: &'a str,
    workload_hash: &'a str,
}

#[derive(Serialize)]
struct RequestLine<'a> {
    format_version: u32,
    record: &'static str,
    #[serde(flatten)]
    request: &'a RequestRecord,
}

pub fn export_metrics(report: &MetricsReport, format: MetricsFormat) -> Vec<u8> {
    match format {
        MetricsFormat::Jsonl => {
            let mut out = Vec::new();
            let summary = SummaryLine {
                format_version: METRICS_FORMAT_VERSION,
                record: "summary",
                scenario: &report.scenario,
                seed: report.seed,
                requests: report.requests.len(),
                ok: report.ok,
                failed: report.failed,
                latency: report.latency,
                cold_starts: report.cold_starts,
                migrations: report.migrations,
                forced_restarts: report.forced_restarts,
                replay_hits: report.replay_hits,
                replay_misses: report.replay_misses,
                replay_hit_rate: report.replay_hit_rate,
                subnet_success: &report.subnet_success,
                final_assignment_cost: report.final_assignment_cost,
                trace_hash: &report.trace_hash,
                workload_hash: &report.workload_hash,
            };
            serde_json::to_writer(&mut out, &summary).expect("summary serializes");
            out.push(b'\n');
            for r in &report.requests {
                let line = RequestLine {
                    format_version: METRICS_FORMAT_VERSION,
                    record: "request",
                    request: r,
                };
                serde_json::to_writer(&mut out, &line).expect("request serializes");
                out.push(b'\n');
            }
            out
        }
        MetricsFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("in-memory write");
            for r in &report.requests {
                w.write_record([
                    METRICS_FORMAT_VERSION.to_string(),
                    r.id.to_string(),
                    r.stream.clone(),
                    r.service.to_string(),
                    r.origin.to_string(),
                    r.ingress.to_string(),
                    r.issued_at.to_string(),
                    r.completed_at.to_string(),
                    r.latency_ms.to_string(),
                    r.outcome.to_string(),
                    r.cold.to_string(),
                    r.replayed.to_string(),
                    r.subnet.as_ref().map(|s| s.to_string()).unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

fn tier_fill(t: Tier) -> &'static str {
    match t {
        Tier::Edge => "gray30",
        Tier::Periphery => "gray60",
        Tier::Core => "gray85",
    }
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Inches of node width per resource unit in DOT output.
pub const DOT_INCHES_PER_UNIT: f64 = 0.25;

const ORIGIN_NODE: &str = "ue-origin";

pub fn export_radial(model: &RadialModel, format: RadialFormat) -> Vec<u8> {
    match format {
        RadialFormat::Json => {
            let mut out = serde_json::to_vec_pretty(model).expect("radial model serializes");
            out.push(b'\n');
            out
        }
        RadialFormat::Dot => {
            let mut s = String::from("digraph radial {\n  node [style=filled, fixedsize=true, fontsize=10];\n");
            s.push_str(&format!(
                "  {} [label={}, shape=doublecircle, fillcolor=white];\n",
                quoted(ORIGIN_NODE),
                quoted(&format!("UE {}", model.ue_origin))
            ));
            for n in &model.nodes {
                let id = quoted(&n.stamp_id.to_string());
                s.push_str(&format!(
                    "  {id} [label={}, width={}, class={}, fillcolor={}, axis={}];\n",
                    quoted(&format!("{}/{}", n.provider, n.stamp_id)),
                    n.size_units as f64 * DOT_INCHES_PER_UNIT,
                    quoted(&format!("tier-{}", n.tier.as_str().to_lowercase())),
                    tier_fill(n.tier),
                    n.provider_axis_index
                ));
                s.push_str(&format!(
                    "  {} -> {id} [label={}];\n",
                    quoted(ORIGIN_NODE),
                    quoted(&format!("{} ms", n.radius_ms))
                ));
            }
            s.push_str("}\n");
            s.into_bytes()
        }
    }
}
