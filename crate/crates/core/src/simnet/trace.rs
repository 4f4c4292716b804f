//! Applied-event trace and its digest.
//!
//! One record per applied event, serialized as a JSON object per line with
//! fields in the order `seq`, `at`, `kind`, `stamp`, `detail`. Exported
//! files start with a `{"format_version":N}` header line, which the digest
//! does not cover.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Digest of an empty trace: the FNV-1a 64-bit offset basis.
pub const EMPTY_TRACE_HASH: u64 = 0xcbf2_9ce4_8422_2325;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub at: f64,
    pub kind: String,
    pub stamp: Option<String>,
    pub detail: String,
}

pub fn trace_line(r: &TraceRecord) -> String {
    serde_json::to_string(r).expect("trace records always serialize")
}

/// Newline-terminated JSON lines after a version header.
pub fn export_trace(trace: &[TraceRecord]) -> String {
    let mut out = format!("{{\"format_version\":{TRACE_FORMAT_VERSION}}}\n");
    for r in trace {
        out.push_str(&trace_line(r));
        out.push('\n');
    }
    out
}

/// FNV-1a 64 over the JSON-lines serialization.
pub fn trace_hash(trace: &[TraceRecord]) -> u64 {
    let mut h = FnvHasher::default();
    for r in trace {
        h.write(trace_line(r).as_bytes());
        h.write(b"\n");
    }
    h.finish()
}
