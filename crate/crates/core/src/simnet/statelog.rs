//! Replicated per-stamp operation logs and their merge.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::StampId;
use crate::stamp::store::{LamportStamp, RecordedExchange};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogPayload {
    KvWrite { key: String, value: Vec<u8> },
    ExchangeRecord(RecordedExchange),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLogEntry {
    pub origin: StampId,
    pub lamport: LamportStamp,
    pub payload: LogPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("entries from `{origin}` are not strictly increasing at counter {counter}")]
    NonMonotonic { origin: StampId, counter: u64 },
    #[error("entry origin `{origin}` does not match its lamport stamp `{stamp}`")]
    OriginMismatch { origin: StampId, stamp: StampId },
    #[error("two different entries claim ({counter}, {origin})")]
    Conflict { origin: StampId, counter: u64 },
}

fn check(log: &[StateLogEntry]) -> Result<(), LogError> {
    let mut last: BTreeMap<&StampId, u64> = BTreeMap::new();
    for e in log {
        if e.origin != e.lamport.stamp_id {
            return Err(LogError::OriginMismatch {
                origin: e.origin.clone(),
                stamp: e.lamport.stamp_id.clone(),
            });
        }
        if let Some(prev) = last.insert(&e.origin, e.lamport.counter) {
            if e.lamport.counter <= prev {
                return Err(LogError::NonMonotonic {
                    origin: e.origin.clone(),
                    counter: e.lamport.counter,
                });
            }
        }
    }
    Ok(())
}

/// Union of two logs, de-duplicated by `(origin, counter)` and ordered by
/// `(counter, origin)`. Commutative and idempotent.
pub fn merge_state_logs(a: &[StateLogEntry], b: &[StateLogEntry]) -> Result<Vec<StateLogEntry>, LogError> {
    check(a)?;
    check(b)?;
    let mut merged: BTreeMap<(u64, &StampId), &StateLogEntry> = BTreeMap::new();
    for e in a.iter().chain(b) {
        let key = (e.lamport.counter, &e.origin);
        match merged.get(&key) {
            Some(existing) if *existing != e => {
                return Err(LogError::Conflict {
                    origin: e.origin.clone(),
                    counter: e.lamport.counter,
                })
            }
            Some(_) => {}
            None => {
                merged.insert(key, e);
            }
        }
    }
    Ok(merged.into_values().cloned().collect())
}
