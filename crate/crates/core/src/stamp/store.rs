//! Stamp-local storage that outlives any workload element.
//!
//! Every mutation is appended to an operation log stamped with a Lamport
//! clock. Keys resolve last-writer-wins by `(counter, stamp_id)`; recorded
//! exchanges are kept as a union in the log, and replay lookups see the
//! latest recording for a request key.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{ServiceId, StampId};
use crate::simnet::statelog::{merge_state_logs, LogError, LogPayload, StateLogEntry};

/// Totally ordered by `(counter, stamp_id)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LamportStamp {
    pub counter: u64,
    pub stamp_id: StampId,
}

impl LamportStamp {
    pub fn new(counter: u64, stamp_id: impl Into<StampId>) -> Self {
        Self {
            counter,
            stamp_id: stamp_id.into(),
        }
    }
}

/// Canonical identity of a request: service, method, and a SHA-256 digest
/// of the argument bytes, separated by U+001F.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestKey(String);

impl RequestKey {
    pub fn new(service: &ServiceId, method: &str, args: &[u8]) -> Self {
        let digest = hex::encode(Sha256::digest(args));
        Self(format!("{service}\u{1f}{method}\u{1f}{digest}"))
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub request_key: RequestKey,
    pub response: Vec<u8>,
    pub recorded_at: LamportStamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Replay<'a> {
    Hit(&'a [u8]),
    Miss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StampStore {
    owner: StampId,
    clock: u64,
    log: Vec<StateLogEntry>,
    entries: BTreeMap<String, (Vec<u8>, LamportStamp)>,
    exchanges: BTreeMap<RequestKey, RecordedExchange>,
}

impl StampStore {
    pub fn new(owner: impl Into<StampId>) -> Self {
        Self {
            owner: owner.into(),
            clock: 0,
            log: Vec::new(),
            entries: BTreeMap::new(),
            exchanges: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> &StampId {
        &self.owner
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn log(&self) -> &[StateLogEntry] {
        &self.log
    }

    fn tick(&mut self) -> LamportStamp {
        self.clock += 1;
        LamportStamp::new(self.clock, self.owner.clone())
    }

    fn index(&mut self, e: &StateLogEntry) {
        match &e.payload {
            LogPayload::KvWrite { key, value } => {
                let newer = self.entries.get(key).is_none_or(|(_, at)| e.lamport > *at);
                if newer {
                    self.entries.insert(key.clone(), (value.clone(), e.lamport.clone()));
                }
            }
            LogPayload::ExchangeRecord(x) => {
                let newer = self
                    .exchanges
                    .get(&x.request_key)
                    .is_none_or(|old| x.recorded_at > old.recorded_at);
                if newer {
                    self.exchanges.insert(x.request_key.clone(), x.clone());
                }
            }
        }
    }

    fn append(&mut self, payload: LogPayload) -> LamportStamp {
        let lamport = self.tick();
        let entry = StateLogEntry {
            origin: self.owner.clone(),
            lamport: lamport.clone(),
            payload,
        };
        self.index(&entry);
        // The fresh counter exceeds everything seen, so the log stays sorted.
        self.log.push(entry);
        lamport
    }

    pub fn put(&mut self, key: &str, value: &[u8]) -> LamportStamp {
        self.append(LogPayload::KvWrite {
            key: key.to_owned(),
            value: value.to_vec(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(|(v, _)| v.as_slice())
    }

    pub fn entries(&self) -> &BTreeMap<String, (Vec<u8>, LamportStamp)> {
        &self.entries
    }

    pub fn record_exchange(&mut self, request_key: RequestKey, response: &[u8]) -> LamportStamp {
        let at = LamportStamp::new(self.clock + 1, self.owner.clone());
        self.append(LogPayload::ExchangeRecord(RecordedExchange {
            request_key,
            response: response.to_vec(),
            recorded_at: at,
        }))
    }

    pub fn replay_lookup(&self, key: &RequestKey) -> Replay<'_> {
        match self.exchanges.get(key) {
            Some(x) => Replay::Hit(&x.response),
            None => Replay::Miss,
        }
    }

    pub fn exchange_count(&self) -> usize {
        self.exchanges.len()
    }

    /// Highest counter seen per origin.
    pub fn version_vector(&self) -> BTreeMap<StampId, u64> {
        let mut vv = BTreeMap::new();
        for e in &self.log {
            let c = vv.entry(e.origin.clone()).or_insert(0);
            *c = (*c).max(e.lamport.counter);
        }
        vv
    }

    /// Entries a peer with version vector `vv` has not seen.
    pub fn entries_since(&self, vv: &BTreeMap<StampId, u64>) -> Vec<StateLogEntry> {
        self.log
            .iter()
            .filter(|e| e.lamport.counter > vv.get(&e.origin).copied().unwrap_or(0))
            .cloned()
            .collect()
    }

    /// Merge a peer's entries into this store. The clock moves past every
    /// counter seen.
    pub fn merge_entries(&mut self, incoming: &[StateLogEntry]) -> Result<usize, LogError> {
        let merged = merge_state_logs(&self.log, incoming)?;
        let added = merged.len() - self.log.len();
        for e in incoming {
            self.index(e);
            self.clock = self.clock.max(e.lamport.counter);
        }
        self.log = merged;
        Ok(added)
    }

    /// Same log (and therefore same derived indexes).
    pub fn same_contents(&self, other: &StampStore) -> bool {
        self.log == other.log
    }
}
