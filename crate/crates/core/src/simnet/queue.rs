//! Virtual-time event queue ordered by `(at, seq)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum QueueError {
    #[error("event at {at} ms is before the current time {now} ms")]
    SchedulingInPast { at: f64, now: f64 },
    #[error("event time {0} is not a finite number")]
    NonFiniteTime(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent<E> {
    pub at: f64,
    /// Unique, increasing in scheduling order; breaks ties on `at`.
    pub seq: u64,
    pub payload: E,
}

impl<E> Eq for SimEvent<E> where E: PartialEq {}

impl<E: PartialEq> Ord for SimEvent<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

impl<E: PartialEq> PartialOrd for SimEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<SimEvent<E>>,
    next_seq: u64,
    now: f64,
}

impl<E: PartialEq> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: PartialEq> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
        }
    }

    /// Time of the last popped event.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: f64, payload: E) -> Result<u64, QueueError> {
        if !at.is_finite() {
            return Err(QueueError::NonFiniteTime(at));
        }
        if at < self.now {
            return Err(QueueError::SchedulingInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { at, seq, payload });
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn pop(&mut self) -> Option<SimEvent<E>> {
        let ev = self.heap.pop()?;
        self.now = ev.at;
        Some(ev)
    }

    /// Pop the next event if it is due no later than `t_end`.
    pub fn pop_until(&mut self, t_end: f64) -> Option<SimEvent<E>> {
        match self.peek_time() {
            Some(at) if at <= t_end => self.pop(),
            _ => None,
        }
    }

    /// Move the clock forward without an event.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_then_pop() {
        let mut q = EventQueue::new();
        q.schedule(5.0, "a").unwrap();
        let e = q.pop().unwrap();
        assert_eq!((e.at, e.payload), (5.0, "a"));
        assert_eq!(q.now(), 5.0);
        assert!(q.pop().is_none());
    }

    #[test]
    fn same_time_pops_in_seq_order() {
        let mut q = EventQueue::new();
        for p in ["x", "y", "z"] {
            q.schedule(1.0, p).unwrap();
        }
        q.schedule(0.5, "first").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(order, ["first", "x", "y", "z"]);
    }

    #[test]
    fn past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(10.0, ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(9.0, ()),
            Err(QueueError::SchedulingInPast { at: 9.0, now: 10.0 })
        );
        assert!(q.schedule(10.0, ()).is_ok());
        assert!(matches!(q.schedule(f64::NAN, ()), Err(QueueError::NonFiniteTime(_))));
    }

    #[test]
    fn pop_until_respects_horizon() {
        let mut q = EventQueue::new();
        q.schedule(1.0, 1).unwrap();
        q.schedule(3.0, 3).unwrap();
        assert_eq!(q.pop_until(2.0).map(|e| e.payload), Some(1));
        assert!(q.pop_until(2.0).is_none());
        assert_eq!(q.len(), 1);
    }
}
