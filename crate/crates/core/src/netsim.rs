//! Rural-network simulation: intermittent availability, bandwidth-limited
//! links, per-client offline queues and a deterministic event queue.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub uplink_bps: f64,
    pub downlink_bps: f64,
    pub base_latency_s: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            uplink_bps: 1e6,
            downlink_bps: 1e6,
            base_latency_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.uplink_bps > 0.0 && self.uplink_bps.is_finite()) {
            return Err(Error::config("network.uplink_bps", "must be positive"));
        }
        if !(self.downlink_bps > 0.0 && self.downlink_bps.is_finite()) {
            return Err(Error::config("network.downlink_bps", "must be positive"));
        }
        if !(self.base_latency_s >= 0.0 && self.base_latency_s.is_finite()) {
            return Err(Error::config("network.base_latency_s", "must be non-negative"));
        }
        Ok(())
    }
}

/// `latency + 8·bytes / bandwidth` seconds.
pub fn transmit_time(bytes: u64, link: &LinkModel, direction: Direction) -> f64 {
    let bps = match direction {
        Direction::Up => link.uplink_bps,
        Direction::Down => link.downlink_bps,
    };
    link.base_latency_s + 8.0 * bytes as f64 / bps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityModel {
    pub p_available: f64,
}

impl Default for AvailabilityModel {
    fn default() -> Self {
        AvailabilityModel { p_available: 0.5 }
    }
}

/// Bernoulli(p) draw keyed by `(seed, client, round)` alone.
pub fn sample_available(client: usize, round: u64, model: &AvailabilityModel, seed: u64) -> bool {
    let mut rng = seed::derived_rng(
        seed,
        &[seed::stream::AVAILABILITY, client as u64, round],
    );
    rng.random::<f64>() < model.p_available
}

/// Updates waiting for a connection, oldest first.
#[derive(Debug, Clone)]
pub struct OfflineQueue<T> {
    pending: VecDeque<T>,
}

impl<T> Default for OfflineQueue<T> {
    fn default() -> Self {
        OfflineQueue {
            pending: VecDeque::new(),
        }
    }
}

impl<T> OfflineQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `update` behind anything already waiting; when `available`,
    /// drains the whole queue in generation order.
    pub fn defer_or_send(&mut self, update: T, available: bool) -> Vec<T> {
        self.pending.push_back(update);
        if available {
            self.pending.drain(..).collect()
        } else {
            Vec::new()
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: f64,
    /// Insertion counter; breaks ties between equal timestamps.
    pub seq: u64,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Min-queue on `(time, insertion order)`.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Event<P>>>,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, payload: P) -> Result<u64> {
        if !time.is_finite() {
            return Err(Error::invalid("time", format!("{time} is not finite")));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, payload }));
        Ok(seq)
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
