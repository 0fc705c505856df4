//! Two-phase axonal delay subsystem.
//!
//! TX moves staged placements into sixteen bounded delay-class queues; RX
//! draws a gated random class and drains a burst from it. Class `i` is picked
//! with probability proportional to `1/i`, so the mean residence time of class
//! `i` is about `i` times that of class 1.

use std::collections::VecDeque;

use thiserror::Error;

use crate::fixed::{Count4, MiniAddr};
use crate::neuron::NEURON_TYPES;
use crate::param_lut::PostConnection;
use crate::rng::RngStream;

pub const DELAY_CLASSES: usize = 16;
pub const PROB_BITS: u32 = 20;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
pub const GATE_MAX: u16 = 1023;
pub const DEFAULT_CLASS_CAPACITY: usize = 1 << 20;
pub const DEFAULT_STAGING_CAPACITY: usize = 4096;
pub const DEFAULT_BURST: usize = 64;
/// Staging occupancy above this fraction raises backpressure.
pub const BACKPRESSURE_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AxonError {
    #[error("delay class {class} queue is full ({capacity} events)")]
    ClassFull { class: u8, capacity: usize },
    #[error("delay class {0} outside 1..=16")]
    BadClass(u8),
    #[error("gate value {0} exceeds 1023")]
    BadGate(u16),
    #[error("burst must be at least 1")]
    ZeroBurst,
}

/// Source address plus per-type spike counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub source: MiniAddr,
    pub counts: [Count4; NEURON_TYPES],
}

impl Event {
    pub fn is_silent(&self) -> bool {
        self.counts.iter().all(|c| c.get() == 0)
    }
}

/// One replica of an event headed for one connection slot.
///
/// `stamp` is the opportunity index at which it entered its class queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayedEvent {
    pub source: MiniAddr,
    pub counts: [Count4; NEURON_TYPES],
    pub slot: u8,
    pub delay_class: u8,
    pub stamp: u64,
}

/// Odd classes live in bank A, even classes in bank B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bank {
    A,
    B,
}

impl Bank {
    pub fn of_class(class: u8) -> Bank {
        if class % 2 == 1 {
            Bank::A
        } else {
            Bank::B
        }
    }

    fn index(self) -> usize {
        match self {
            Bank::A => 0,
            Bank::B => 1,
        }
    }
}

/// Exact harmonic number `H_n` as a reduced fraction.
pub fn harmonic(n: u64) -> (u128, u128) {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let (mut num, mut den) = (0u128, 1u128);
    for i in 1..=n as u128 {
        num = num * i + den;
        den *= i;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    (num, den)
}

/// Class weights `R_i = round(2^20 / (i * H_16))` and cumulative thresholds.
pub fn delay_thresholds() -> ([u32; DELAY_CLASSES], [u32; DELAY_CLASSES + 1]) {
    let (num, den) = harmonic(DELAY_CLASSES as u64);
    let mut r = [0u32; DELAY_CLASSES];
    let mut t = [0u32; DELAY_CLASSES + 1];
    for i in 0..DELAY_CLASSES {
        // round(2^20 * den / (num * (i + 1))) in exact integer arithmetic
        let q = (PROB_ONE as u128) * den;
        let d = num * (i as u128 + 1);
        r[i] = ((2 * q + d) / (2 * d)) as u32;
        t[i + 1] = t[i] + r[i];
    }
    (r, t)
}

/// Class probabilities, thresholds and the global readout gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayGenerator {
    pub r: [u32; DELAY_CLASSES],
    pub t: [u32; DELAY_CLASSES + 1],
    f: u16,
}

impl DelayGenerator {
    pub fn new(f: u16) -> Result<Self, AxonError> {
        if f > GATE_MAX {
            return Err(AxonError::BadGate(f));
        }
        let (r, t) = delay_thresholds();
        Ok(Self { r, t, f })
    }

    pub fn gate(&self) -> u16 {
        self.f
    }

    /// Readout is enabled when `f <= u10`.
    #[inline]
    pub fn gate_open(&self, rng: &mut RngStream) -> bool {
        self.f <= rng.draw10()
    }

    /// Class `i` (1-based) with `T[i-1] <= u < T[i]`. The rounding slack past
    /// `T[16]` falls into class 16.
    #[inline]
    pub fn select(&self, u: u32) -> u8 {
        let idx = self.t[1..].partition_point(|&x| x <= u);
        (idx.min(DELAY_CLASSES - 1) + 1) as u8
    }

    /// Gate value that makes the class-1 mean wait about
    /// `opportunities_per_step` opportunities when queues are lightly loaded.
    /// Half of all opportunities cannot read a given bank, hence the factor 2.
    pub fn calibrated_gate(opportunities_per_step: usize) -> u16 {
        let p1 = delay_thresholds().0[0] as f64 / PROB_ONE as f64;
        let open = 2.0 / (opportunities_per_step as f64 * p1);
        (1024.0 - 1024.0 * open.min(1.0))
            .round()
            .clamp(0.0, GATE_MAX as f64) as u16
    }
}

/// Sixteen bounded FIFO queues, one per delay class.
#[derive(Clone, Debug)]
pub struct DelayStore {
    queues: Vec<VecDeque<DelayedEvent>>,
    capacity: usize,
}

impl DelayStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            queues: (0..DELAY_CLASSES).map(|_| VecDeque::new()).collect(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn queue(&self, class: u8) -> Result<&VecDeque<DelayedEvent>, AxonError> {
        if !(1..=DELAY_CLASSES as u8).contains(&class) {
            return Err(AxonError::BadClass(class));
        }
        Ok(&self.queues[class as usize - 1])
    }

    pub fn len(&self, class: u8) -> usize {
        self.queue(class).map_or(0, |q| q.len())
    }

    pub fn total(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn push(&mut self, ev: DelayedEvent) -> Result<(), AxonError> {
        let q = self.queue(ev.delay_class)?;
        if q.len() >= self.capacity {
            return Err(AxonError::ClassFull {
                class: ev.delay_class,
                capacity: self.capacity,
            });
        }
        self.queues[ev.delay_class as usize - 1].push_back(ev);
        Ok(())
    }

    /// Appends one placement per enabled slot directly to the class queues.
    /// Either every placement is appended or none is.
    pub fn tx_enqueue(
        &mut self,
        ev: &Event,
        post: &PostConnection,
        stamp: u64,
    ) -> Result<Vec<DelayedEvent>, AxonError> {
        let placements = placements(ev, post, stamp);
        let mut need = [0usize; DELAY_CLASSES];
        for p in &placements {
            need[p.delay_class as usize - 1] += 1;
        }
        for (i, &n) in need.iter().enumerate() {
            if n > 0 && self.queues[i].len() + n > self.capacity {
                return Err(AxonError::ClassFull {
                    class: i as u8 + 1,
                    capacity: self.capacity,
                });
            }
        }
        for p in &placements {
            self.queues[p.delay_class as usize - 1].push_back(*p);
        }
        Ok(placements)
    }

    pub fn pop_burst(&mut self, class: u8, burst: usize, out: &mut Vec<DelayedEvent>) {
        let q = &mut self.queues[class as usize - 1];
        let n = burst.min(q.len());
        out.extend(q.drain(..n));
    }
}

/// One `DelayedEvent` per enabled slot of `post`, in slot order.
pub fn placements(ev: &Event, post: &PostConnection, stamp: u64) -> Vec<DelayedEvent> {
    post.enabled()
        .map(|(slot, delay)| DelayedEvent {
            source: ev.source,
            counts: ev.counts,
            slot,
            delay_class: delay,
            stamp,
        })
        .collect()
}

/// Realized residence statistics, in opportunities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayStats {
    pub count: [u64; DELAY_CLASSES],
    pub residence_sum: [u64; DELAY_CLASSES],
}

impl DelayStats {
    pub fn mean(&self, class: u8) -> Option<f64> {
        let i = class as usize - 1;
        (self.count[i] > 0).then(|| self.residence_sum[i] as f64 / self.count[i] as f64)
    }
}

#[derive(Clone, Debug)]
pub struct AxonConfig {
    pub gate: u16,
    pub burst: usize,
    pub class_capacity: usize,
    pub staging_capacity: usize,
}

impl Default for AxonConfig {
    fn default() -> Self {
        Self {
            gate: 0,
            burst: DEFAULT_BURST,
            class_capacity: DEFAULT_CLASS_CAPACITY,
            staging_capacity: DEFAULT_STAGING_CAPACITY,
        }
    }
}

/// Staging FIFOs (one per bank) in front of the delay store.
///
/// Opportunity `k` gives TX bank A when `k` is even and bank B when odd; TX
/// moves up to `burst` placements from that bank's staging FIFO into the
/// store, and RX may only read from the other bank.
#[derive(Clone, Debug)]
pub struct AxonArray {
    generator: DelayGenerator,
    store: DelayStore,
    staging: [VecDeque<DelayedEvent>; 2],
    staging_capacity: usize,
    burst: usize,
    opportunity: u64,
    stats: DelayStats,
    enqueued: u64,
    consumed: u64,
}

impl AxonArray {
    pub fn new(cfg: &AxonConfig) -> Result<Self, AxonError> {
        if cfg.burst == 0 {
            return Err(AxonError::ZeroBurst);
        }
        Ok(Self {
            generator: DelayGenerator::new(cfg.gate)?,
            store: DelayStore::new(cfg.class_capacity),
            staging: [VecDeque::new(), VecDeque::new()],
            staging_capacity: cfg.staging_capacity.max(1),
            burst: cfg.burst,
            opportunity: 0,
            stats: DelayStats::default(),
            enqueued: 0,
            consumed: 0,
        })
    }

    pub fn generator(&self) -> &DelayGenerator {
        &self.generator
    }

    pub fn store(&self) -> &DelayStore {
        &self.store
    }

    pub fn stats(&self) -> &DelayStats {
        &self.stats
    }

    pub fn opportunities(&self) -> u64 {
        self.opportunity
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn staged(&self) -> usize {
        self.staging[0].len() + self.staging[1].len()
    }

    /// Events staged or stored but not yet read out.
    pub fn in_flight(&self) -> usize {
        self.staged() + self.store.total()
    }

    pub fn backpressure(&self) -> bool {
        self.staged() as f64 > BACKPRESSURE_FRACTION * self.staging_capacity as f64
    }

    /// Stages one placement per enabled slot. Returns the placement count.
    pub fn tx_enqueue(&mut self, ev: &Event, post: &PostConnection) -> usize {
        let mut n = 0;
        for p in placements(ev, post, 0) {
            self.staging[Bank::of_class(p.delay_class).index()].push_back(p);
            n += 1;
        }
        self.enqueued += n as u64;
        n
    }

    /// One TX phase followed by one RX phase. Returns the events read out.
    pub fn opportunity(&mut self, rng: &mut RngStream) -> Vec<DelayedEvent> {
        let stamp = self.opportunity;
        self.opportunity += 1;

        let tx_bank = self.tx_phase(stamp);

        let mut out = Vec::new();
        if !self.generator.gate_open(rng) {
            return out;
        }
        let class = self.generator.select(rng.draw20());
        if Bank::of_class(class) == tx_bank {
            return out;
        }
        self.store.pop_burst(class, self.burst, &mut out);
        for ev in &out {
            let i = ev.delay_class as usize - 1;
            self.stats.count[i] += 1;
            self.stats.residence_sum[i] += stamp - ev.stamp;
        }
        self.consumed += out.len() as u64;
        out
    }

    fn tx_phase(&mut self, stamp: u64) -> Bank {
        let bank = if stamp.is_multiple_of(2) {
            Bank::A
        } else {
            Bank::B
        };
        let fifo = &mut self.staging[bank.index()];
        for _ in 0..self.burst {
            let Some(mut p) = fifo.front().copied() else {
                break;
            };
            p.stamp = stamp;
            if self.store.push(p).is_err() {
                break;
            }
            fifo.pop_front();
        }
        bank
    }
}
