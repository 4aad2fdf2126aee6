//! Discrete-event core: a simulated clock, a `(time, seq)`-ordered queue and
//! keyed random streams.
//!
//! The queue never reorders events that share a timestamp: ties are broken by
//! the sequence number handed out at `schedule` time, so two runs that schedule
//! the same events in the same order observe the same trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ScheduleError {
    #[error("cannot schedule at t={requested} s, clock is already at t={now} s")]
    InPast { requested: f64, now: f64 },
    #[error("event time must be finite, got {0}")]
    NonFinite(f64),
}

#[derive(Debug, Error)]
pub enum RunError<E: fmt::Debug + fmt::Display> {
    #[error("run_until({t_end}) is behind the clock at {now}")]
    EndInPast { t_end: f64, now: f64 },
    #[error("handler failed on event #{seq} at t={time} s: {source}")]
    Handler { seq: u64, time: f64, source: E },
}

/// A scheduled occurrence. `seq` is assigned by the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: f64,
    pub seq: u64,
    pub payload: P,
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // reversed: BinaryHeap is a max-heap and we want the earliest on top
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

pub struct EventQueue<P> {
    now: f64,
    next_seq: u64,
    processed: u64,
    heap: BinaryHeap<Entry<P>>,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::starting_at(0.0)
    }

    pub fn starting_at(t0: f64) -> Self {
        Self {
            now: t0,
            next_seq: 0,
            processed: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, time: f64, payload: P) -> Result<u64, ScheduleError> {
        if !time.is_finite() {
            return Err(ScheduleError::NonFinite(time));
        }
        if time < self.now {
            return Err(ScheduleError::InPast {
                requested: time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { time, seq, payload }));
        Ok(seq)
    }

    /// Schedule `delay` seconds after the current clock.
    pub fn schedule_in(&mut self, delay: f64, payload: P) -> Result<u64, ScheduleError> {
        self.schedule(self.now + delay, payload)
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn scheduled_count(&self) -> u64 {
        self.next_seq
    }

    pub fn processed_count(&self) -> u64 {
        self.processed
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Pop the next event if it is due at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: f64) -> Option<Event<P>> {
        if self.peek_time()? > t_end {
            return None;
        }
        let Entry(ev) = self.heap.pop()?;
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Process every event with `time <= t_end`, then park the clock at
    /// `t_end`. Returns the number of events handled by this call.
    pub fn run_until<F, E>(&mut self, t_end: f64, mut handler: F) -> Result<u64, RunError<E>>
    where
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
        E: fmt::Debug + fmt::Display,
    {
        if t_end < self.now {
            return Err(RunError::EndInPast { t_end, now: self.now });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            let (seq, time) = (ev.seq, ev.time);
            count += 1;
            handler(self, ev).map_err(|source| RunError::Handler { seq, time, source })?;
        }
        self.now = t_end;
        Ok(count)
    }
}

/// Module tags for [`StreamKey`]. Values are part of the reproducibility
/// contract and must not be renumbered.
pub mod tags {
    pub const GENERIC: u32 = 0;
    pub const DOWNLINK: u32 = 1;
    pub const UPLINK: u32 = 2;
    pub const SWEEP: u32 = 3;
    pub const DISTRIBUTION: u32 = 4;
    pub const YIELD: u32 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub tag: u32,
    pub entity: u64,
    pub index: u64,
}

impl StreamKey {
    pub const fn new(tag: u32, entity: u64, index: u64) -> Self {
        Self { tag, entity, index }
    }
}

/// A reproducible random stream.
///
/// Algorithm: ChaCha8 keyed by the 256-bit seed
/// `root_seed (LE u64) | tag (LE u32) | 0u32 | entity (LE u64) | index (LE u64)`.
/// The key-to-seed map is injective, so distinct keys select distinct
/// ChaCha keys. ChaCha's block counter gives random access, which
/// [`RngStream::uniform_at`] uses for counter-based draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    key: StreamKey,
    root_seed: u64,
}

impl RngStream {
    pub fn new(root_seed: u64, key: StreamKey) -> Self {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&root_seed.to_le_bytes());
        seed[8..12].copy_from_slice(&key.tag.to_le_bytes());
        seed[16..24].copy_from_slice(&key.entity.to_le_bytes());
        seed[24..32].copy_from_slice(&key.index.to_le_bytes());
        Self {
            rng: ChaCha8Rng::from_seed(seed),
            key,
            root_seed,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Uniform draw in [0, 1) from the next 64 bits of the stream.
    pub fn uniform(&mut self) -> f64 {
        u64_to_unit(self.rng.next_u64())
    }

    /// Uniform in [0, 1) at absolute position `counter`, independent of how
    /// much of the stream has been consumed. Does not move the sequential
    /// cursor.
    pub fn uniform_at(&self, counter: u64) -> f64 {
        let mut probe = self.rng.clone();
        probe.set_word_pos(counter as u128 * 2);
        u64_to_unit(probe.next_u64())
    }
}

fn u64_to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Open a keyed stream under `root_seed`.
pub fn stream(root_seed: u64, key: StreamKey) -> RngStream {
    RngStream::new(root_seed, key)
}

/// Seconds to integer nanoseconds, ties to even. Negative and non-finite
/// inputs saturate to the `u64` range.
pub fn seconds_to_ns(t: f64) -> u64 {
    let ns = (t * 1e9).round_ties_even();
    if ns.is_nan() || ns <= 0.0 {
        0
    } else if ns >= u64::MAX as f64 {
        u64::MAX
    } else {
        ns as u64
    }
}

pub fn ns_to_seconds(ns: u64) -> f64 {
    ns as f64 * 1e-9
}
