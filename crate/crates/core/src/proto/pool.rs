//! Entangled-pair inventory shared by the two stations of a session, plus the
//! distillation and teleportation steps that consume it.
//!
//! An entry stands for both halves of a pair, so the two stations' memories
//! hold the same pair ids by construction.

use std::collections::VecDeque;

use serde::Serialize;

use super::ProtoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FidelityClass {
    Raw,
    Distilled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub pair_id: u64,
    pub created_at: f64,
    pub class: FidelityClass,
}

#[derive(Debug, Clone)]
pub struct EbitPool {
    pub owners: (u32, u32),
    pub coherence_time: f64,
    pub capacity: usize,
    entries: VecDeque<PoolEntry>,
    next_pair_id: u64,
}

impl EbitPool {
    pub fn new(owners: (u32, u32), coherence_time: f64, capacity: usize) -> Self {
        Self {
            owners,
            coherence_time,
            capacity,
            entries: VecDeque::new(),
            next_pair_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter()
    }

    fn push(&mut self, created_at: f64, class: FidelityClass) -> Option<u64> {
        if self.entries.len() >= self.capacity {
            return None;
        }
        let pair_id = self.next_pair_id;
        self.next_pair_id += 1;
        self.entries.push_back(PoolEntry {
            pair_id,
            created_at,
            class,
        });
        Some(pair_id)
    }

    /// Store a freshly arrived raw pair. `None` when memory is full.
    pub fn deposit_raw(&mut self, created_at: f64) -> Option<u64> {
        self.push(created_at, FidelityClass::Raw)
    }

    pub fn deposit_distilled(&mut self, created_at: f64) -> Option<u64> {
        self.push(created_at, FidelityClass::Distilled)
    }

    pub fn is_fresh(&self, entry: &PoolEntry, t: f64) -> bool {
        t - entry.created_at <= self.coherence_time
    }

    pub fn count(&self, class: FidelityClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    /// Entries of `class` still usable at time `t`.
    pub fn valid_count(&self, class: FidelityClass, t: f64) -> usize {
        self.entries
            .iter()
            .filter(|e| e.class == class && self.is_fresh(e, t))
            .count()
    }

    /// Drop everything older than the coherence time at `t`.
    pub fn purge_expired(&mut self, t: f64) -> usize {
        let before = self.entries.len();
        let coherence = self.coherence_time;
        self.entries.retain(|e| t - e.created_at <= coherence);
        before - self.entries.len()
    }

    /// Remove and return the oldest fresh distilled ebit, discarding any
    /// expired ones met on the way.
    pub fn consume_distilled(&mut self, t: f64) -> Option<PoolEntry> {
        loop {
            let idx = self.entries.iter().position(|e| e.class == FidelityClass::Distilled)?;
            let entry = self.entries.remove(idx)?;
            if self.is_fresh(&entry, t) {
                return Some(entry);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillationPolicy {
    pub rounds: u32,
    /// Distilled ebits per raw pair, in [0, 1].
    pub yield_rate: f64,
}

impl DistillationPolicy {
    pub fn new(rounds: u32, yield_rate: f64) -> Result<Self, ProtoError> {
        if rounds == 0 {
            return Err(ProtoError::InvalidPolicy("rounds must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&yield_rate) {
            return Err(ProtoError::InvalidPolicy(format!(
                "yield_rate {yield_rate} outside [0, 1]"
            )));
        }
        Ok(Self { rounds, yield_rate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillOutcome {
    /// Raw pairs still within coherence at completion.
    pub raw_valid: u64,
    pub distilled: u64,
    pub completed_at: f64,
}

/// Distill the raw pairs in `pool`, starting at `t_start`.
///
/// Completion lands `policy.rounds` ground-to-ground round trips later. Raw
/// pairs that are still fresh at completion feed
/// `floor(n_valid * yield_rate)` distilled ebits stamped with the completion
/// time; all raw entries are then released.
pub fn distill(
    pool: &mut EbitPool,
    policy: &DistillationPolicy,
    t_start: f64,
    round_trip_time: f64,
) -> Result<DistillOutcome, ProtoError> {
    let completed_at = t_start + policy.rounds as f64 * round_trip_time;
    let raw_valid = pool.valid_count(FidelityClass::Raw, completed_at) as u64;
    let distilled = (raw_valid as f64 * policy.yield_rate).floor() as u64;
    pool.entries.retain(|e| e.class != FidelityClass::Raw);
    if raw_valid == 0 || distilled == 0 {
        return Err(ProtoError::InsufficientEntanglement { raw_valid, distilled });
    }
    let mut created = 0;
    for _ in 0..distilled {
        if pool.deposit_distilled(completed_at).is_none() {
            break;
        }
        created += 1;
    }
    Ok(DistillOutcome {
        raw_valid,
        distilled: created,
        completed_at,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleportOutcome {
    pub delivered: u64,
    pub classical_bits: u64,
    pub consumed: Vec<PoolEntry>,
    /// When the last classical correction reaches the receiver.
    pub arrival_time: f64,
}

/// Teleport up to `qubits` qubits at time `t`, one distilled ebit and two
/// classical bits each. Stops early when no fresh ebit remains.
pub fn teleport(pool: &mut EbitPool, qubits: u64, t: f64, one_way_delay: f64) -> TeleportOutcome {
    let mut consumed = Vec::new();
    while (consumed.len() as u64) < qubits {
        match pool.consume_distilled(t) {
            Some(e) => consumed.push(e),
            None => break,
        }
    }
    let delivered = consumed.len() as u64;
    TeleportOutcome {
        delivered,
        classical_bits: 2 * delivered,
        consumed,
        arrival_time: t + one_way_delay,
    }
}
