//! Acoustic medium shared by all modems.
//!
//! Each frame occupies its sender's link for `(3 + len) / rate` seconds; the
//! link is serialized FIFO per sender. Every receiver gets the frame after
//! the transmission ends plus the propagation delay for its distance, unless
//! an independent seeded loss draw drops that copy.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PAYLOAD: usize = 64;
pub const HEADER_BYTES: usize = 3;
pub const BROADCAST: u8 = 255;
pub const NS_PER_S: i64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediumError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte frame limit")]
    PayloadTooLong(usize),
    #[error("unknown address {0}")]
    UnknownAddress(u8),
    #[error("address {0} is reserved")]
    ReservedAddress(u8),
    #[error("address {0} already registered")]
    DuplicateAddress(u8),
    #[error("invalid medium config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub src: u8,
    pub dest: u8,
    payload: Vec<u8>,
}

impl Frame {
    pub fn new(src: u8, dest: u8, payload: Vec<u8>) -> Result<Self, MediumError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(MediumError::PayloadTooLong(payload.len()));
        }
        Ok(Self { src, dest, payload })
    }

    pub fn len(&self) -> u8 {
        self.payload.len() as u8
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn wire_bytes(&self) -> u32 {
        (HEADER_BYTES + self.payload.len()) as u32
    }

    pub fn is_broadcast(&self) -> bool {
        self.dest == BROADCAST
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub a: u8,
    pub b: u8,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediumConfig {
    pub rate_bytes_per_s: u32,
    pub sound_speed_m_per_s: f64,
    /// Unordered address pairs; pairs not listed are at distance 0.
    pub distances: Vec<Distance>,
    pub loss_prob: f64,
    /// Loss seed. When absent the simulation seed is used.
    pub seed: Option<u64>,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self { rate_bytes_per_s: 64, sound_speed_m_per_s: 1500.0, distances: Vec::new(), loss_prob: 0.0, seed: None }
    }
}

impl MediumConfig {
    pub fn validate(&self) -> Result<(), MediumError> {
        let bad = |msg: String| Err(MediumError::InvalidConfig(msg));
        if self.rate_bytes_per_s == 0 {
            return bad("rate_bytes_per_s must be > 0".into());
        }
        if !(self.sound_speed_m_per_s.is_finite() && self.sound_speed_m_per_s > 0.0) {
            return bad("sound_speed_m_per_s must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad("loss_prob must be within [0, 1]".into());
        }
        if let Some(d) = self.distances.iter().find(|d| !(d.m.is_finite() && d.m >= 0.0)) {
            return bad(format!("distance {}-{} must be a finite value >= 0", d.a, d.b));
        }
        Ok(())
    }

    /// Transmission time in nanoseconds, rounded up so a sender never
    /// exceeds the configured rate.
    pub fn tx_duration_ns(&self, wire_bytes: u32) -> i64 {
        let num = wire_bytes as i128 * NS_PER_S as i128;
        let rate = self.rate_bytes_per_s as i128;
        ((num + rate - 1) / rate) as i64
    }
}

/// One frame on one sender's link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub frame_seq: u64,
    pub src: u8,
    pub dest: u8,
    pub start_ns: i64,
    pub end_ns: i64,
    pub wire_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverOutcome {
    Delivered { dest: u8, t_deliver_ns: i64 },
    Dropped { dest: u8 },
}

impl ReceiverOutcome {
    pub fn dest(&self) -> u8 {
        match *self {
            ReceiverOutcome::Delivered { dest, .. } | ReceiverOutcome::Dropped { dest } => dest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendReport {
    pub transmission: Transmission,
    pub outcomes: Vec<ReceiverOutcome>,
}

impl SendReport {
    pub fn all_dropped(&self) -> bool {
        self.outcomes.iter().all(|o| matches!(o, ReceiverOutcome::Dropped { .. }))
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` that depends only on its inputs.
pub(crate) fn unit_draw(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix64(mix64(mix64(seed) ^ a) ^ b);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub struct Medium {
    config: MediumConfig,
    seed: u64,
    distances: BTreeMap<(u8, u8), f64>,
    registered: BTreeSet<u8>,
    link_free_ns: BTreeMap<u8, i64>,
    next_frame_seq: u64,
    // per sender, in start order
    log: BTreeMap<u8, Vec<Transmission>>,
}

fn pair_key(a: u8, b: u8) -> (u8, u8) {
    (a.min(b), a.max(b))
}

impl Medium {
    pub fn new(config: MediumConfig, default_seed: u64) -> Result<Self, MediumError> {
        config.validate()?;
        let distances = config.distances.iter().map(|d| (pair_key(d.a, d.b), d.m)).collect();
        Ok(Self {
            seed: config.seed.unwrap_or(default_seed),
            config,
            distances,
            registered: BTreeSet::new(),
            link_free_ns: BTreeMap::new(),
            next_frame_seq: 0,
            log: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &MediumConfig {
        &self.config
    }

    pub fn register(&mut self, addr: u8) -> Result<(), MediumError> {
        if addr == 0 || addr == BROADCAST {
            return Err(MediumError::ReservedAddress(addr));
        }
        if !self.registered.insert(addr) {
            return Err(MediumError::DuplicateAddress(addr));
        }
        Ok(())
    }

    pub fn addresses(&self) -> impl Iterator<Item = u8> + '_ {
        self.registered.iter().copied()
    }

    pub fn distance_m(&self, a: u8, b: u8) -> f64 {
        self.distances.get(&pair_key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn propagation_ns(&self, a: u8, b: u8) -> i64 {
        (self.distance_m(a, b) / self.config.sound_speed_m_per_s * NS_PER_S as f64).round() as i64
    }

    /// Queues `frame` on its sender's link and decides, per receiver, the
    /// delivery time or a drop.
    pub fn schedule_send(&mut self, frame: &Frame, t_submit_ns: i64) -> Result<SendReport, MediumError> {
        if !self.registered.contains(&frame.src) {
            return Err(MediumError::UnknownAddress(frame.src));
        }
        let receivers: Vec<u8> = if frame.is_broadcast() {
            self.registered.iter().copied().filter(|&a| a != frame.src).collect()
        } else if self.registered.contains(&frame.dest) && frame.dest != frame.src {
            vec![frame.dest]
        } else {
            return Err(MediumError::UnknownAddress(frame.dest));
        };

        let wire_bytes = frame.wire_bytes();
        let link_free = self.link_free_ns.get(&frame.src).copied().unwrap_or(i64::MIN);
        let start_ns = t_submit_ns.max(link_free);
        let end_ns = start_ns + self.config.tx_duration_ns(wire_bytes);
        self.link_free_ns.insert(frame.src, end_ns);

        let frame_seq = self.next_frame_seq;
        self.next_frame_seq += 1;
        let transmission = Transmission { frame_seq, src: frame.src, dest: frame.dest, start_ns, end_ns, wire_bytes };
        self.log.entry(frame.src).or_default().push(transmission);

        let outcomes = receivers
            .into_iter()
            .map(|dest| {
                if unit_draw(self.seed, frame_seq, dest as u64) < self.config.loss_prob {
                    ReceiverOutcome::Dropped { dest }
                } else {
                    ReceiverOutcome::Delivered { dest, t_deliver_ns: end_ns + self.propagation_ns(frame.src, dest) }
                }
            })
            .collect();
        Ok(SendReport { transmission, outcomes })
    }

    pub fn transmissions(&self, src: u8) -> &[Transmission] {
        self.log.get(&src).map_or(&[], Vec::as_slice)
    }

    pub fn senders(&self) -> impl Iterator<Item = u8> + '_ {
        self.log.keys().copied()
    }

    /// Wire bytes sent by `src` (to `dest`, or to anyone when `None`) inside
    /// `[start_ns, start_ns + 1 s)`, pro-rated by overlap. Exact.
    pub fn bytes_in_window_exact(&self, src: u8, dest: Option<u8>, start_ns: i64) -> Ratio<u128> {
        window_load(self.transmissions(src), dest, start_ns, NS_PER_S)
    }

    pub fn bytes_in_window(&self, src: u8, dest: Option<u8>, start_ns: i64) -> f64 {
        let r = self.bytes_in_window_exact(src, dest, start_ns);
        *r.numer() as f64 / *r.denom() as f64
    }

    /// Largest 1-second window load for `src` over the whole run.
    pub fn peak_window_load(&self, src: u8, dest: Option<u8>) -> Ratio<u128> {
        peak_window_load(self.transmissions(src), dest, NS_PER_S)
    }
}

/// Pro-rated bytes of `txs` (sorted, non-overlapping) inside `[start, start + width)`.
pub fn window_load(txs: &[Transmission], dest: Option<u8>, start_ns: i64, width_ns: i64) -> Ratio<u128> {
    let end_ns = start_ns + width_ns;
    let first = txs.partition_point(|t| t.end_ns <= start_ns);
    let mut total = Ratio::from_integer(0u128);
    for t in txs[first..].iter().take_while(|t| t.start_ns < end_ns) {
        if dest.is_some_and(|d| d != t.dest) {
            continue;
        }
        let overlap = t.end_ns.min(end_ns) - t.start_ns.max(start_ns);
        if overlap > 0 {
            let duration = (t.end_ns - t.start_ns) as u128;
            total += Ratio::new(overlap as u128 * t.wire_bytes as u128, duration);
        }
    }
    total
}

/// Window starts where the piecewise-linear load function can peak: every
/// transmission boundary, and every boundary minus the window width.
pub fn candidate_window_starts(txs: &[Transmission], width_ns: i64) -> Vec<i64> {
    let mut starts: Vec<i64> = txs
        .iter()
        .flat_map(|t| [t.start_ns, t.end_ns, t.start_ns - width_ns, t.end_ns - width_ns])
        .collect();
    starts.sort_unstable();
    starts.dedup();
    starts
}

pub fn peak_window_load_sequential(txs: &[Transmission], dest: Option<u8>, width_ns: i64) -> Ratio<u128> {
    candidate_window_starts(txs, width_ns)
        .into_iter()
        .map(|s| window_load(txs, dest, s, width_ns))
        .max()
        .unwrap_or_else(|| Ratio::from_integer(0))
}

#[cfg(feature = "parallel")]
pub fn peak_window_load_parallel(txs: &[Transmission], dest: Option<u8>, width_ns: i64) -> Ratio<u128> {
    use rayon::prelude::*;
    candidate_window_starts(txs, width_ns)
        .into_par_iter()
        .map(|s| window_load(txs, dest, s, width_ns))
        .max()
        .unwrap_or_else(|| Ratio::from_integer(0))
}

pub fn peak_window_load(txs: &[Transmission], dest: Option<u8>, width_ns: i64) -> Ratio<u128> {
    #[cfg(feature = "parallel")]
    {
        peak_window_load_parallel(txs, dest, width_ns)
    }
    #[cfg(not(feature = "parallel"))]
    {
        peak_window_load_sequential(txs, dest, width_ns)
    }
}
