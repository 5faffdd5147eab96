//! Packet arrivals, the fluid FCFS queue and per-packet age tracking.
//!
//! The queue length is real-valued because per-slot service is. Packets are
//! unit-size intervals on the cumulative axis: packet `i` occupies
//! `[i, i+1)` of cumulative arrivals and leaves once cumulative service
//! reaches `i + 1`. Departures are credited at the end of the slot.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

/// Arrival instants (s) of the periodic stream `i·τ/A` that fall in slot
/// `slot`, i.e. in `[slot·τ, (slot+1)·τ)`.
pub fn arrivals_deterministic(slot: u64, packets_per_slot: f64, tau: f64) -> Vec<f64> {
    if packets_per_slot <= 0.0 {
        return Vec::new();
    }
    let t = slot as f64;
    let first = (t * packets_per_slot - 1e-9).ceil().max(0.0) as u64;
    let end = (t + 1.0) * packets_per_slot;
    (first..)
        .take_while(|&i| (i as f64) < end - 1e-9)
        .map(|i| i as f64 * tau / packets_per_slot)
        .collect()
}

/// Poisson(λ) arrivals in slot `slot`, placed uniformly inside the slot and
/// returned in increasing order.
pub fn arrivals_poisson<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: f64,
    slot: u64,
    tau: f64,
) -> Vec<f64> {
    if lambda <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(lambda).expect("λ > 0").sample(rng) as usize;
    let start = slot as f64 * tau;
    let mut instants: Vec<f64> = (0..count)
        .map(|_| start + rng.random::<f64>() * tau)
        .collect();
    instants.sort_by(|a, b| a.total_cmp(b));
    instants
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QueueState {
    /// Backlog at the start of the slot (packets).
    pub q: f64,
    pub cumulative_arrivals: f64,
    /// Service actually used, i.e. `Σ min(service, Q)`.
    pub cumulative_service: f64,
}

/// `Q' = max(Q − service, 0) + arrivals`.
pub fn update_queue(q: QueueState, service: f64, arrivals: f64) -> QueueState {
    debug_assert!(service >= 0.0 && arrivals >= 0.0);
    QueueState {
        q: (q.q - service).max(0.0) + arrivals,
        cumulative_arrivals: q.cumulative_arrivals + arrivals,
        cumulative_service: q.cumulative_service + service.min(q.q),
    }
}

/// Service of a slot under block errors: the full rate with probability
/// `1 − ε`, nothing otherwise.
pub fn fbl_service<R: Rng + ?Sized>(rate: f64, block_error_prob: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < block_error_prob {
        0.0
    } else {
        rate
    }
}

/// Tracks `Δ(T) = T − max{T_A(i) : T_D(i) ≤ T}` for one pair.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AoiTracker {
    /// Arrival times of packets not yet departed, FCFS order.
    waiting: VecDeque<f64>,
    /// Index of the packet at the front of `waiting`.
    head_index: u64,
    /// Latest arrival instant among departed packets.
    pub delivered_watermark: Option<f64>,
    start: f64,
    pub age: f64,
}

impl AoiTracker {
    /// A tracker whose age counts from `start` until the first delivery.
    pub fn new(start: f64) -> Self {
        AoiTracker {
            start,
            ..Default::default()
        }
    }

    pub fn record_arrivals(&mut self, instants: &[f64]) {
        self.waiting.extend(instants.iter().copied());
    }

    /// Retires every packet covered by the queue's cumulative service and
    /// returns the age at time `now`.
    pub fn advance(&mut self, queue: &QueueState, now: f64) -> f64 {
        while let Some(&arrival) = self.waiting.front() {
            if queue.cumulative_service + 1e-9 < (self.head_index + 1) as f64 {
                break;
            }
            self.waiting.pop_front();
            self.head_index += 1;
            // FCFS keeps the watermark nondecreasing.
            self.delivered_watermark =
                Some(self.delivered_watermark.map_or(arrival, |w| w.max(arrival)));
        }
        self.age = now - self.delivered_watermark.unwrap_or(self.start);
        self.age
    }

    pub fn departed(&self) -> u64 {
        self.head_index
    }

    pub fn backlog_packets(&self) -> usize {
        self.waiting.len()
    }
}
