//! Transmitter-side events that stand in for the receiver-side AoI
//! constraint.
//!
//! With periodic arrivals the age exceeds `d_D` at a slot boundary no more
//! often than the queue exceeds `R − ψ` (an upper bound). With Poisson
//! arrivals the age tail is an affine function of `Pr{A_t > R}`. Both
//! events use strict inequalities; ties count as no violation.

use serde::Serialize;

/// Violation indicator plus the excess over the threshold (zero when the
/// indicator is false).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub violated: bool,
    pub excess: f64,
}

impl Event {
    fn over(value: f64, threshold: f64) -> Self {
        if value > threshold {
            Event {
                violated: true,
                excess: value - threshold,
            }
        } else {
            Event {
                violated: false,
                excess: 0.0,
            }
        }
    }

    /// `Y = X²`.
    pub fn squared_excess(&self) -> f64 {
        self.excess * self.excess
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationSample {
    pub pair: usize,
    pub slot: u64,
    pub indicator: bool,
    pub excess: f64,
    pub squared_excess: f64,
}

impl ViolationSample {
    pub fn new(pair: usize, slot: u64, event: Event) -> Self {
        ViolationSample {
            pair,
            slot,
            indicator: event.violated,
            excess: event.excess,
            squared_excess: event.squared_excess(),
        }
    }
}

/// Periodic arrivals: `Q > R − ψ`, excess `Q − R + ψ`.
pub fn violation_d(q: f64, rate: f64, psi: f64) -> Event {
    Event::over(q, rate - psi)
}

/// Poisson arrivals: `A_t > R`, excess `A_t − R`.
pub fn violation_m(arrivals: f64, rate: f64) -> Event {
    Event::over(arrivals, rate)
}

/// Upper bound on `Pr{Δ > d_D}` from the measured frequency of `Q > R − ψ`.
pub fn aoi_bound_d(event_frequency: f64) -> f64 {
    event_frequency
}

/// `Pr{Δ > d_M} = e^{−λ d_M/τ} + Pr{A > R} (1 − e^{−λ d_M/τ})`.
pub fn aoi_prob_m(pr_event: f64, lambda: f64, age_threshold_s: f64, tau: f64) -> f64 {
    let idle = (-lambda * age_threshold_s / tau).exp();
    idle + pr_event * (1.0 - idle)
}
