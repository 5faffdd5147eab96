//! Per-pair drift-plus-penalty controller: virtual queues, the per-slot
//! weight, water-filling and the convex-concave loop for short packets.
//!
//! Each slot a pair minimises `V·ΣP − ℑ·Σ r(P)` over its RBs subject to
//! `ΣP ≤ P_max`, where `r` is the Shannon or finite-blocklength spectral
//! term and `ℑ` collects the queue backlogs.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::channel::inverse_q;

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct VirtualQueues {
    /// Excess-mean backlog.
    pub x: f64,
    /// Excess-second-moment backlog.
    pub y: f64,
    /// Rate-stability backlog.
    pub r: f64,
    /// Violation-probability backlog.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotDecision {
    pub powers: Vec<f64>,
    /// Packets per slot.
    pub rate: f64,
    pub weight: f64,
}

/// Drift weight with periodic arrivals. `scale` is `τω/Z`; `tail_terms`
/// off drops the excess-moment contributions.
#[allow(clippy::too_many_arguments)]
pub fn weight_d(
    vq: &VirtualQueues,
    q: f64,
    packets_per_slot: f64,
    psi: f64,
    tolerance: f64,
    indicator: bool,
    scale: f64,
    tail_terms: bool,
) -> f64 {
    weight(
        vq,
        q,
        packets_per_slot,
        q + psi,
        tolerance,
        indicator,
        scale,
        tail_terms,
    )
}

/// Drift weight with Poisson arrivals; `arrivals` is this slot's count.
#[allow(clippy::too_many_arguments)]
pub fn weight_m(
    vq: &VirtualQueues,
    q: f64,
    arrivals: f64,
    tolerance: f64,
    indicator: bool,
    scale: f64,
    tail_terms: bool,
) -> f64 {
    weight(
        vq, q, arrivals, arrivals, tolerance, indicator, scale, tail_terms,
    )
}

#[allow(clippy::too_many_arguments)]
fn weight(
    vq: &VirtualQueues,
    q: f64,
    load: f64,
    level: f64,
    tolerance: f64,
    indicator: bool,
    scale: f64,
    tail_terms: bool,
) -> f64 {
    let mut w = vq.r + load + q + vq.q * tolerance;
    if indicator {
        w -= vq.q;
        if tail_terms {
            w += vq.x + (2.0 * vq.y + 1.0) * level + 2.0 * level.powi(3);
        }
    }
    scale * w
}

/// Virtual-queue step with periodic arrivals, using the slot's achieved
/// service `rate`.
#[allow(clippy::too_many_arguments)]
pub fn update_vq_d(
    vq: &VirtualQueues,
    q: f64,
    rate: f64,
    packets_per_slot: f64,
    psi: f64,
    mean_cap: f64,
    second_cap: f64,
    tolerance: f64,
) -> VirtualQueues {
    let event = crate::aoi_mapping::violation_d(q, rate, psi);
    step(
        vq,
        event,
        rate,
        packets_per_slot,
        mean_cap,
        second_cap,
        tolerance,
    )
}

/// Virtual-queue step with Poisson arrivals.
pub fn update_vq_m(
    vq: &VirtualQueues,
    rate: f64,
    arrivals: f64,
    mean_cap: f64,
    second_cap: f64,
    tolerance: f64,
) -> VirtualQueues {
    let event = crate::aoi_mapping::violation_m(arrivals, rate);
    step(vq, event, rate, arrivals, mean_cap, second_cap, tolerance)
}

fn step(
    vq: &VirtualQueues,
    event: crate::aoi_mapping::Event,
    rate: f64,
    load: f64,
    mean_cap: f64,
    second_cap: f64,
    tolerance: f64,
) -> VirtualQueues {
    let on = if event.violated { 1.0 } else { 0.0 };
    VirtualQueues {
        x: (vq.x + (event.excess - mean_cap) * on).max(0.0),
        y: (vq.y + (event.squared_excess() - second_cap) * on).max(0.0),
        r: (vq.r - rate + load).max(0.0),
        q: (vq.q + rate * on - rate * tolerance).max(0.0),
    }
}

/// `V·ΣP − ℑ·Σ log2(1 + P h/ν)`.
pub fn p1_objective(powers: &[f64], weight: f64, gains: &[f64], v: f64, noise: f64) -> f64 {
    powers
        .iter()
        .zip(gains)
        .map(|(&p, &h)| v * p - weight * (p * h / noise).ln_1p() * LOG2_E)
        .sum()
}

/// Finite-blocklength objective without the constant `log2 L/(2L)` and
/// without the clamp at zero rate.
pub fn p2_objective(
    powers: &[f64],
    weight: f64,
    gains: &[f64],
    v: f64,
    noise: f64,
    blocklength: f64,
    q_inv: f64,
) -> f64 {
    p1_objective(powers, weight, gains, v, noise)
        - concave_part(powers, weight, gains, noise, blocklength, q_inv)
}

/// `G(P) = −(ℑ/√L)·log2(e)·Q⁻¹(ε)·Σ sqrt(ρ(2+ρ))/(1+ρ)`.
fn concave_part(
    powers: &[f64],
    weight: f64,
    gains: &[f64],
    noise: f64,
    blocklength: f64,
    q_inv: f64,
) -> f64 {
    let c = weight / blocklength.sqrt() * LOG2_E * q_inv;
    -c * powers
        .iter()
        .zip(gains)
        .map(|(&p, &h)| {
            let rho = p * h / noise;
            (rho * (2.0 + rho)).sqrt() / (1.0 + rho)
        })
        .sum::<f64>()
}

fn concave_gradient(
    powers: &[f64],
    weight: f64,
    gains: &[f64],
    noise: f64,
    blocklength: f64,
    q_inv: f64,
) -> Vec<f64> {
    let c = weight / blocklength.sqrt() * LOG2_E * q_inv;
    powers
        .iter()
        .zip(gains)
        .map(|(&p, &h)| {
            let rho = p * h / noise;
            if rho <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -c / ((1.0 + rho).powi(2) * (rho * (2.0 + rho)).sqrt()) * h / noise
        })
        .collect()
}

/// Water-filling with a common price `v`.
pub fn waterfill(weight: f64, gains: &[f64], v: f64, p_max: f64, noise: f64) -> Vec<f64> {
    waterfill_priced(weight, gains, &vec![v; gains.len()], p_max, noise)
}

/// Water-filling with a per-RB price `prices[n] ≥ 0`:
/// `Pⁿ = max(0, ℑ/((prices[n] + ζ) ln 2) − ν/hⁿ)`, with `ζ ≥ 0` chosen so
/// that `ΣP ≤ P_max`, tight whenever `ζ > 0`.
///
/// The budget residual is convex and decreasing in `ζ`, so Newton steps
/// from the left never overshoot; bisection on `[0, ℑ·max h/(ν ln 2)]`
/// backs them up.
pub fn waterfill_priced(
    weight: f64,
    gains: &[f64],
    prices: &[f64],
    p_max: f64,
    noise: f64,
) -> Vec<f64> {
    let n = gains.len();
    if n == 0 || !(weight > 0.0) {
        return vec![0.0; n];
    }
    let c = weight / LN_2;
    // Residual ΣP(ζ) − P_max and its slope.
    let residual = |zeta: f64| -> (f64, f64) {
        let mut sum = -p_max;
        let mut slope = 0.0;
        for (&h, &price) in gains.iter().zip(prices) {
            let level = price + zeta;
            if !(h > 0.0) || level.is_infinite() {
                continue;
            }
            if level <= 0.0 {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            let p = c / level - noise / h;
            if p > 0.0 {
                sum += p;
                slope -= c / (level * level);
            }
        }
        (sum, slope)
    };
    let alloc = |zeta: f64| -> Vec<f64> {
        gains
            .iter()
            .zip(prices)
            .map(|(&h, &price)| {
                let level = price + zeta;
                if !(h > 0.0) || level.is_infinite() {
                    0.0
                } else {
                    (c / level - noise / h).max(0.0)
                }
            })
            .collect()
    };

    if residual(0.0).0 <= 0.0 {
        return alloc(0.0);
    }
    let hmax = gains.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, c * hmax / noise);
    let mut zeta = lo;
    for _ in 0..BISECTION_ITERS {
        let (f, slope) = residual(zeta);
        if f <= 1e-12 * p_max && f >= 0.0 {
            break;
        }
        if f > 0.0 {
            lo = zeta;
        } else {
            hi = zeta;
        }
        let newton = if slope.is_finite() && slope < 0.0 {
            zeta - f / slope
        } else {
            f64::NAN
        };
        zeta = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            zeta = hi;
            break;
        }
    }
    let mut p = alloc(zeta);
    let sum: f64 = p.iter().sum();
    if sum > p_max {
        let shrink = p_max / sum;
        p.iter_mut().for_each(|x| *x *= shrink);
    }
    p
}

/// Marginal utility `ℑh/((ν + Ph) ln 2)` of each RB at the given powers.
pub fn marginal_utility(powers: &[f64], weight: f64, gains: &[f64], noise: f64) -> Vec<f64> {
    powers
        .iter()
        .zip(gains)
        .map(|(&p, &h)| weight * h / ((noise + p * h) * LN_2))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcpOptions {
    pub blocklength: f64,
    pub block_error_prob: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpOutcome {
    pub powers: Vec<f64>,
    pub converged: bool,
    /// Objective at the start point and after every iteration.
    pub history: Vec<f64>,
}

/// Convex-concave procedure for the finite-blocklength objective. Starts
/// from the uniform split and linearises the dispersion penalty each round.
/// Block error probabilities above 1/2 are treated as penalty-free.
pub fn ccp_solve(
    weight: f64,
    gains: &[f64],
    v: f64,
    p_max: f64,
    noise: f64,
    opts: &CcpOptions,
) -> CcpOutcome {
    let n = gains.len();
    let q_inv = inverse_q(opts.block_error_prob).max(0.0);
    if n == 0 || !(weight > 0.0) {
        return CcpOutcome {
            powers: vec![0.0; n],
            converged: true,
            history: vec![0.0],
        };
    }
    if q_inv == 0.0 {
        let powers = waterfill(weight, gains, v, p_max, noise);
        let obj = p1_objective(&powers, weight, gains, v, noise);
        return CcpOutcome {
            powers,
            converged: true,
            history: vec![obj],
        };
    }
    let objective = |p: &[f64]| p2_objective(p, weight, gains, v, noise, opts.blocklength, q_inv);
    let mut x = vec![p_max / n as f64; n];
    let mut obj = objective(&x);
    let mut history = vec![obj];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let grad = concave_gradient(&x, weight, gains, noise, opts.blocklength, q_inv);
        let prices: Vec<f64> = grad.iter().map(|g| v - g).collect();
        let next = waterfill_priced(weight, gains, &prices, p_max, noise);
        let next_obj = objective(&next);
        if next_obj > obj {
            // Majorisation guarantees descent; anything else is rounding.
            converged = true;
            break;
        }
        let improvement = obj - next_obj;
        x = next;
        obj = next_obj;
        history.push(obj);
        if improvement <= opts.tolerance * obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    CcpOutcome {
        powers: x,
        converged,
        history,
    }
}
