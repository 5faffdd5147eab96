//! Path loss, small-scale fading and the two per-slot rate models.
//!
//! Rates are in packets per slot: `(ωτ/Z) Σ_n spectral_term_n`, summed over
//! the RBs passed in. The spectral term is `log2(1 + ρ)` for the Shannon
//! model and the normal approximation
//! `log2(1 + ρ) - sqrt(ν/L) Q⁻¹(ε) + log2(L)/(2L)` (clamped at zero) for
//! the finite-blocklength model.

use std::f64::consts::{LOG2_E, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::config::SimConfig;
use crate::mobility::{RoadGrid, VehicleState};

/// Path-loss regime of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkCase {
    /// Same road (either direction).
    Los,
    /// Perpendicular roads, one end within the intersection distance.
    Wlos,
    /// Perpendicular roads far from the intersection, or parallel roads.
    Nlos,
}

#[derive(Debug, Clone, Copy)]
pub struct PathLossModel {
    pub l0: f64,
    pub l0_prime: f64,
    pub exponent: f64,
    pub near_distance: f64,
}

impl PathLossModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        PathLossModel {
            l0: cfg.l0,
            l0_prime: cfg.l0_prime,
            exponent: cfg.pathloss_exponent,
            near_distance: cfg.intersection_distance_m,
        }
    }

    /// Classifies the link and returns its linear gain. Distances are
    /// minimum-image on the torus; distances below 1 m are clamped to 1 m.
    pub fn gain(&self, tx: &VehicleState, rx: &VehicleState, grid: &RoadGrid) -> (LinkCase, f64) {
        let dx = grid.delta(tx.position[0], rx.position[0]).abs();
        let dy = grid.delta(tx.position[1], rx.position[1]).abs();
        let th = tx.heading.is_horizontal();
        let rh = rx.heading.is_horizontal();
        if th == rh {
            // Parallel lanes: same road when the cross-axis gap is within one
            // road's width, otherwise separated by a block of buildings.
            let cross = if th { dy } else { dx };
            if cross <= 2.0 * grid.lane_offset + 1e-6 {
                let d = dx.hypot(dy).max(1.0);
                return (LinkCase::Los, self.l0 * d.powf(-self.exponent));
            }
            let a = dx.max(self.near_distance);
            let b = dy.max(self.near_distance);
            return (LinkCase::Nlos, self.l0_prime * (a * b).powf(-self.exponent));
        }
        // Perpendicular: the shared intersection is at the vertical lane's x
        // and the horizontal lane's y, so each endpoint's distance to it is
        // its gap along its own axis.
        let (h, v) = if th { (tx, rx) } else { (rx, tx) };
        let h_to_cross = grid.delta(h.position[0], v.position[0]).abs();
        let v_to_cross = grid.delta(v.position[1], h.position[1]).abs();
        if h_to_cross.min(v_to_cross) <= self.near_distance {
            let d = (dx + dy).max(1.0);
            (LinkCase::Wlos, self.l0 * d.powf(-self.exponent))
        } else {
            (
                LinkCase::Nlos,
                self.l0_prime * (dx * dy).max(1.0).powf(-self.exponent),
            )
        }
    }
}

/// Linear path-loss gain between two vehicles (symmetric in its arguments).
pub fn path_loss(tx: &VehicleState, rx: &VehicleState, grid: &RoadGrid, cfg: &SimConfig) -> f64 {
    PathLossModel::from_config(cfg).gain(tx, rx, grid).1
}

/// Unit-mean exponential fading power (Rayleigh amplitude).
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Acklam's rational approximation to the standard normal quantile.
fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.02425;
    if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile_approx(1.0 - p)
    }
}

/// Inverse Gaussian tail function: `Q(inverse_q(ε)) = ε`.
///
/// Rational approximation refined by one Newton step on the tail function.
pub fn inverse_q(eps: f64) -> f64 {
    assert!(
        eps > 0.0 && eps < 1.0,
        "inverse_q needs 0 < ε < 1, got {eps}"
    );
    // Q⁻¹(ε) = -Φ⁻¹(ε); work on whichever tail keeps the argument small.
    let x = -normal_quantile_approx(eps);
    x + (q_function(x) - eps) / normal_pdf(x)
}

/// Channel dispersion `ν = ρ(2+ρ)/(1+ρ)² · log2(e)²`.
pub fn dispersion(rho: f64) -> f64 {
    rho * (2.0 + rho) / ((1.0 + rho) * (1.0 + rho)) * LOG2_E * LOG2_E
}

/// Finite-blocklength spectral term for one RB, zero at ρ = 0 and clamped
/// below at zero.
pub fn fbl_term(rho: f64, blocklength: f64, q_inv: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let t = (1.0 + rho).log2() - (dispersion(rho) / blocklength).sqrt() * q_inv
        + blocklength.log2() / (2.0 * blocklength);
    t.max(0.0)
}

pub fn sinr(power: f64, gain: f64, noise_plus_interference: f64) -> f64 {
    power * gain / noise_plus_interference
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    /// Packets per slot.
    pub rate: f64,
    /// Per-RB spectral terms (bits/s/Hz).
    pub per_rb: Vec<f64>,
}

/// Shannon rate over the given RBs. `noise_plus_interference[n]` is the
/// denominator of RB `n`'s SINR; `scale` is `ωτ/Z`.
pub fn shannon_rate(
    powers: &[f64],
    gains: &[f64],
    noise_plus_interference: &[f64],
    scale: f64,
) -> RateResult {
    let per_rb: Vec<f64> = powers
        .iter()
        .zip(gains)
        .zip(noise_plus_interference)
        .map(|((&p, &h), &ni)| (1.0 + sinr(p, h, ni)).log2())
        .collect();
    RateResult {
        rate: scale * per_rb.iter().sum::<f64>(),
        per_rb,
    }
}

/// Finite-blocklength (normal approximation) rate over the given RBs.
pub fn fbl_rate(
    powers: &[f64],
    gains: &[f64],
    noise_plus_interference: &[f64],
    scale: f64,
    blocklength: f64,
    block_error_prob: f64,
) -> RateResult {
    let q_inv = inverse_q(block_error_prob);
    let per_rb: Vec<f64> = powers
        .iter()
        .zip(gains)
        .zip(noise_plus_interference)
        .map(|((&p, &h), &ni)| fbl_term(sinr(p, h, ni), blocklength, q_inv))
        .collect();
    RateResult {
        rate: scale * per_rb.iter().sum::<f64>(),
        per_rb,
    }
}
