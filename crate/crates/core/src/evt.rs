//! Generalized Pareto tail model for queue excesses.
//!
//! `G(x; σ, ξ) = 1 − (1 + ξx/σ)^{−1/ξ}`, with the exponential law at
//! `ξ = 0`. Fitting is maximum likelihood in `(ln σ, ξ)` with a projected
//! quasi-Newton step and a method-of-moments starting point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|ξ|` the exponential closed forms are used.
pub const XI_ZERO: f64 = 1e-8;
/// Minimum sample count accepted by [`fit_gpd`].
pub const MIN_FIT_SAMPLES: usize = 30;

const XI_LOWER: f64 = -1.0;
const XI_UPPER: f64 = 0.499;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "GPD scale must be positive, got {sigma}"
            )));
        }
        if !(xi < 0.5) {
            return Err(Error::InvalidInput(format!(
                "GPD shape must be below 1/2, got {xi}"
            )));
        }
        Ok(GpdParams { sigma, xi })
    }

    /// Right end of the support (`+∞` unless `ξ < 0`).
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < 0.0 {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }
}

pub fn gpd_ccdf(x: f64, p: &GpdParams) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if p.xi.abs() < XI_ZERO {
        return (-x / p.sigma).exp();
    }
    let base = 1.0 + p.xi * x / p.sigma;
    if base <= 0.0 {
        0.0
    } else {
        (-(base.ln()) / p.xi).exp()
    }
}

pub fn gpd_cdf(x: f64, p: &GpdParams) -> f64 {
    1.0 - gpd_ccdf(x, p)
}

/// Inverse CDF, `u ∈ [0, 1)`.
pub fn gpd_quantile(u: f64, p: &GpdParams) -> f64 {
    let tail = -(1.0 - u).ln();
    if p.xi.abs() < XI_ZERO {
        p.sigma * tail
    } else {
        p.sigma * (p.xi * tail).exp_m1() / p.xi
    }
}

/// `(mean, variance)`; the variance is infinite for `ξ ≥ 1/2`.
pub fn gpd_moments(p: &GpdParams) -> (f64, f64) {
    let a = 1.0 - p.xi;
    let b = 1.0 - 2.0 * p.xi;
    let mean = if a > 0.0 { p.sigma / a } else { f64::INFINITY };
    let var = if b > 0.0 {
        p.sigma * p.sigma / (a * a * b)
    } else {
        f64::INFINITY
    };
    (mean, var)
}

/// Mean and second-moment caps `(H, B)` implied by threshold parameters.
pub fn hb_caps(sigma: f64, xi: f64) -> (f64, f64) {
    let a = 1.0 - xi;
    let b = 1.0 - 2.0 * xi;
    let h = sigma / a;
    let second = if b > 0.0 {
        2.0 * sigma * sigma / (a * b)
    } else {
        f64::INFINITY
    };
    (h, second)
}

/// Sample log-likelihood; `-∞` outside the support.
pub fn gpd_loglik(samples: &[f64], p: &GpdParams) -> f64 {
    let n = samples.len() as f64;
    let s = p.sigma.ln();
    let mut acc = -n * s;
    for &x in samples {
        let u = x / p.sigma;
        let w = 1.0 + p.xi * u;
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc -= w.ln() + scaled_log(p.xi, u);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpdFit {
    pub sigma: f64,
    pub xi: f64,
    pub loglik: f64,
    pub ks: f64,
    pub n: usize,
    pub iterations: usize,
}

impl GpdFit {
    pub fn params(&self) -> GpdParams {
        GpdParams {
            sigma: self.sigma,
            xi: self.xi,
        }
    }
}

/// `ln(1 + ξu)/ξ`, exact in the `ξ → 0` limit.
fn scaled_log(xi: f64, u: f64) -> f64 {
    let z = xi * u;
    if z.abs() < 1e-4 {
        u * (1.0 - z / 2.0 + z * z / 3.0)
    } else {
        z.ln_1p() / xi
    }
}

/// `∂/∂ξ` of [`scaled_log`].
fn scaled_log_dxi(xi: f64, u: f64) -> f64 {
    let z = xi * u;
    if z.abs() < 1e-4 {
        u * u * (-0.5 + 2.0 * z / 3.0 - 0.75 * z * z)
    } else {
        (z / (1.0 + z) - z.ln_1p()) / (xi * xi)
    }
}

/// Mean negative log-likelihood and its gradient in `(ln σ, ξ)`.
fn nll(x: &[f64], theta: [f64; 2]) -> Option<(f64, [f64; 2])> {
    let [s, xi] = theta;
    let sigma = s.exp();
    let n = x.len() as f64;
    let (mut f, mut gs, mut gx) = (n * s, n, 0.0);
    for &xv in x {
        let u = xv / sigma;
        let w = 1.0 + xi * u;
        if w <= 0.0 {
            return None;
        }
        f += (xi * u).ln_1p() + scaled_log(xi, u);
        gs -= (1.0 + xi) * u / w;
        gx += u / w + scaled_log_dxi(xi, u);
    }
    Some((f / n, [gs / n, gx / n]))
}

fn project(theta: [f64; 2]) -> [f64; 2] {
    [theta[0], theta[1].clamp(XI_LOWER, XI_UPPER)]
}

/// Maximum-likelihood GPD fit of positive excesses.
pub fn fit_gpd(samples: &[f64]) -> Result<GpdFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput(
            "excess samples must be finite and nonnegative".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !(mean > 0.0) {
        return Err(Error::Degenerate("all excess samples are identical"));
    }
    // Work on mean-normalised data; σ rescales afterwards.
    let x: Vec<f64> = samples.iter().map(|v| v / mean).collect();
    let xmax = x.iter().cloned().fold(0.0, f64::max);
    let r = 1.0 / (var / (mean * mean));
    let mut xi0 = ((1.0 - r) / 2.0).clamp(XI_LOWER + 0.05, XI_UPPER - 0.05);
    let mut sigma0 = (1.0 - xi0).max(1e-3);
    if xi0 < 0.0 && 1.0 + xi0 * xmax / sigma0 <= 1e-6 {
        sigma0 = -xi0 * xmax * 1.05;
    }
    if !sigma0.is_finite() || sigma0 <= 0.0 {
        sigma0 = 1.0;
        xi0 = 0.0;
    }

    let mut theta = [sigma0.ln(), xi0];
    let (mut f, mut g) = nll(&x, theta).ok_or(Error::Degenerate("infeasible starting point"))?;
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let active = active_set(theta, g);
        let free_norm = (0..2)
            .filter(|&i| !active[i])
            .map(|i| g[i] * g[i])
            .sum::<f64>()
            .sqrt();
        if free_norm < 1e-10 {
            break;
        }
        let mut d = [
            -(h[0][0] * g[0] + h[0][1] * g[1]),
            -(h[1][0] * g[0] + h[1][1] * g[1]),
        ];
        for i in 0..2 {
            if active[i] {
                d[i] = 0.0;
            }
        }
        let mut slope = d[0] * g[0] + d[1] * g[1];
        if slope >= 0.0 {
            h = [[1.0, 0.0], [0.0, 1.0]];
            d = [-g[0], -g[1]];
            for i in 0..2 {
                if active[i] {
                    d[i] = 0.0;
                }
            }
            slope = d[0] * g[0] + d[1] * g[1];
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = project([theta[0] + step * d[0], theta[1] + step * d[1]]);
            if let Some((fc, gc)) = nll(&x, cand) {
                if fc <= f + 1e-4 * step * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let sv = [cand[0] - theta[0], cand[1] - theta[1]];
        let yv = [gc[0] - g[0], gc[1] - g[1]];
        let sy = sv[0] * yv[0] + sv[1] * yv[1];
        if sy > 1e-14 {
            h = bfgs_update(h, sv, yv, sy);
        }
        let done = (f - fc).abs() < 1e-15 * f.abs().max(1.0);
        theta = cand;
        f = fc;
        g = gc;
        if done {
            break;
        }
    }

    let params = GpdParams {
        sigma: theta[0].exp() * mean,
        xi: theta[1],
    };
    Ok(GpdFit {
        sigma: params.sigma,
        xi: params.xi,
        loglik: gpd_loglik(samples, &params),
        ks: ks_distance(samples, &params)?,
        n: samples.len(),
        iterations,
    })
}

fn active_set(theta: [f64; 2], g: [f64; 2]) -> [bool; 2] {
    let lo = theta[1] <= XI_LOWER && g[1] > 0.0;
    let hi = theta[1] >= XI_UPPER && g[1] < 0.0;
    [false, lo || hi]
}

fn bfgs_update(h: [[f64; 2]; 2], s: [f64; 2], y: [f64; 2], sy: f64) -> [[f64; 2]; 2] {
    let rho = 1.0 / sy;
    let hy = [
        h[0][0] * y[0] + h[0][1] * y[1],
        h[1][0] * y[0] + h[1][1] * y[1],
    ];
    let yhy = y[0] * hy[0] + y[1] * hy[1];
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = h[i][j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    out
}

/// Kolmogorov–Smirnov distance between the sample ECDF and the model CDF.
pub fn ks_distance(samples: &[f64], p: &GpdParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples {
            required: 1,
            got: 0,
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = gpd_cdf(x, p);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}
