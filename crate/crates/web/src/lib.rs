//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Everything crosses the boundary as `f64` slices or JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use v2v_aoi::config::{ArrivalModel, Policy};
use v2v_aoi::evt::{fit_gpd, gpd_ccdf, gpd_quantile, GpdParams};
use v2v_aoi::lyapunov::{ccp_solve, waterfill, CcpOptions};
use v2v_aoi::simulator::{ccdf_thinned, run};
use v2v_aoi::SimConfig;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Per-RB powers (W). `snr_db[n]` is the SNR RB `n` would see at full power.
#[wasm_bindgen]
pub fn allocate_power(
    snr_db: &[f64],
    weight: f64,
    v: f64,
    p_max: f64,
    blocklength: f64,
    block_error: f64,
) -> Vec<f64> {
    let gains: Vec<f64> = snr_db
        .iter()
        .map(|db| 10f64.powf(db / 10.0) / p_max)
        .collect();
    if blocklength > 0.0 {
        let opts = CcpOptions {
            blocklength,
            block_error_prob: block_error,
            tolerance: 1e-9,
            max_iter: 50,
        };
        ccp_solve(weight, &gains, v, p_max, 1.0, &opts).powers
    } else {
        waterfill(weight, &gains, v, p_max, 1.0)
    }
}

/// `Pr{X > x}` of a generalized Pareto law at each `x`.
#[wasm_bindgen]
pub fn gpd_tail(sigma: f64, xi: f64, xs: &[f64]) -> Result<Vec<f64>, JsValue> {
    let p = GpdParams::new(sigma, xi).map_err(js_err)?;
    Ok(xs.iter().map(|&x| gpd_ccdf(x, &p)).collect())
}

/// Draws `n` samples by inversion from a low-discrepancy stream and refits
/// them. Returns JSON `{sigma, xi, ks, n}`.
#[wasm_bindgen]
pub fn sample_and_fit(sigma: f64, xi: f64, n: usize, seed: u32) -> Result<String, JsValue> {
    let p = GpdParams::new(sigma, xi).map_err(js_err)?;
    // Additive recurrence with the golden ratio; the seed sets the phase.
    let phi = 0.618_033_988_749_894_9;
    let mut u = (seed as f64 * 0.754_877_666_246_692_7).fract();
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            u = (u + phi).fract();
            gpd_quantile(u, &p)
        })
        .collect();
    let fit = fit_gpd(&samples).map_err(js_err)?;
    #[derive(Serialize)]
    struct Out {
        sigma: f64,
        xi: f64,
        ks: f64,
        n: usize,
    }
    serde_json::to_string(&Out {
        sigma: fit.sigma,
        xi: fit.xi,
        ks: fit.ks,
        n: fit.n,
    })
    .map_err(js_err)
}

#[derive(Serialize)]
struct PolicyCurve {
    policy: Policy,
    avg_aoi_s: f64,
    avg_power_w: f64,
    pr_aoi_exceeds: f64,
    ccdf: Vec<(f64, f64)>,
}

/// Runs the proposed controller and Baseline 2 on the same small network.
/// Returns JSON `[{policy, avg_aoi_s, avg_power_w, pr_aoi_exceeds, ccdf}]`.
#[wasm_bindgen]
pub fn compare_policies(
    num_pairs: usize,
    num_rbs: usize,
    arrival_rate_bps: f64,
    lyapunov_v: f64,
    slots: u32,
    seed: u32,
) -> Result<String, JsValue> {
    let mut out = Vec::new();
    for policy in [Policy::Proposed, Policy::Baseline2] {
        let cfg = SimConfig {
            num_pairs,
            num_rbs,
            num_groups: (num_pairs / 2).max(2),
            arrival_rate_bps,
            lyapunov_v,
            slots: slots as u64,
            seed: seed as u64,
            policy,
            arrival_model: ArrivalModel::Deterministic,
            ..SimConfig::default()
        };
        let report = run(&cfg).map_err(js_err)?;
        let ccdf = if report.aoi_samples.is_empty() {
            Vec::new()
        } else {
            ccdf_thinned(&report.aoi_samples, 0.05).map_err(js_err)?
        };
        out.push(PolicyCurve {
            policy,
            avg_aoi_s: report.summary.avg_aoi_s,
            avg_power_w: report.summary.avg_power_w,
            pr_aoi_exceeds: report.summary.pr_aoi_exceeds,
            ccdf,
        });
    }
    serde_json::to_string(&out).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_respects_budget() {
        let p = allocate_power(&[0.0, 10.0, 20.0], 5.0, 0.0, 0.2, 0.0, 1e-5);
        assert!((p.iter().sum::<f64>() - 0.2).abs() < 1e-12);
        assert!(p[2] >= p[1] && p[1] >= p[0]);
        let q = allocate_power(&[0.0, 10.0, 20.0], 5.0, 0.0, 0.2, 540.0, 1e-5);
        assert!(q.iter().sum::<f64>() <= 0.2 + 1e-12);
    }

    #[test]
    fn tail_is_one_at_zero() {
        let t = gpd_tail(1.0, 0.1, &[0.0, 1.0]).unwrap();
        assert_eq!(t[0], 1.0);
        assert!(t[1] < 1.0);
    }

    #[test]
    fn refit_is_close() {
        let s = sample_and_fit(0.5, 0.2, 5000, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!((v["xi"].as_f64().unwrap() - 0.2).abs() < 0.05);
    }

    #[test]
    fn comparison_has_both_policies() {
        let s = compare_policies(6, 6, 0.5e6, 0.0, 300, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert_eq!(v[1]["policy"], "baseline2");
    }
}
