//! Simulation parameters and the closed-form constants derived from them.
//!
//! Config files are a single JSON object. Every key is optional; missing keys
//! fall back to the reference parameter set (see [`SimConfig::default`]).
//! Powers and path-loss coefficients are given in dBm / dB in the file and
//! held in watts / linear units internally.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Periodic arrivals (D/G/1).
    Deterministic,
    /// Poisson arrivals (M/G/1).
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    Shannon,
    #[serde(rename = "fbl", alias = "finite_blocklength")]
    FiniteBlocklength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Drift-plus-penalty with the tail (excess mean / second moment) queues.
    Proposed,
    /// Same controller with the tail queues and their weight terms removed.
    Baseline2,
    /// Uniform `P_max / |N_k|` on every allocated RB, every slot.
    #[serde(alias = "fixed")]
    FixedPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceMode {
    /// Achieved rates use the actual co-channel interference of the slot.
    Exact,
    /// Achieved rates use the constant `I0`, exactly as the controller assumes.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FblErrorModel {
    /// One block-error draw per pair per slot.
    PerSlot,
    /// Independent block-error draw per allocated RB.
    PerRb,
}

/// Fully resolved simulation parameters, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub num_pairs: usize,
    pub num_rbs: usize,
    pub rb_bandwidth_hz: f64,
    pub slot_duration_s: f64,
    pub p_max_w: f64,
    pub packet_size_bits: f64,
    pub noise_psd_w_per_hz: f64,
    pub arrival_rate_bps: f64,
    pub age_threshold_d_s: f64,
    pub age_threshold_m_s: f64,
    pub aoi_tolerance: f64,
    pub excess_mean_cap: f64,
    pub excess_second_moment_cap: f64,
    pub lyapunov_v: f64,
    pub num_groups: usize,
    pub similarity_scale_m: f64,
    pub neighborhood_radius_m: f64,
    pub recluster_period: u64,
    pub pathloss_exponent: f64,
    pub intersection_distance_m: f64,
    pub l0: f64,
    pub l0_prime: f64,
    pub block_error_prob: f64,
    /// Constant interference assumed by the controller. `None` means it is
    /// calibrated from a pilot run before the main run.
    pub interference_w: Option<f64>,
    pub area_side_m: f64,
    pub speed_kmh: f64,
    pub pair_distance_m: f64,
    pub block_spacing_m: f64,
    pub lane_offset_m: f64,
    pub seed: u64,
    pub slots: u64,
    pub arrival_model: ArrivalModel,
    pub rate_model: RateModel,
    pub policy: Policy,
    pub interference_mode: InterferenceMode,
    pub fbl_error_model: FblErrorModel,
    pub psi_override: Option<f64>,
    pub blocklength_override: Option<u64>,
    pub warmup_fraction: f64,
    pub ccp_tolerance: f64,
    pub ccp_max_iter: usize,
    pub calibration_slots: u64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_pairs: 20,
            num_rbs: 20,
            rb_bandwidth_hz: 180e3,
            slot_duration_s: 3e-3,
            p_max_w: dbm_to_watts(23.0),
            packet_size_bits: 500.0 * 8.0,
            noise_psd_w_per_hz: dbm_to_watts(-174.0),
            arrival_rate_bps: 0.5e6,
            age_threshold_d_s: 30e-3,
            age_threshold_m_s: 60e-3,
            aoi_tolerance: 1e-3,
            excess_mean_cap: 0.05,
            excess_second_moment_cap: 0.0033,
            lyapunov_v: 0.0,
            num_groups: 10,
            similarity_scale_m: 30.0,
            neighborhood_radius_m: 150.0,
            recluster_period: 100,
            pathloss_exponent: 1.61,
            intersection_distance_m: 15.0,
            l0: db_to_linear(-68.5),
            l0_prime: db_to_linear(-54.5),
            block_error_prob: 1e-5,
            interference_w: None,
            area_side_m: 250.0,
            speed_kmh: 60.0,
            pair_distance_m: 15.0,
            block_spacing_m: 62.5,
            lane_offset_m: 2.0,
            seed: 1,
            slots: 10_000,
            arrival_model: ArrivalModel::Deterministic,
            rate_model: RateModel::Shannon,
            policy: Policy::Proposed,
            interference_mode: InterferenceMode::Exact,
            fbl_error_model: FblErrorModel::PerSlot,
            psi_override: None,
            blocklength_override: None,
            warmup_fraction: 0.1,
            ccp_tolerance: 1e-6,
            ccp_max_iter: 30,
            calibration_slots: 500,
        }
    }
}

/// On-disk representation. Unit-suffixed alternatives (`p_max_dbm` vs
/// `p_max_w`) are mutually exclusive.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    num_pairs: Option<usize>,
    num_rbs: Option<usize>,
    rb_bandwidth_hz: Option<f64>,
    slot_duration_s: Option<f64>,
    p_max_dbm: Option<f64>,
    p_max_w: Option<f64>,
    packet_size_bytes: Option<f64>,
    packet_size_bits: Option<f64>,
    noise_psd_dbm_per_hz: Option<f64>,
    arrival_rate_bps: Option<f64>,
    age_threshold_d_s: Option<f64>,
    age_threshold_m_s: Option<f64>,
    aoi_tolerance: Option<f64>,
    excess_mean_cap: Option<f64>,
    excess_second_moment_cap: Option<f64>,
    lyapunov_v: Option<f64>,
    num_groups: Option<usize>,
    similarity_scale_m: Option<f64>,
    neighborhood_radius_m: Option<f64>,
    recluster_period: Option<u64>,
    pathloss_exponent: Option<f64>,
    intersection_distance_m: Option<f64>,
    l0_db: Option<f64>,
    l0_prime_db: Option<f64>,
    block_error_prob: Option<f64>,
    interference_dbm: Option<f64>,
    interference_w: Option<f64>,
    area_side_m: Option<f64>,
    speed_kmh: Option<f64>,
    pair_distance_m: Option<f64>,
    block_spacing_m: Option<f64>,
    lane_offset_m: Option<f64>,
    seed: Option<u64>,
    slots: Option<u64>,
    arrival_model: Option<ArrivalModel>,
    rate_model: Option<RateModel>,
    policy: Option<Policy>,
    interference_mode: Option<InterferenceMode>,
    fbl_error_model: Option<FblErrorModel>,
    psi_override: Option<f64>,
    blocklength_override: Option<u64>,
    warmup_fraction: Option<f64>,
    ccp_tolerance: Option<f64>,
    ccp_max_iter: Option<usize>,
    calibration_slots: Option<u64>,
}

fn either(
    a: Option<f64>,
    b: Option<f64>,
    field: &'static str,
    map_a: impl Fn(f64) -> f64,
) -> Result<Option<f64>> {
    match (a, b) {
        (Some(_), Some(_)) => Err(Error::config(field, "given in two different units")),
        (Some(x), None) => Ok(Some(map_a(x))),
        (None, b) => Ok(b),
    }
}

impl ConfigFile {
    fn resolve(self) -> Result<SimConfig> {
        let mut c = SimConfig::default();
        macro_rules! set {
            ($($f:ident),* $(,)?) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            num_pairs,
            num_rbs,
            rb_bandwidth_hz,
            slot_duration_s,
            arrival_rate_bps,
            age_threshold_d_s,
            age_threshold_m_s,
            aoi_tolerance,
            excess_mean_cap,
            excess_second_moment_cap,
            lyapunov_v,
            num_groups,
            similarity_scale_m,
            neighborhood_radius_m,
            recluster_period,
            pathloss_exponent,
            intersection_distance_m,
            block_error_prob,
            area_side_m,
            speed_kmh,
            pair_distance_m,
            block_spacing_m,
            lane_offset_m,
            seed,
            slots,
            arrival_model,
            rate_model,
            policy,
            interference_mode,
            fbl_error_model,
            warmup_fraction,
            ccp_tolerance,
            ccp_max_iter,
            calibration_slots,
        );
        if let Some(p) = either(self.p_max_dbm, self.p_max_w, "p_max", dbm_to_watts)? {
            c.p_max_w = p;
        }
        if let Some(z) = either(
            self.packet_size_bytes,
            self.packet_size_bits,
            "packet_size",
            |b| b * 8.0,
        )? {
            c.packet_size_bits = z;
        }
        if let Some(n0) = self.noise_psd_dbm_per_hz {
            c.noise_psd_w_per_hz = dbm_to_watts(n0);
        }
        if let Some(l) = self.l0_db {
            c.l0 = db_to_linear(l);
        }
        if let Some(l) = self.l0_prime_db {
            c.l0_prime = db_to_linear(l);
        }
        c.interference_w = either(
            self.interference_dbm,
            self.interference_w,
            "interference",
            dbm_to_watts,
        )?;
        c.psi_override = self.psi_override;
        c.blocklength_override = self.blocklength_override;
        c.validate()?;
        Ok(c)
    }
}

/// Parses a config from JSON text. Blank input yields the defaults.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    if text.trim().is_empty() {
        let c = SimConfig::default();
        c.validate()?;
        return Ok(c);
    }
    let file: ConfigFile = serde_json::from_str(text)?;
    file.resolve()
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= 0, got {v}")))
    }
}

fn open_unit(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in (0, 1), got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        positive("slot_duration_s", self.slot_duration_s)?;
        positive("rb_bandwidth_hz", self.rb_bandwidth_hz)?;
        positive("packet_size_bits", self.packet_size_bits)?;
        positive("p_max", self.p_max_w)?;
        positive("noise_psd", self.noise_psd_w_per_hz)?;
        open_unit("aoi_tolerance", self.aoi_tolerance)?;
        open_unit("block_error_prob", self.block_error_prob)?;
        if self.num_rbs < 1 {
            return Err(Error::config("num_rbs", "need at least one RB"));
        }
        if self.num_groups < 2 || self.num_groups > self.num_pairs {
            return Err(Error::config(
                "num_groups",
                format!(
                    "need 2 <= g <= K (g={}, K={})",
                    self.num_groups, self.num_pairs
                ),
            ));
        }
        positive("arrival_rate_bps", self.arrival_rate_bps)?;
        positive("age_threshold_d_s", self.age_threshold_d_s)?;
        positive("age_threshold_m_s", self.age_threshold_m_s)?;
        positive("excess_mean_cap", self.excess_mean_cap)?;
        positive("excess_second_moment_cap", self.excess_second_moment_cap)?;
        non_negative("lyapunov_v", self.lyapunov_v)?;
        positive("similarity_scale_m", self.similarity_scale_m)?;
        positive("neighborhood_radius_m", self.neighborhood_radius_m)?;
        if self.recluster_period == 0 {
            return Err(Error::config("recluster_period", "must be >= 1"));
        }
        positive("pathloss_exponent", self.pathloss_exponent)?;
        positive("intersection_distance_m", self.intersection_distance_m)?;
        positive("l0", self.l0)?;
        positive("l0_prime", self.l0_prime)?;
        if let Some(i0) = self.interference_w {
            non_negative("interference", i0)?;
        }
        positive("area_side_m", self.area_side_m)?;
        non_negative("speed_kmh", self.speed_kmh)?;
        positive("pair_distance_m", self.pair_distance_m)?;
        positive("block_spacing_m", self.block_spacing_m)?;
        let blocks = self.area_side_m / self.block_spacing_m;
        if (blocks - blocks.round()).abs() > 1e-9 || blocks.round() < 1.0 {
            return Err(Error::config(
                "block_spacing_m",
                "must divide area_side_m into a whole number of blocks",
            ));
        }
        if !(0.0..self.block_spacing_m / 2.0).contains(&self.lane_offset_m) {
            return Err(Error::config(
                "lane_offset_m",
                "must lie in [0, block_spacing_m / 2)",
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1)"));
        }
        positive("ccp_tolerance", self.ccp_tolerance)?;
        if self.ccp_max_iter == 0 {
            return Err(Error::config("ccp_max_iter", "must be >= 1"));
        }
        if let Some(l) = self.blocklength_override {
            if l < 2 {
                return Err(Error::config("blocklength_override", "must be >= 2"));
            }
        } else if (self.rb_bandwidth_hz * self.slot_duration_s).round() < 2.0 {
            return Err(Error::config(
                "slot_duration_s",
                "blocklength round(bandwidth * slot) must be >= 2",
            ));
        }
        derive_params(self).map(|_| ())
    }

    /// Conversion factor from bits/s/Hz on one RB to packets per slot.
    pub fn packets_per_bit_per_hz(&self) -> f64 {
        self.rb_bandwidth_hz * self.slot_duration_s / self.packet_size_bits
    }

    /// Thermal noise power on one RB (W).
    pub fn noise_power_w(&self) -> f64 {
        self.noise_psd_w_per_hz * self.rb_bandwidth_hz
    }

    /// Age threshold that matches the configured arrival model.
    pub fn age_threshold_s(&self) -> f64 {
        match self.arrival_model {
            ArrivalModel::Deterministic => self.age_threshold_d_s,
            ArrivalModel::Poisson => self.age_threshold_m_s,
        }
    }
}

/// Constants computed once per configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Packets per slot (deterministic arrivals).
    pub packets_per_slot: f64,
    /// Mean packets per slot (Poisson arrivals); equal to `packets_per_slot`.
    pub lambda: f64,
    /// Slack of the deterministic-arrival queue condition (packets).
    pub psi: f64,
    /// Effective tolerance of the Poisson-arrival event constraint.
    pub e_k: f64,
    /// Channel uses per RB per slot.
    pub blocklength: f64,
}

pub fn psi(age_threshold_s: f64, slot_s: f64, packets_per_slot: f64) -> f64 {
    2.0 - (age_threshold_s / slot_s - 1.0) * packets_per_slot
}

pub fn effective_tolerance(eps_k: f64, lambda: f64, age_threshold_s: f64, slot_s: f64) -> f64 {
    let idle = (-lambda * age_threshold_s / slot_s).exp();
    (eps_k - idle) / (1.0 - idle)
}

/// Computes the derived constants.
///
/// The undersampling condition (`A/τ >= 1/d_D`) is only enforced for
/// deterministic arrivals and the `E_k >= 0` condition only for Poisson
/// arrivals, since each belongs to one arrival model.
pub fn derive_params(cfg: &SimConfig) -> Result<DerivedParams> {
    let tau = cfg.slot_duration_s;
    let a = cfg.arrival_rate_bps * tau / cfg.packet_size_bits;
    let lambda = a;
    match cfg.arrival_model {
        ArrivalModel::Deterministic => {
            if a / tau < 1.0 / cfg.age_threshold_d_s {
                return Err(Error::config(
                    "arrival_rate_bps",
                    format!(
                        "arrival rate {:.3} packets/s is below 1/d_D = {:.3} (undersampled)",
                        a / tau,
                        1.0 / cfg.age_threshold_d_s
                    ),
                ));
            }
        }
        ArrivalModel::Poisson => {
            let min_d = -tau * cfg.aoi_tolerance.ln() / lambda;
            if cfg.age_threshold_m_s < min_d {
                return Err(Error::config(
                    "age_threshold_m_s",
                    format!("must be >= {min_d:.6} s so that E_k >= 0"),
                ));
            }
        }
    }
    let psi = cfg
        .psi_override
        .unwrap_or_else(|| psi(cfg.age_threshold_d_s, tau, a));
    let e_k = effective_tolerance(cfg.aoi_tolerance, lambda, cfg.age_threshold_m_s, tau).max(0.0);
    let blocklength = match cfg.blocklength_override {
        Some(l) => l as f64,
        None => (cfg.rb_bandwidth_hz * tau).round(),
    };
    Ok(DerivedParams {
        packets_per_slot: a,
        lambda,
        psi,
        e_k,
        blocklength,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.num_rbs, 20);
        assert_eq!(c.rb_bandwidth_hz, 180e3);
        assert_eq!(c.slot_duration_s, 3e-3);
        assert!((c.p_max_w - 0.19952623).abs() < 1e-8);
        assert_eq!(c.packet_size_bits, 4000.0);
        assert_eq!(c.aoi_tolerance, 1e-3);
        assert_eq!(c.excess_mean_cap, 0.05);
        assert_eq!(c.excess_second_moment_cap, 0.0033);
        assert_eq!(c.num_groups, 10);
        assert_eq!(c.recluster_period, 100);
        assert_eq!(c.pathloss_exponent, 1.61);
        assert_eq!(c.intersection_distance_m, 15.0);
        assert!((10.0 * c.l0.log10() + 68.5).abs() < 1e-12);
        assert!((10.0 * c.l0_prime.log10() + 54.5).abs() < 1e-12);
        assert_eq!(c.block_error_prob, 1e-5);
        assert_eq!(parse_config("{}").unwrap(), c);
    }

    #[test]
    fn out_of_range_tolerance_names_field() {
        let err = parse_config(r#"{"aoi_tolerance": 1.5}"#).unwrap_err();
        match err {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "aoi_tolerance"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_keeps_other_defaults() {
        let c = parse_config(r#"{"arrival_rate_bps": 1e6}"#).unwrap();
        let mut expected = SimConfig::default();
        expected.arrival_rate_bps = 1e6;
        assert_eq!(c, expected);
    }

    #[test]
    fn unit_conversions() {
        let c =
            parse_config(r#"{"p_max_dbm": 30, "packet_size_bytes": 100, "interference_dbm": -90}"#)
                .unwrap();
        assert!((c.p_max_w - 1.0).abs() < 1e-12);
        assert_eq!(c.packet_size_bits, 800.0);
        assert!((c.interference_w.unwrap() - 1e-12).abs() < 1e-24);
        assert!(parse_config(r#"{"p_max_dbm": 30, "p_max_w": 1}"#).is_err());
        assert!(parse_config(r#"{"bogus_key": 1}"#).is_err());
        assert!(parse_config("{not json").is_err());
    }

    #[test]
    fn undersampled_arrivals_rejected() {
        // 1/d_D = 33.3 packets/s; 0.1 Mbps / 4000 bits = 25 packets/s.
        let err = parse_config(r#"{"arrival_rate_bps": 1e5}"#).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidConfig {
                field: "arrival_rate_bps",
                ..
            }
        ));
    }

    #[test]
    fn derived_constants_match_direct_arithmetic() {
        let c = SimConfig::default();
        let d = derive_params(&c).unwrap();
        assert!((d.packets_per_slot - 0.5e6 * 3e-3 / 4000.0).abs() < 1e-15);
        assert!((d.packets_per_slot - 0.375).abs() < 1e-15);
        assert!((d.psi - (-1.375)).abs() < 1e-12);
        let idle = (-7.5f64).exp();
        assert!((d.e_k - (0.001 - idle) / (1.0 - idle)).abs() < 1e-15);
        assert!((d.e_k - 4.4716e-4).abs() < 1e-7);
        assert_eq!(d.blocklength, 540.0);
    }

    #[test]
    fn overrides_force_reference_table_values() {
        let c = parse_config(r#"{"psi_override": -3.25, "blocklength_override": 550}"#).unwrap();
        let d = derive_params(&c).unwrap();
        assert_eq!(d.psi, -3.25);
        assert_eq!(d.blocklength, 550.0);
    }

    #[test]
    fn negative_effective_tolerance_rejected_for_poisson() {
        let err =
            parse_config(r#"{"arrival_model": "poisson", "age_threshold_m_s": 0.03}"#).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidConfig {
                field: "age_threshold_m_s",
                ..
            }
        ));
    }

    #[test]
    fn derive_is_pure() {
        let c = SimConfig::default();
        let a = derive_params(&c).unwrap();
        let b = derive_params(&c).unwrap();
        assert_eq!(a.psi.to_bits(), b.psi.to_bits());
        assert_eq!(a.e_k.to_bits(), b.e_k.to_bits());
    }

    #[test]
    fn effective_tolerance_approaches_tolerance_from_below() {
        let vals: Vec<f64> = [0.06, 0.12, 0.5]
            .iter()
            .map(|&d| effective_tolerance(1e-3, 0.375, d, 3e-3))
            .collect();
        assert!(vals[0] < vals[1] && vals[1] < vals[2] && vals[2] <= 1e-3);
        assert!(vals[0] >= 0.0);
    }

    #[test]
    fn psi_linear_decreasing_in_load() {
        let p = |a| psi(0.03, 3e-3, a);
        let (p1, p2, p3) = (p(0.1), p(0.2), p(0.3));
        assert!(p1 > p2 && p2 > p3);
        assert!(((p1 - p2) - (p2 - p3)).abs() < 1e-12);
    }
}
