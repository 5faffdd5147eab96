//! The slot loop, run metrics, sweeps and report files.
//!
//! Per slot: regroup pairs every `T0` slots, move vehicles and draw fading,
//! let every pair pick its powers, evaluate the achieved rates under the
//! actual co-channel interference, then advance queues, ages and virtual
//! queues. The controller only ever sees the constant interference `I0`.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::aoi_mapping::{aoi_bound_d, aoi_prob_m, violation_d, violation_m, Event};
use crate::channel::{fbl_term, inverse_q, sample_fading, PathLossModel};
use crate::clustering::{assign_groups, should_recluster, GroupAssignment};
use crate::config::{
    derive_params, ArrivalModel, DerivedParams, FblErrorModel, InterferenceMode, Policy, RateModel,
    SimConfig,
};
use crate::error::{Error, Result};
use crate::lyapunov::{
    ccp_solve, update_vq_d, update_vq_m, waterfill, weight_d, weight_m, CcpOptions, VirtualQueues,
};
use crate::mobility::{init_topology, pair_midpoints, step_mobility, RoadGrid, VuePair};
use crate::rng::{stream, SimRng, Stream};
use crate::traffic::{
    arrivals_deterministic, arrivals_poisson, fbl_service, update_queue, AoiTracker, QueueState,
};

/// Optional logs collected by [`run_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Per-slot, per-pair controller trace.
    pub trace: bool,
    /// Per-slot vehicle positions.
    pub positions: bool,
}

/// Headline statistics over the measured (post warm-up) slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub slots: u64,
    pub measured_slots: u64,
    pub num_pairs: usize,
    pub policy: Policy,
    pub arrival_model: ArrivalModel,
    pub rate_model: RateModel,
    /// Interference assumed by the controller (W).
    pub interference_w: f64,
    pub avg_aoi_s: f64,
    pub median_aoi_s: f64,
    pub worst_aoi_s: f64,
    /// Total transmit power per pair per slot (W).
    pub avg_power_w: f64,
    pub avg_queue_packets: f64,
    pub avg_service_packets: f64,
    pub age_threshold_s: f64,
    /// Fraction of slot-boundary samples with `Δ > age_threshold_s`.
    pub pr_aoi_exceeds: f64,
    /// Fraction of slots in which the transmitter-side event occurred.
    pub pr_event: f64,
    /// Age-tail value implied by `pr_event`: an upper bound for periodic
    /// arrivals, a prediction for Poisson arrivals.
    pub aoi_tail_from_event: f64,
    /// Mean excess given the event (packets).
    pub mean_excess: f64,
    /// Mean squared excess given the event (packets²).
    pub mean_squared_excess: f64,
    /// Largest per-pair power sum seen, as a fraction of `P_max`.
    pub max_power_fraction: f64,
    /// Controller solves that hit the iteration cap.
    pub ccp_unconverged: u64,
    pub reclusterings: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub slot: u64,
    pub pair: usize,
    pub weight: f64,
    pub power_w: f64,
    pub rate: f64,
    pub service: f64,
    /// Backlog at the start of the slot.
    pub queue: f64,
    pub aoi_s: f64,
    pub vx: f64,
    pub vy: f64,
    pub vr: f64,
    pub vq: f64,
    pub indicator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionRow {
    pub slot: u64,
    pub pair_id: usize,
    pub tx_x: f64,
    pub tx_y: f64,
    pub rx_x: f64,
    pub rx_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub summary: Summary,
    /// Slot-end ages (s), slot-major, all pairs, measured slots only.
    #[serde(skip)]
    pub aoi_samples: Vec<f64>,
    /// Start-of-slot backlog averaged over pairs, one entry per slot.
    #[serde(skip)]
    pub queue_log: Vec<f64>,
    /// Per-pair power averaged over pairs, one entry per slot.
    #[serde(skip)]
    pub power_log: Vec<f64>,
    /// Excess values of the transmitter-side event, measured slots only.
    #[serde(skip)]
    pub excess_samples: Vec<f64>,
    /// Whether the transmitter-side event occurred, per measured pair-slot
    /// (same layout as `aoi_samples`).
    #[serde(skip)]
    pub event_log: Vec<bool>,
    pub groupings: Vec<GroupAssignment>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub positions: Vec<PositionRow>,
}

impl MetricsReport {
    /// Empirical `Pr{Δ > threshold}` over the measured samples.
    pub fn aoi_tail(&self, threshold: f64) -> f64 {
        tail_probability(&self.aoi_samples, threshold)
    }
}

#[derive(Debug, Clone, Default)]
struct PairState {
    queue: QueueState,
    aoi: AoiTracker,
    vq: VirtualQueues,
    prev_service: f64,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    derived: DerivedParams,
    policy: Policy,
    interference_mode: InterferenceMode,
    i0: f64,
    noise: f64,
    scale: f64,
    q_inv: f64,
    grid: RoadGrid,
    pairs: Vec<VuePair>,
    model: PathLossModel,
    states: Vec<PairState>,
    assignment: Option<GroupAssignment>,
    rb_users: Vec<Vec<usize>>,
    mobility_rng: SimRng,
    link_rng: SimRng,
    interference_rng: SimRng,
    arrival_rng: SimRng,
    error_rng: SimRng,
    cluster_rng: SimRng,
    // Scratch buffers reused every slot.
    path_gain: Vec<f64>,
    gains: Vec<Vec<f64>>,
    powers: Vec<Vec<f64>>,
    interference_sum: f64,
    interference_count: u64,
}

/// Per-slot outcome for one pair.
struct PairOutcome {
    weight: f64,
    power: f64,
    rate: f64,
    service: f64,
    queue_before: f64,
    aoi: f64,
    event: Event,
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &'a SimConfig,
        derived: DerivedParams,
        policy: Policy,
        mode: InterferenceMode,
        i0: f64,
    ) -> Result<Self> {
        let mut placement = stream(cfg.seed, Stream::Placement);
        let (grid, pairs) = init_topology(cfg, &mut placement)?;
        let k = cfg.num_pairs;
        let q_inv = match cfg.rate_model {
            RateModel::Shannon => 0.0,
            RateModel::FiniteBlocklength => inverse_q(cfg.block_error_prob),
        };
        Ok(Engine {
            cfg,
            derived,
            policy,
            interference_mode: mode,
            i0,
            noise: cfg.noise_power_w(),
            scale: cfg.packets_per_bit_per_hz(),
            q_inv,
            grid,
            pairs,
            model: PathLossModel::from_config(cfg),
            states: (0..k)
                .map(|_| PairState {
                    aoi: AoiTracker::new(0.0),
                    ..Default::default()
                })
                .collect(),
            assignment: None,
            rb_users: vec![Vec::new(); cfg.num_rbs],
            mobility_rng: stream(cfg.seed, Stream::Mobility),
            link_rng: stream(cfg.seed, Stream::LinkFading),
            interference_rng: stream(cfg.seed, Stream::InterferenceFading),
            arrival_rng: stream(cfg.seed, Stream::Arrivals),
            error_rng: stream(cfg.seed, Stream::BlockErrors),
            cluster_rng: stream(cfg.seed, Stream::Clustering),
            path_gain: vec![0.0; k * k],
            gains: vec![Vec::new(); k],
            powers: vec![Vec::new(); k],
            interference_sum: 0.0,
            interference_count: 0,
        })
    }

    fn regroup(&mut self, slot: u64) -> Result<()> {
        let mid = pair_midpoints(&self.grid, &self.pairs);
        let a = assign_groups(self.cfg, &self.grid, &mid, slot, &mut self.cluster_rng)?;
        for users in self.rb_users.iter_mut() {
            users.clear();
        }
        for (k, rbs) in a.rbs.iter().enumerate() {
            for &n in rbs {
                self.rb_users[n].push(k);
            }
        }
        self.assignment = Some(a);
        Ok(())
    }

    fn controller_powers(&self, k: usize, weight: f64, ccp_fail: &mut u64) -> Vec<f64> {
        let gains = &self.gains[k];
        let cfg = self.cfg;
        let nu = self.noise + self.i0;
        match self.policy {
            Policy::FixedPower => {
                if gains.is_empty() {
                    Vec::new()
                } else {
                    vec![cfg.p_max_w / gains.len() as f64; gains.len()]
                }
            }
            Policy::Proposed | Policy::Baseline2 => match cfg.rate_model {
                RateModel::Shannon => waterfill(weight, gains, cfg.lyapunov_v, cfg.p_max_w, nu),
                RateModel::FiniteBlocklength => {
                    let out = ccp_solve(
                        weight,
                        gains,
                        cfg.lyapunov_v,
                        cfg.p_max_w,
                        nu,
                        &CcpOptions {
                            blocklength: self.derived.blocklength,
                            block_error_prob: cfg.block_error_prob,
                            tolerance: cfg.ccp_tolerance,
                            max_iter: cfg.ccp_max_iter,
                        },
                    );
                    if !out.converged {
                        *ccp_fail += 1;
                    }
                    out.powers
                }
            },
        }
    }

    fn step(&mut self, slot: u64, ccp_fail: &mut u64) -> Result<Vec<PairOutcome>> {
        let cfg = self.cfg;
        let k_pairs = cfg.num_pairs;
        let tau = cfg.slot_duration_s;
        if should_recluster(slot, cfg.recluster_period) || self.assignment.is_none() {
            self.regroup(slot)?;
        }
        step_mobility(&self.grid, &mut self.pairs, tau, &mut self.mobility_rng);

        for j in 0..k_pairs {
            for k in 0..k_pairs {
                self.path_gain[j * k_pairs + k] = self
                    .model
                    .gain(&self.pairs[j].tx, &self.pairs[k].rx, &self.grid)
                    .1;
            }
        }
        let rbs = self
            .assignment
            .as_ref()
            .map(|a| a.rbs.clone())
            .unwrap_or_default();
        for k in 0..k_pairs {
            let direct = self.path_gain[k * k_pairs + k];
            let link_rng = &mut self.link_rng;
            self.gains[k] = rbs[k]
                .iter()
                .map(|_| direct * sample_fading(link_rng))
                .collect();
        }

        // Arrivals of this slot.
        let arrivals: Vec<Vec<f64>> = (0..k_pairs)
            .map(|_| match cfg.arrival_model {
                ArrivalModel::Deterministic => {
                    arrivals_deterministic(slot, self.derived.packets_per_slot, tau)
                }
                ArrivalModel::Poisson => {
                    arrivals_poisson(&mut self.arrival_rng, self.derived.lambda, slot, tau)
                }
            })
            .collect();

        let tail_terms = self.policy == Policy::Proposed;
        let mut weights = vec![0.0; k_pairs];
        for k in 0..k_pairs {
            let st = &self.states[k];
            let count = arrivals[k].len() as f64;
            weights[k] = match cfg.arrival_model {
                ArrivalModel::Deterministic => {
                    let ind = violation_d(st.queue.q, st.prev_service, self.derived.psi).violated;
                    weight_d(
                        &st.vq,
                        st.queue.q,
                        self.derived.packets_per_slot,
                        self.derived.psi,
                        cfg.aoi_tolerance,
                        ind,
                        self.scale,
                        tail_terms,
                    )
                }
                ArrivalModel::Poisson => {
                    let ind = violation_m(count, st.prev_service).violated;
                    weight_m(
                        &st.vq,
                        st.queue.q,
                        count,
                        self.derived.e_k,
                        ind,
                        self.scale,
                        tail_terms,
                    )
                }
            };
            self.powers[k] = self.controller_powers(k, weights[k], ccp_fail);
        }

        // Co-channel interference at every receiver on every RB it uses.
        let mut position = vec![vec![usize::MAX; cfg.num_rbs]; k_pairs];
        for (k, set) in rbs.iter().enumerate() {
            for (idx, &n) in set.iter().enumerate() {
                position[k][n] = idx;
            }
        }
        let mut denominators: Vec<Vec<f64>> = Vec::with_capacity(k_pairs);
        for k in 0..k_pairs {
            let mut row = Vec::with_capacity(rbs[k].len());
            for &n in &rbs[k] {
                let mut interference = 0.0;
                for &j in &self.rb_users[n] {
                    if j == k {
                        continue;
                    }
                    let fade = sample_fading(&mut self.interference_rng);
                    interference +=
                        self.powers[j][position[j][n]] * self.path_gain[j * k_pairs + k] * fade;
                }
                self.interference_sum += interference;
                self.interference_count += 1;
                row.push(
                    self.noise
                        + match self.interference_mode {
                            InterferenceMode::Exact => interference,
                            InterferenceMode::Constant => self.i0,
                        },
                );
            }
            denominators.push(row);
        }

        let mut out = Vec::with_capacity(k_pairs);
        let now = (slot + 1) as f64 * tau;
        for k in 0..k_pairs {
            let per_rb: Vec<f64> = self.powers[k]
                .iter()
                .zip(&self.gains[k])
                .zip(&denominators[k])
                .map(|((&p, &h), &d)| {
                    let rho = p * h / d;
                    match cfg.rate_model {
                        RateModel::Shannon => rho.ln_1p() * std::f64::consts::LOG2_E,
                        RateModel::FiniteBlocklength => {
                            fbl_term(rho, self.derived.blocklength, self.q_inv)
                        }
                    }
                })
                .collect();
            let rate = self.scale * per_rb.iter().sum::<f64>();
            let service = match (cfg.rate_model, cfg.fbl_error_model) {
                (RateModel::Shannon, _) => rate,
                (RateModel::FiniteBlocklength, FblErrorModel::PerSlot) => {
                    fbl_service(rate, cfg.block_error_prob, &mut self.error_rng)
                }
                (RateModel::FiniteBlocklength, FblErrorModel::PerRb) => {
                    self.scale
                        * per_rb
                            .iter()
                            .map(|&r| fbl_service(r, cfg.block_error_prob, &mut self.error_rng))
                            .sum::<f64>()
                }
            };

            let st = &mut self.states[k];
            let count = arrivals[k].len() as f64;
            let q_before = st.queue.q;
            let event = match cfg.arrival_model {
                ArrivalModel::Deterministic => {
                    let e = violation_d(q_before, service, self.derived.psi);
                    st.vq = update_vq_d(
                        &st.vq,
                        q_before,
                        service,
                        self.derived.packets_per_slot,
                        self.derived.psi,
                        cfg.excess_mean_cap,
                        cfg.excess_second_moment_cap,
                        cfg.aoi_tolerance,
                    );
                    e
                }
                ArrivalModel::Poisson => {
                    let e = violation_m(count, service);
                    st.vq = update_vq_m(
                        &st.vq,
                        service,
                        count,
                        cfg.excess_mean_cap,
                        cfg.excess_second_moment_cap,
                        self.derived.e_k,
                    );
                    e
                }
            };
            if self.policy == Policy::Baseline2 {
                st.vq.x = 0.0;
                st.vq.y = 0.0;
            }
            st.queue = update_queue(st.queue, service, count);
            st.aoi.record_arrivals(&arrivals[k]);
            let aoi = st.aoi.advance(&st.queue, now);
            st.prev_service = service;
            out.push(PairOutcome {
                weight: weights[k],
                power: self.powers[k].iter().sum(),
                rate,
                service,
                queue_before: q_before,
                aoi,
                event,
            });
        }
        Ok(out)
    }
}

/// Mean co-channel interference per (pair, RB) observed while every pair
/// transmits at uniform full power.
pub fn calibrate_interference(cfg: &SimConfig) -> Result<f64> {
    let derived = derive_params(cfg)?;
    let mut engine = Engine::new(
        cfg,
        derived,
        Policy::FixedPower,
        InterferenceMode::Exact,
        0.0,
    )?;
    let mut fails = 0;
    for slot in 0..cfg.calibration_slots.max(1) {
        engine.step(slot, &mut fails)?;
    }
    Ok(if engine.interference_count > 0 {
        engine.interference_sum / engine.interference_count as f64
    } else {
        0.0
    })
}

pub fn run(cfg: &SimConfig) -> Result<MetricsReport> {
    run_with(cfg, &RunOptions::default())
}

pub fn run_with(cfg: &SimConfig, opts: &RunOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let derived = derive_params(cfg)?;
    let i0 = match cfg.interference_w {
        Some(v) => v,
        None => calibrate_interference(cfg)?,
    };
    let mut engine = Engine::new(cfg, derived, cfg.policy, cfg.interference_mode, i0)?;
    let k = cfg.num_pairs;
    let warmup = (cfg.warmup_fraction * cfg.slots as f64).floor() as u64;
    let threshold = cfg.age_threshold_s();
    let measured = cfg.slots.saturating_sub(warmup);

    let mut report = MetricsReport {
        summary: Summary {
            seed: cfg.seed,
            slots: cfg.slots,
            measured_slots: measured,
            num_pairs: k,
            policy: cfg.policy,
            arrival_model: cfg.arrival_model,
            rate_model: cfg.rate_model,
            interference_w: i0,
            avg_aoi_s: 0.0,
            median_aoi_s: 0.0,
            worst_aoi_s: 0.0,
            avg_power_w: 0.0,
            avg_queue_packets: 0.0,
            avg_service_packets: 0.0,
            age_threshold_s: threshold,
            pr_aoi_exceeds: 0.0,
            pr_event: 0.0,
            aoi_tail_from_event: 0.0,
            mean_excess: 0.0,
            mean_squared_excess: 0.0,
            max_power_fraction: 0.0,
            ccp_unconverged: 0,
            reclusterings: 0,
        },
        aoi_samples: Vec::with_capacity(measured as usize * k),
        queue_log: Vec::with_capacity(cfg.slots as usize),
        power_log: Vec::with_capacity(cfg.slots as usize),
        excess_samples: Vec::new(),
        event_log: Vec::with_capacity(measured as usize * k),
        groupings: Vec::new(),
        trace: Vec::new(),
        positions: Vec::new(),
    };

    let (mut power_sum, mut queue_sum, mut service_sum) = (0.0, 0.0, 0.0);
    let (mut events, mut excess_sum, mut excess_sq_sum) = (0u64, 0.0, 0.0);
    let mut max_power: f64 = 0.0;
    let mut fails = 0;
    for slot in 0..cfg.slots {
        let outcomes = engine.step(slot, &mut fails)?;
        if let Some(a) = &engine.assignment {
            if a.slot == slot {
                report.groupings.push(a.clone());
            }
        }
        report
            .queue_log
            .push(outcomes.iter().map(|o| o.queue_before).sum::<f64>() / k as f64);
        report
            .power_log
            .push(outcomes.iter().map(|o| o.power).sum::<f64>() / k as f64);
        for (pair, o) in outcomes.iter().enumerate() {
            max_power = max_power.max(o.power / cfg.p_max_w);
            if opts.trace {
                let vq = engine.states[pair].vq;
                report.trace.push(TraceRow {
                    slot,
                    pair,
                    weight: o.weight,
                    power_w: o.power,
                    rate: o.rate,
                    service: o.service,
                    queue: o.queue_before,
                    aoi_s: o.aoi,
                    vx: vq.x,
                    vy: vq.y,
                    vr: vq.r,
                    vq: vq.q,
                    indicator: o.event.violated,
                });
            }
            if slot < warmup {
                continue;
            }
            // Picosecond grid: removes float noise between equal ages.
            report.aoi_samples.push((o.aoi * 1e12).round() / 1e12);
            report.event_log.push(o.event.violated);
            power_sum += o.power;
            queue_sum += o.queue_before;
            service_sum += o.service;
            if o.event.violated {
                events += 1;
                excess_sum += o.event.excess;
                excess_sq_sum += o.event.squared_excess();
                report.excess_samples.push(o.event.excess);
            }
        }
        if opts.positions {
            for p in &engine.pairs {
                report.positions.push(PositionRow {
                    slot,
                    pair_id: p.id,
                    tx_x: p.tx.position[0],
                    tx_y: p.tx.position[1],
                    rx_x: p.rx.position[0],
                    rx_y: p.rx.position[1],
                });
            }
        }
    }

    let s = &mut report.summary;
    s.reclusterings = report.groupings.len() as u64;
    s.max_power_fraction = max_power;
    s.ccp_unconverged = fails;
    let n = report.aoi_samples.len();
    if n > 0 {
        let nf = n as f64;
        s.avg_aoi_s = report.aoi_samples.iter().sum::<f64>() / nf;
        s.worst_aoi_s = report.aoi_samples.iter().cloned().fold(0.0, f64::max);
        s.median_aoi_s = quantile(&report.aoi_samples, 0.5);
        s.avg_power_w = power_sum / nf;
        s.avg_queue_packets = queue_sum / nf;
        s.avg_service_packets = service_sum / nf;
        s.pr_aoi_exceeds = tail_probability(&report.aoi_samples, threshold);
        s.pr_event = events as f64 / nf;
        s.aoi_tail_from_event = match cfg.arrival_model {
            ArrivalModel::Deterministic => aoi_bound_d(s.pr_event),
            ArrivalModel::Poisson => aoi_prob_m(
                s.pr_event,
                derived.lambda,
                cfg.age_threshold_m_s,
                cfg.slot_duration_s,
            ),
        };
        if events > 0 {
            s.mean_excess = excess_sum / events as f64;
            s.mean_squared_excess = excess_sq_sum / events as f64;
        }
    }
    Ok(report)
}

/// Fraction of samples strictly above `threshold`.
pub fn tail_probability(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&x| x > threshold).count() as f64 / samples.len() as f64
}

/// Lower empirical quantile (`q ∈ [0, 1]`).
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut xs = samples.to_vec();
    let idx = ((q * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1);
    let (_, v, _) = xs.select_nth_unstable_by(idx, f64::total_cmp);
    *v
}

/// Empirical survival function `(x, Pr{X > x})` at the sorted distinct
/// sample values.
pub fn ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples {
            required: 1,
            got: 0,
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        out.push((xs[i], (xs.len() - 1 - j) as f64 / n));
        i = j + 1;
    }
    Ok(out)
}

/// [`ccdf`] keeping only rows whose probability has dropped by at least
/// `rel` relative to the last kept row (first and last rows always kept).
pub fn ccdf_thinned(samples: &[f64], rel: f64) -> Result<Vec<(f64, f64)>> {
    let full = ccdf(samples)?;
    let last = full.len() - 1;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &(x, p)) in full.iter().enumerate() {
        let keep = match out.last() {
            None => true,
            Some(&(_, kept)) => i == last || p <= kept * (1.0 - rel),
        };
        if keep {
            out.push((x, p));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Lyapunov tradeoff weight.
    V,
    /// Arrival rate in bits/s.
    ArrivalRate,
    /// Channel uses per RB per slot; changes the slot duration to `L/ω`.
    Blocklength,
    /// Block error probability.
    BlockError,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v" | "V" => Ok(SweepParam::V),
            "arrival_rate" => Ok(SweepParam::ArrivalRate),
            "blocklength" => Ok(SweepParam::Blocklength),
            "block_error" => Ok(SweepParam::BlockError),
            other => Err(Error::InvalidInput(format!(
                "unknown sweep parameter '{other}' (expected v, arrival_rate, blocklength or block_error)"
            ))),
        }
    }
}

/// The configuration used for one sweep point.
pub fn sweep_config(base: &SimConfig, param: SweepParam, value: f64) -> Result<SimConfig> {
    let mut c = base.clone();
    match param {
        SweepParam::V => c.lyapunov_v = value,
        SweepParam::ArrivalRate => c.arrival_rate_bps = value,
        SweepParam::Blocklength => {
            if !(value >= 2.0) {
                return Err(Error::config(
                    "blocklength",
                    format!("must be >= 2, got {value}"),
                ));
            }
            c.slot_duration_s = value / c.rb_bandwidth_hz;
            c.blocklength_override = Some(value.round() as u64);
        }
        SweepParam::BlockError => c.block_error_prob = value,
    }
    c.validate()?;
    Ok(c)
}

/// Independent runs, one per value, all on the base seed.
pub fn sweep(base: &SimConfig, param: SweepParam, values: &[f64]) -> Result<Vec<MetricsReport>> {
    let configs = values
        .iter()
        .map(|&v| sweep_config(base, param, v))
        .collect::<Result<Vec<_>>>()?;
    run_all(&configs)
}

/// Runs of `base` at each seed.
pub fn replicate(base: &SimConfig, seeds: &[u64]) -> Result<Vec<MetricsReport>> {
    let configs: Vec<SimConfig> = seeds
        .iter()
        .map(|&seed| SimConfig {
            seed,
            ..base.clone()
        })
        .collect();
    run_all(&configs)
}

/// Runs every configuration; results keep the input order.
pub fn run_all(configs: &[SimConfig]) -> Result<Vec<MetricsReport>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        configs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        configs.iter().map(run).collect()
    }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CCDF_FILE: &str = "aoi_ccdf.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const POSITIONS_FILE: &str = "positions.csv";
pub const GROUPS_FILE: &str = "clusters.json";

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `threshold_s,prob` rows.
pub fn write_ccdf(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("threshold_s,prob\n");
    for (x, p) in rows {
        out.push_str(&format!("{x},{p}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        f,
        "slot,pair,weight,power_w,rate,service,queue,aoi_s,vx,vy,vr,vq,indicator"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            r.pair,
            r.weight,
            r.power_w,
            r.rate,
            r.service,
            r.queue,
            r.aoi_s,
            r.vx,
            r.vy,
            r.vr,
            r.vq,
            r.indicator as u8
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_positions(path: &Path, rows: &[PositionRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "slot,pair_id,tx_x,tx_y,rx_x,rx_y")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.slot, r.pair_id, r.tx_x, r.tx_y, r.rx_x, r.rx_y
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_groupings(path: &Path, groups: &[GroupAssignment]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(groups)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the summary and CCDF, plus whichever optional logs the report
/// carries, into `dir`.
pub fn write_outputs(dir: &Path, report: &MetricsReport, with_groups: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary(&dir.join(SUMMARY_FILE), &report.summary)?;
    let rows = if report.aoi_samples.is_empty() {
        Vec::new()
    } else {
        ccdf_thinned(&report.aoi_samples, 1e-3)?
    };
    write_ccdf(&dir.join(CCDF_FILE), &rows)?;
    if !report.trace.is_empty() {
        write_trace(&dir.join(TRACE_FILE), &report.trace)?;
    }
    if !report.positions.is_empty() {
        write_positions(&dir.join(POSITIONS_FILE), &report.positions)?;
    }
    if with_groups {
        write_groupings(&dir.join(GROUPS_FILE), &report.groupings)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            num_pairs: 6,
            num_groups: 2,
            num_rbs: 6,
            slots: 400,
            calibration_slots: 50,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_slots_is_empty() {
        let r = run(&SimConfig {
            slots: 0,
            ..small()
        })
        .unwrap();
        assert!(r.aoi_samples.is_empty());
        assert_eq!(r.summary.measured_slots, 0);
        assert_eq!(r.summary.avg_aoi_s, 0.0);
    }

    #[test]
    fn same_seed_same_report() {
        let a = run(&small()).unwrap();
        let b = run(&small()).unwrap();
        assert_eq!(a, b);
        let c = run(&SimConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.summary, c.summary);
    }

    #[test]
    fn budget_respected() {
        for policy in [Policy::Proposed, Policy::Baseline2, Policy::FixedPower] {
            for rate_model in [RateModel::Shannon, RateModel::FiniteBlocklength] {
                let r = run(&SimConfig {
                    policy,
                    rate_model,
                    ..small()
                })
                .unwrap();
                assert!(r.summary.max_power_fraction <= 1.0 + 1e-9, "{policy:?}");
                let s = &r.summary;
                assert!(s.worst_aoi_s >= s.avg_aoi_s);
                for p in [s.pr_aoi_exceeds, s.pr_event, s.aoi_tail_from_event] {
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn overprovisioned_pairs_never_violate() {
        let cfg = SimConfig {
            num_pairs: 2,
            num_groups: 2,
            p_max_w: 1.0,
            arrival_rate_bps: 0.2e6,
            slots: 10_000,
            interference_w: Some(0.0),
            ..SimConfig::default()
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.summary.pr_aoi_exceeds, 0.0);
    }

    #[test]
    fn tracker_matches_event_log() {
        // Rebuild every pair's age from arrivals and credited service.
        let cfg = small();
        let r = run_with(
            &cfg,
            &RunOptions {
                trace: true,
                positions: false,
            },
        )
        .unwrap();
        let d = derive_params(&cfg).unwrap();
        let tau = cfg.slot_duration_s;
        for pair in 0..cfg.num_pairs {
            let rows: Vec<&TraceRow> = r.trace.iter().filter(|t| t.pair == pair).collect();
            let mut arrivals = Vec::new();
            let mut served = 0.0;
            let mut departures: Vec<f64> = Vec::new();
            for (slot, row) in rows.iter().enumerate() {
                served += row.service.min(row.queue);
                let end = (slot + 1) as f64 * tau;
                while departures.len() < arrivals.len()
                    && served + 1e-9 >= (departures.len() + 1) as f64
                {
                    departures.push(end);
                }
                arrivals.extend(arrivals_deterministic(slot as u64, d.packets_per_slot, tau));
                if slot % 100 == 7 {
                    let freshest = arrivals
                        .iter()
                        .zip(&departures)
                        .filter(|(_, &dep)| dep <= end)
                        .map(|(&a, _)| a)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let expected = if freshest.is_finite() {
                        end - freshest
                    } else {
                        end
                    };
                    assert!((row.aoi_s - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ccdf_examples() {
        let c = ccdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, vec![(1.0, 2.0 / 3.0), (2.0, 1.0 / 3.0), (3.0, 0.0)]);
        assert!((tail_probability(&[1.0, 2.0, 3.0], 1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!(ccdf(&[]).is_err());
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        for (x, p) in ccdf(&xs).unwrap() {
            let ecdf = xs.iter().filter(|&&v| v <= x).count() as f64 / xs.len() as f64;
            assert!((p - (1.0 - ecdf)).abs() < 1e-12);
        }
        let thin = ccdf_thinned(&xs, 0.1).unwrap();
        assert!(thin.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1));
    }

    #[test]
    fn sweep_shapes() {
        let base = small();
        assert!(sweep(&base, SweepParam::V, &[]).unwrap().is_empty());
        let one = sweep(&base, SweepParam::V, &[base.lyapunov_v]).unwrap();
        assert_eq!(one[0], run(&base).unwrap());
        let c = sweep_config(&base, SweepParam::Blocklength, 360.0).unwrap();
        assert!((c.slot_duration_s - 2e-3).abs() < 1e-15);
        assert!("bogus".parse::<SweepParam>().is_err());
    }
}
