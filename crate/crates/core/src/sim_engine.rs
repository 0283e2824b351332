//! The closed-loop status-update simulation: scheduling, per-transmission
//! power/blocklength/interval control, age bookkeeping and virtual queues.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_tracker::{AoiError, AoiState};
use crate::evt_tail::empirical_quantile;
use crate::lyapunov_queues::{QueueParams, QueueSnapshot, TailMode, VirtualQueueSet};
use crate::par::{self, ExecMode};
use crate::phy_channel::{sample_channel_gain, sample_decode, LinkParams, PhyError};
use crate::transmission_optimizer::{
    solve_sp1_ccp, solve_sp1_oracle, solve_sp2, OptError, SolveMethod, Sp1Instance, Sp1Solution,
    DEFAULT_L_MAX,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Aoi(#[from] AoiError),
}

fn config_err(key: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    RoundRobin,
    /// Largest `e^tau (1 + Q_f)` first, ties to the lowest index.
    MaxWeight,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduler::RoundRobin => "round_robin",
            Scheduler::MaxWeight => "max_weight",
        })
    }
}

impl FromStr for Scheduler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "round_robin" | "rr" => Ok(Scheduler::RoundRobin),
            "max_weight" => Ok(Scheduler::MaxWeight),
            other => Err(format!(
                "unknown scheduler `{other}` (expected round_robin or max_weight)"
            )),
        }
    }
}

/// Warm-up successes per sensor used to estimate the tail threshold.
pub const WARMUP_SUCCESSES_PER_SENSOR: u64 = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of sensors K.
    pub sensors: usize,
    /// Measured transmissions N (after warm-up).
    pub lifetime: u64,
    /// Payload D^k in bits, one entry per sensor.
    pub payloads: Vec<f64>,
    pub link: LinkParams,
    pub l_max: u32,
    pub tail_mode: TailMode,
    /// Tail threshold eta in seconds.
    pub eta: f64,
    pub delta: f64,
    /// Time-average bound on e^tau.
    pub f_threshold: f64,
    pub pot_quantile: f64,
    pub lyapunov_v: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Transmissions before the measured phase; their peaks set q per sensor.
    pub warmup: u64,
    pub seed: u64,
    pub scheduler: Scheduler,
    pub sp1_method: SolveMethod,
}

impl SimConfig {
    /// Factory baseline for `sensors` sensors: 20-byte payloads,
    /// epsilon = 1e-9, N = 1e5, NEGATIVE tail mode.
    pub fn baseline(sensors: usize) -> Self {
        Self {
            sensors,
            lifetime: 100_000,
            payloads: vec![20.0 * 8.0; sensors],
            link: LinkParams::factory_default(1e-9),
            l_max: DEFAULT_L_MAX,
            tail_mode: TailMode::Negative,
            eta: 0.02,
            delta: 1e-9,
            f_threshold: 1.03,
            pot_quantile: 0.99,
            lyapunov_v: 1.0,
            s_min: 0.0,
            s_max: 0.1,
            warmup: WARMUP_SUCCESSES_PER_SENSOR * sensors as u64,
            seed: 1,
            scheduler: Scheduler::RoundRobin,
            sp1_method: SolveMethod::Ccp,
        }
    }

    pub fn with_payload_bytes(mut self, bytes: f64) -> Self {
        self.payloads = vec![bytes * 8.0; self.sensors];
        self
    }

    pub fn queue_params(&self) -> QueueParams {
        QueueParams {
            mode: self.tail_mode,
            eta: self.eta,
            delta: self.delta,
            f_threshold: self.f_threshold,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |key: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(
                    key,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        if self.sensors == 0 {
            return Err(config_err("sensors", "must be at least 1"));
        }
        if self.lifetime == 0 {
            return Err(config_err("lifetime", "must be at least 1"));
        }
        if self.warmup >= self.lifetime {
            return Err(config_err(
                "warmup",
                format!(
                    "must be below lifetime {}, got {}",
                    self.lifetime, self.warmup
                ),
            ));
        }
        if self.payloads.len() != self.sensors {
            return Err(config_err(
                "payloads",
                format!(
                    "expected {} entries, got {}",
                    self.sensors,
                    self.payloads.len()
                ),
            ));
        }
        for &d in &self.payloads {
            positive("payloads", d)?;
        }
        self.link.validate()?;
        if self.l_max == 0 {
            return Err(config_err("l_max", "must be at least 1"));
        }
        positive("eta", self.eta)?;
        positive("f_threshold", self.f_threshold)?;
        positive("lyapunov_v", self.lyapunov_v)?;
        positive("s_max", self.s_max)?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(config_err(
                "delta",
                format!("must be non-negative, got {}", self.delta),
            ));
        }
        if !(self.pot_quantile > 0.0 && self.pot_quantile < 1.0) {
            return Err(config_err(
                "pot_quantile",
                format!("must lie in (0, 1), got {}", self.pot_quantile),
            ));
        }
        if !(self.s_min >= 0.0 && self.s_min < self.s_max) {
            return Err(config_err(
                "s_min",
                format!("must satisfy 0 <= s_min < s_max, got {}", self.s_min),
            ));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::baseline(2)
    }
}

/// Sensor scheduled at 1-based transmission `n` under round robin (0-based
/// sensor index).
pub fn schedule(n: u64, sensors: usize) -> usize {
    assert!(n >= 1 && sensors >= 1);
    ((n - 1) % sensors as u64) as usize
}

fn max_weight(ages: &[f64], q_cost: &[f64]) -> usize {
    let mut best = 0;
    let mut best_w = f64::NEG_INFINITY;
    for (k, (a, q)) in ages.iter().zip(q_cost).enumerate() {
        let w = a.exp() * (1.0 + q);
        if w > best_w {
            best = k;
            best_w = w;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    /// 1-based index counted from the start of the run, warm-up included.
    pub n: u64,
    pub t_n: f64,
    /// 0-based scheduled sensor.
    pub sensor: usize,
    pub gain: f64,
    pub power: f64,
    pub blocklength: u32,
    pub interval: f64,
    pub decoded: bool,
    /// Ages tau(t_n) of every sensor after the update.
    pub ages: Vec<f64>,
    /// Peak age of the scheduled sensor when it was delivered.
    pub peak: Option<f64>,
    pub queues: Vec<QueueSnapshot>,
    /// P L / (S W).
    pub objective_increment: f64,
    pub feasible: bool,
}

/// Queue values of every sensor after transmission `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub n: u64,
    pub queues: Vec<QueueSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sensors: usize,
    pub lifetime: u64,
    pub warmup: u64,
    pub seed: u64,
    /// Time average of P L / (S W).
    pub avg_normalized_power: f64,
    /// Time average of e^tau(t_n), per sensor.
    pub avg_cost: Vec<f64>,
    /// Mean peak age b-bar in seconds (mean of the per-sensor means).
    pub avg_peak_aoi: f64,
    pub avg_peak_aoi_per_sensor: Vec<f64>,
    /// Mean update interval S-bar in seconds.
    pub avg_interval: f64,
    pub mean_power: f64,
    /// Mean P L / W in J.
    pub mean_energy: f64,
    pub mean_blocklength: f64,
    pub p99_blocklength: f64,
    /// 99th percentile of L / W in seconds.
    pub p99_transmission_time: f64,
    pub successes: u64,
    pub failures: u64,
    /// Transmissions where no power up to P_max met the rate requirement.
    pub infeasible: u64,
    /// Tail thresholds q frozen after warm-up (+inf when never set).
    pub pot_thresholds: Vec<f64>,
    pub final_queues: Vec<QueueSnapshot>,
    /// Largest |queue| over the measured phase.
    pub max_queue: f64,
    /// Measured-phase duration in seconds.
    pub duration: f64,
    /// Peak ages per sensor, measured phase only.
    #[serde(skip)]
    pub peak_series: Vec<Vec<f64>>,
    /// Queue values every `queue_stride` measured transmissions.
    #[serde(skip)]
    pub queue_trajectory: Vec<QueueSample>,
}

impl RunMetrics {
    pub fn ratio(&self) -> f64 {
        self.avg_peak_aoi / (self.sensors as f64 * self.avg_interval)
    }

    pub fn max_final_queue(&self) -> f64 {
        self.final_queues.iter().fold(0.0, |m, q| {
            m.max(q.q_cost.abs()).max(q.q_mean.abs()).max(q.q_var.abs())
        })
    }
}

/// Optional outputs of [`Simulation::run_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep every measured [`TransmissionRecord`].
    pub record_log: bool,
    /// Sample the queues every this many measured transmissions (0 = never).
    pub queue_stride: u64,
}

#[derive(Debug, Clone, Default)]
struct Accumulators {
    count: u64,
    normalized_power: f64,
    cost: Vec<f64>,
    interval: f64,
    power: f64,
    energy: f64,
    blocklength: f64,
    blocklengths: Vec<u32>,
    successes: u64,
    failures: u64,
    infeasible: u64,
    max_queue: f64,
    start_time: f64,
}

impl Accumulators {
    fn new(sensors: usize, start_time: f64) -> Self {
        Self {
            cost: vec![0.0; sensors],
            start_time,
            ..Self::default()
        }
    }
}

/// Evolving state of one run.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    rng: ChaCha8Rng,
    path_loss_db: f64,
    n: u64,
    time: f64,
    ages: Vec<AoiState>,
    age_buf: Vec<f64>,
    queues: VirtualQueueSet,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let path_loss_db = config.link.path_loss_db()?;
        let k = config.sensors;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            path_loss_db,
            n: 0,
            time: 0.0,
            ages: vec![AoiState::new(); k],
            age_buf: vec![0.0; k],
            queues: VirtualQueueSet::new(k, config.queue_params()),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn transmissions(&self) -> u64 {
        self.n
    }

    pub fn ages(&self) -> &[f64] {
        &self.age_buf
    }

    pub fn queues(&self) -> &VirtualQueueSet {
        &self.queues
    }

    fn next_sensor(&self) -> usize {
        match self.config.scheduler {
            Scheduler::RoundRobin => schedule(self.n + 1, self.config.sensors),
            Scheduler::MaxWeight => max_weight(&self.age_buf, &self.queues.q_cost),
        }
    }

    fn solve_sp1(&self, k: usize, gain: f64) -> Sp1Solution {
        let inst = match Sp1Instance::new(
            gain,
            self.config.link,
            self.config.payloads[k],
            self.config.l_max,
        ) {
            Ok(inst) => inst,
            Err(_) => return self.full_power_fallback(),
        };
        match self.config.sp1_method {
            SolveMethod::Ccp => solve_sp1_ccp(&inst),
            SolveMethod::Oracle => solve_sp1_oracle(&inst),
        }
    }

    fn full_power_fallback(&self) -> Sp1Solution {
        let l = self.config.l_max;
        Sp1Solution {
            power: self.config.link.p_max,
            blocklength: l,
            objective: self.config.link.p_max * l as f64,
            method: self.config.sp1_method,
            feasible: false,
            iterations: 0,
            objective_trace: Vec::new(),
            quality: crate::transmission_optimizer::SolveQuality::NoInterior,
        }
    }

    /// One transmission: schedule, control, channel outcome, ages, queues.
    pub fn step(&mut self) -> Result<TransmissionRecord, SimError> {
        let k = self.next_sensor();
        let gain = sample_channel_gain(&mut self.rng, self.path_loss_db);
        let phi = self.queues.phi_for(k, self.age_buf[k]);
        let psi = self.queues.psi_for(k, &self.age_buf);

        let sp1 = self.solve_sp1(k, gain);
        let bandwidth = self.config.link.bandwidth;
        let energy = sp1.energy(bandwidth);
        let interval = solve_sp2(
            phi,
            psi,
            self.config.lyapunov_v,
            energy,
            self.config.s_min,
            self.config.s_max,
        )
        .unwrap_or(self.config.s_max);

        self.time += interval;
        self.n += 1;
        // the decoding draw is always consumed so the stream does not depend
        // on feasibility
        let decoded = sample_decode(&mut self.rng, self.config.link.epsilon) && sp1.feasible;

        let mut peak = None;
        for (j, state) in self.ages.iter_mut().enumerate() {
            let record = state.advance(interval, j == k, decoded, sp1.power > 0.0, self.time)?;
            if let Some(r) = record {
                peak = Some(r.value);
            }
            self.age_buf[j] = state.age;
        }
        if let Some(b) = peak {
            self.queues.on_success(k, b);
        }
        self.queues.on_transmission(&self.age_buf);

        Ok(TransmissionRecord {
            n: self.n,
            t_n: self.time,
            sensor: k,
            gain,
            power: sp1.power,
            blocklength: sp1.blocklength,
            interval,
            decoded,
            ages: self.age_buf.clone(),
            peak,
            queues: self.queues.snapshots(),
            objective_increment: sp1.objective / (interval * bandwidth),
            feasible: sp1.feasible,
        })
    }

    /// Runs the warm-up, freezes q per sensor and clears the warm-up peaks.
    fn warm_up(&mut self) -> Result<Vec<f64>, SimError> {
        for _ in 0..self.config.warmup {
            self.step()?;
        }
        let thresholds: Vec<f64> = self
            .ages
            .iter()
            .map(|s| {
                empirical_quantile(&s.peak_values(), self.config.pot_quantile)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        self.queues.set_pot_thresholds(thresholds.clone());
        for s in &mut self.ages {
            s.clear_peaks();
        }
        Ok(thresholds)
    }

    /// Warm-up followed by `lifetime` measured transmissions.
    pub fn run_with(
        mut self,
        opts: RunOptions,
    ) -> Result<(RunMetrics, Vec<TransmissionRecord>), SimError> {
        let thresholds = self.warm_up()?;
        let cfg = self.config.clone();
        let k = cfg.sensors;
        let mut acc = Accumulators::new(k, self.time);
        acc.blocklengths.reserve(cfg.lifetime as usize);
        let mut log = Vec::new();
        let mut trajectory = Vec::new();
        for i in 1..=cfg.lifetime {
            let rec = self.step()?;
            acc.count += 1;
            acc.normalized_power += rec.objective_increment;
            for (c, a) in acc.cost.iter_mut().zip(&rec.ages) {
                *c += a.exp();
            }
            acc.interval += rec.interval;
            acc.power += rec.power;
            acc.energy += rec.power * rec.blocklength as f64 / cfg.link.bandwidth;
            acc.blocklength += rec.blocklength as f64;
            acc.blocklengths.push(rec.blocklength);
            if rec.decoded {
                acc.successes += 1;
            } else {
                acc.failures += 1;
            }
            if !rec.feasible {
                acc.infeasible += 1;
            }
            acc.max_queue = acc.max_queue.max(self.queues.max_abs());
            if opts.queue_stride > 0 && i % opts.queue_stride == 0 {
                trajectory.push(QueueSample {
                    n: rec.n,
                    queues: rec.queues.clone(),
                });
            }
            if opts.record_log {
                log.push(rec);
            }
        }
        let metrics = self.finish(acc, thresholds, trajectory);
        Ok((metrics, log))
    }

    fn finish(
        self,
        acc: Accumulators,
        thresholds: Vec<f64>,
        trajectory: Vec<QueueSample>,
    ) -> RunMetrics {
        let cfg = &self.config;
        let n = acc.count as f64;
        let peak_series: Vec<Vec<f64>> = self.ages.iter().map(AoiState::peak_values).collect();
        let per_sensor: Vec<f64> = peak_series
            .iter()
            .map(|p| {
                if p.is_empty() {
                    f64::NAN
                } else {
                    p.iter().sum::<f64>() / p.len() as f64
                }
            })
            .collect();
        let delivered: Vec<f64> = per_sensor
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let avg_peak_aoi = if delivered.is_empty() {
            f64::NAN
        } else {
            delivered.iter().sum::<f64>() / delivered.len() as f64
        };
        let mut lengths = acc.blocklengths;
        lengths.sort_unstable();
        let lengths_f: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        let p99_blocklength = empirical_quantile(&lengths_f, 0.99).unwrap_or(f64::NAN);
        RunMetrics {
            sensors: cfg.sensors,
            lifetime: cfg.lifetime,
            warmup: cfg.warmup,
            seed: cfg.seed,
            avg_normalized_power: acc.normalized_power / n,
            avg_cost: acc.cost.iter().map(|c| c / n).collect(),
            avg_peak_aoi,
            avg_peak_aoi_per_sensor: per_sensor,
            avg_interval: acc.interval / n,
            mean_power: acc.power / n,
            mean_energy: acc.energy / n,
            mean_blocklength: acc.blocklength / n,
            p99_blocklength,
            p99_transmission_time: p99_blocklength / cfg.link.bandwidth,
            successes: acc.successes,
            failures: acc.failures,
            infeasible: acc.infeasible,
            pot_thresholds: thresholds,
            final_queues: self.queues.snapshots(),
            max_queue: acc.max_queue,
            duration: self.time - acc.start_time,
            peak_series,
            queue_trajectory: trajectory,
        }
    }
}

/// Runs one configuration and returns its metrics.
pub fn run(config: &SimConfig) -> Result<RunMetrics, SimError> {
    Ok(Simulation::new(config.clone())?
        .run_with(RunOptions::default())?
        .0)
}

/// Runs one configuration and keeps every measured transmission record.
pub fn run_logged(config: &SimConfig) -> Result<(RunMetrics, Vec<TransmissionRecord>), SimError> {
    Simulation::new(config.clone())?.run_with(RunOptions {
        record_log: true,
        queue_stride: 0,
    })
}

/// Independent runs of `config` with the given seeds.
pub fn run_replications(
    config: &SimConfig,
    seeds: &[u64],
    mode: ExecMode,
) -> Vec<Result<RunMetrics, SimError>> {
    par::map_slice(mode, seeds, |&seed| {
        let mut cfg = config.clone();
        cfg.seed = seed;
        run(&cfg)
    })
}
