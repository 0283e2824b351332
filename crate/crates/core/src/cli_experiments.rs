//! Experiment configuration, sweeps, tail analysis and self-tests behind the
//! command-line interface. All CSV files are written with a JSON sidecar that
//! holds the resolved configuration and seeds.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_tracker::block_maxima;
use crate::evt_tail::{
    empirical_ccdf, fit_gev_block_maxima, fit_gpd_pot, gev_from_pot, ks_distance,
    runs_extremal_index, sample_gpd, GevParams,
};
use crate::lyapunov_queues::{write_queue_csv, TailMode};
use crate::par::{self, ExecMode};
use crate::phy_channel::{
    channel_gain_from_fading, dbm_to_watts, erfc, erfc_inv, fb_rate, path_loss_db, watts_to_dbm,
    LinkParams,
};
use crate::sim_engine::{
    RunMetrics, RunOptions, Scheduler, SimConfig, SimError, Simulation, TransmissionRecord,
    WARMUP_SUCCESSES_PER_SENSOR,
};
use crate::transmission_optimizer::{
    solve_sp1_ccp, solve_sp1_oracle, solve_sp2, SolveMethod, Sp1Instance,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
}

fn value_err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| value_err(key, format!("cannot parse `{}`: {e}", value.trim())))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: Display,
{
    let items = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_scalar(key, s))
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(value_err(key, "list must not be empty"));
    }
    Ok(items)
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Every tunable of the command-line experiments. Physical quantities are in
/// the units named by the key; dBm values are converted to W here only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sensors: usize,
    pub lifetime: u64,
    /// `None` means 5000 transmissions per sensor.
    pub warmup: Option<u64>,
    pub payload_bytes: f64,
    pub epsilon: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub distance_m: f64,
    pub p_max_dbm: f64,
    pub l_max: u32,
    pub tail_mode: TailMode,
    pub eta: f64,
    pub delta: f64,
    pub f_threshold: f64,
    pub pot_quantile: f64,
    pub lyapunov_v: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub scheduler: Scheduler,
    pub sp1_method: SolveMethod,
    pub seed: u64,
    pub reps: usize,
    pub parallel: bool,
    pub datasize_bytes: Vec<f64>,
    pub datasize_epsilons: Vec<f64>,
    pub sensor_counts: Vec<usize>,
    pub block_sizes: Vec<usize>,
    pub tail_modes: Vec<TailMode>,
    pub run_gap: usize,
    pub ccdf_points: usize,
    pub queue_stride: u64,
    pub log_records: bool,
    pub selftest_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sensors: 2,
            lifetime: 100_000,
            warmup: None,
            payload_bytes: 20.0,
            epsilon: 1e-9,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 1e6,
            distance_m: 15.0,
            p_max_dbm: 0.0,
            l_max: crate::transmission_optimizer::DEFAULT_L_MAX,
            tail_mode: TailMode::Negative,
            eta: 0.02,
            delta: 1e-9,
            f_threshold: 1.03,
            pot_quantile: 0.99,
            lyapunov_v: 1.0,
            s_min: 0.0,
            s_max: 0.1,
            scheduler: Scheduler::RoundRobin,
            sp1_method: SolveMethod::Ccp,
            seed: 1,
            reps: 5,
            parallel: true,
            datasize_bytes: vec![20.0, 50.0, 100.0, 150.0, 200.0, 250.0],
            datasize_epsilons: vec![1e-9, 1e-5],
            sensor_counts: (2..=10).collect(),
            block_sizes: vec![10, 50, 100, 500],
            tail_modes: vec![TailMode::Negative, TailMode::Positive],
            run_gap: 1,
            ccdf_points: 50,
            queue_stride: 100,
            log_records: false,
            selftest_draws: 120,
        }
    }
}

/// Recognised keys with a one-line description, in documentation order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("sensors", "number of sensors K"),
    ("lifetime", "measured transmissions N per run"),
    (
        "warmup",
        "warm-up transmissions, or `auto` for 5000 per sensor",
    ),
    ("payload_bytes", "payload per update in bytes"),
    ("epsilon", "target decoding error probability"),
    ("noise_psd_dbm_hz", "noise power spectral density in dBm/Hz"),
    ("bandwidth_hz", "bandwidth in Hz"),
    ("distance_m", "sensor to controller distance in m"),
    ("p_max_dbm", "power budget in dBm"),
    ("l_max", "largest blocklength in channel uses"),
    ("tail_mode", "negative, zero or positive"),
    ("eta", "tail threshold eta in s"),
    ("delta", "tail slack delta"),
    ("f_threshold", "bound on the time average of e^age"),
    (
        "pot_quantile",
        "quantile of warm-up peaks used as tail threshold",
    ),
    ("lyapunov_v", "drift-plus-penalty weight V"),
    ("s_min", "smallest update interval in s"),
    ("s_max", "largest update interval in s"),
    ("scheduler", "round_robin or max_weight"),
    ("sp1_method", "ccp or oracle"),
    (
        "seed",
        "base seed; sweep cells add their point and replication index",
    ),
    ("reps", "replications per sweep point"),
    ("parallel", "run cells on the thread pool (true/false)"),
    ("datasize_bytes", "payload sizes of sweep-datasize"),
    ("datasize_epsilons", "error probabilities of sweep-datasize"),
    ("sensor_counts", "sensor counts of sweep-sensors"),
    ("block_sizes", "block sizes M of the tail analysis"),
    ("tail_modes", "tail modes of the tail analysis"),
    ("run_gap", "run length of the extremal-index runs estimator"),
    ("ccdf_points", "points on each fitted GEV curve"),
    ("queue_stride", "queue sample period of `run` (0 disables)"),
    (
        "log_records",
        "write every transmission of `run` (true/false)",
    ),
    (
        "selftest_draws",
        "channel draws in the optimizer self-check",
    ),
];

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "sensors" => self.sensors = parse_scalar(key, v)?,
            "lifetime" => self.lifetime = parse_scalar(key, v)?,
            "warmup" => {
                self.warmup = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_scalar(key, v)?)
                }
            }
            "payload_bytes" => self.payload_bytes = parse_scalar(key, v)?,
            "epsilon" => self.epsilon = parse_scalar(key, v)?,
            "noise_psd_dbm_hz" => self.noise_psd_dbm_hz = parse_scalar(key, v)?,
            "bandwidth_hz" => self.bandwidth_hz = parse_scalar(key, v)?,
            "distance_m" => self.distance_m = parse_scalar(key, v)?,
            "p_max_dbm" => self.p_max_dbm = parse_scalar(key, v)?,
            "l_max" => self.l_max = parse_scalar(key, v)?,
            "tail_mode" => self.tail_mode = parse_scalar(key, v)?,
            "eta" => self.eta = parse_scalar(key, v)?,
            "delta" => self.delta = parse_scalar(key, v)?,
            "f_threshold" => self.f_threshold = parse_scalar(key, v)?,
            "pot_quantile" => self.pot_quantile = parse_scalar(key, v)?,
            "lyapunov_v" => self.lyapunov_v = parse_scalar(key, v)?,
            "s_min" => self.s_min = parse_scalar(key, v)?,
            "s_max" => self.s_max = parse_scalar(key, v)?,
            "scheduler" => self.scheduler = parse_scalar(key, v)?,
            "sp1_method" => {
                self.sp1_method = match v.to_ascii_lowercase().as_str() {
                    "ccp" => SolveMethod::Ccp,
                    "oracle" => SolveMethod::Oracle,
                    other => {
                        return Err(value_err(
                            key,
                            format!("expected ccp or oracle, got `{other}`"),
                        ))
                    }
                }
            }
            "seed" => self.seed = parse_scalar(key, v)?,
            "reps" => self.reps = parse_scalar(key, v)?,
            "parallel" => self.parallel = parse_scalar(key, v)?,
            "datasize_bytes" => self.datasize_bytes = parse_list(key, v)?,
            "datasize_epsilons" => self.datasize_epsilons = parse_list(key, v)?,
            "sensor_counts" => self.sensor_counts = parse_list(key, v)?,
            "block_sizes" => self.block_sizes = parse_list(key, v)?,
            "tail_modes" => self.tail_modes = parse_list(key, v)?,
            "run_gap" => self.run_gap = parse_scalar(key, v)?,
            "ccdf_points" => self.ccdf_points = parse_scalar(key, v)?,
            "queue_stride" => self.queue_stride = parse_scalar(key, v)?,
            "log_records" => self.log_records = parse_scalar(key, v)?,
            "selftest_draws" => self.selftest_draws = parse_scalar(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: assignment.to_string(),
            })?;
        self.set(k.trim(), v)
    }

    /// Resolved configuration as key/value strings, the sidecar format.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let pairs: Vec<(&str, String)> = vec![
            ("sensors", self.sensors.to_string()),
            ("lifetime", self.lifetime.to_string()),
            (
                "warmup",
                self.warmup.map_or("auto".to_string(), |w| w.to_string()),
            ),
            ("payload_bytes", self.payload_bytes.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz.to_string()),
            ("bandwidth_hz", self.bandwidth_hz.to_string()),
            ("distance_m", self.distance_m.to_string()),
            ("p_max_dbm", self.p_max_dbm.to_string()),
            ("l_max", self.l_max.to_string()),
            ("tail_mode", self.tail_mode.to_string()),
            ("eta", self.eta.to_string()),
            ("delta", self.delta.to_string()),
            ("f_threshold", self.f_threshold.to_string()),
            ("pot_quantile", self.pot_quantile.to_string()),
            ("lyapunov_v", self.lyapunov_v.to_string()),
            ("s_min", self.s_min.to_string()),
            ("s_max", self.s_max.to_string()),
            ("scheduler", self.scheduler.to_string()),
            (
                "sp1_method",
                match self.sp1_method {
                    SolveMethod::Ccp => "ccp".to_string(),
                    SolveMethod::Oracle => "oracle".to_string(),
                },
            ),
            ("seed", self.seed.to_string()),
            ("reps", self.reps.to_string()),
            ("parallel", self.parallel.to_string()),
            ("datasize_bytes", join(&self.datasize_bytes)),
            ("datasize_epsilons", join(&self.datasize_epsilons)),
            ("sensor_counts", join(&self.sensor_counts)),
            ("block_sizes", join(&self.block_sizes)),
            ("tail_modes", join(&self.tail_modes)),
            ("run_gap", self.run_gap.to_string()),
            ("ccdf_points", self.ccdf_points.to_string()),
            ("queue_stride", self.queue_stride.to_string()),
            ("log_records", self.log_records.to_string()),
            ("selftest_draws", self.selftest_draws.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn link(&self, epsilon: f64) -> LinkParams {
        LinkParams {
            noise_psd: dbm_to_watts(self.noise_psd_dbm_hz),
            bandwidth: self.bandwidth_hz,
            distance: self.distance_m,
            p_max: dbm_to_watts(self.p_max_dbm),
            epsilon,
        }
    }

    /// Simulation parameters for `sensors` sensors, `bytes` payload and
    /// error probability `epsilon`, seeded with `seed`.
    pub fn sim_config_for(
        &self,
        sensors: usize,
        bytes: f64,
        epsilon: f64,
        seed: u64,
    ) -> Result<SimConfig, SimError> {
        let cfg = SimConfig {
            sensors,
            lifetime: self.lifetime,
            payloads: vec![bytes * 8.0; sensors],
            link: self.link(epsilon),
            l_max: self.l_max,
            tail_mode: self.tail_mode,
            eta: self.eta,
            delta: self.delta,
            f_threshold: self.f_threshold,
            pot_quantile: self.pot_quantile,
            lyapunov_v: self.lyapunov_v,
            s_min: self.s_min,
            s_max: self.s_max,
            warmup: self
                .warmup
                .unwrap_or(WARMUP_SUCCESSES_PER_SENSOR * sensors as u64),
            seed,
            scheduler: self.scheduler,
            sp1_method: self.sp1_method,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sim_config(&self) -> Result<SimConfig, SimError> {
        self.sim_config_for(self.sensors, self.payload_bytes, self.epsilon, self.seed)
    }

    /// Checks everything that does not depend on the sweep point.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(value_err(
                "epsilon",
                format!("must lie in (0, 0.5], got {}", self.epsilon),
            ));
        }
        for (key, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("distance_m", self.distance_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(value_err(key, format!("must be positive, got {v}")));
            }
        }
        self.sim_config().map_err(|e| match e {
            SimError::Config { key, reason } => value_err(key, reason),
            SimError::Phy(p) => value_err("link", p.to_string()),
            other => value_err("config", other.to_string()),
        })?;
        if self.reps == 0 {
            return Err(value_err("reps", "must be at least 1"));
        }
        if self.run_gap == 0 {
            return Err(value_err("run_gap", "must be at least 1"));
        }
        if self.block_sizes.contains(&0) {
            return Err(value_err("block_sizes", "block sizes must be at least 1"));
        }
        if self.sensor_counts.contains(&0) {
            return Err(value_err(
                "sensor_counts",
                "sensor counts must be at least 1",
            ));
        }
        for &d in &self.datasize_bytes {
            if !(d.is_finite() && d > 0.0) {
                return Err(value_err(
                    "datasize_bytes",
                    format!("must be positive, got {d}"),
                ));
            }
        }
        for &e in &self.datasize_epsilons {
            if !(e > 0.0 && e <= 0.5) {
                return Err(value_err(
                    "datasize_epsilons",
                    format!("must lie in (0, 0.5], got {e}"),
                ));
            }
        }
        Ok(())
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

/// Reads a config file. A JSON sidecar written by this tool is accepted too,
/// which reproduces the run that produced it.
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let sidecar: Sidecar = serde_json::from_str(&text)
            .with_context(|| format!("parsing sidecar {}", path.display()))?;
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &sidecar.config {
            cfg.set(k, v)?;
        }
        return Ok(cfg);
    }
    Ok(parse_config_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    SweepDatasize,
    SweepSensors,
    Tail,
    Selftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::SweepDatasize => "sweep-datasize",
            ExperimentKind::SweepSensors => "sweep-sensors",
            ExperimentKind::Tail => "tail",
            ExperimentKind::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    /// Output directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

/// Seed and label of one independent simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub index: usize,
    pub seed: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub reps: usize,
    pub config: BTreeMap<String, String>,
    pub cells: Vec<CellMeta>,
    pub files: Vec<String>,
}

fn sidecar(spec: &ExperimentSpec, cells: Vec<CellMeta>, files: Vec<String>) -> Sidecar {
    Sidecar {
        command: spec.kind.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: spec.config.seed,
        reps: spec.config.reps,
        config: spec.config.to_pairs(),
        cells,
        files,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref))?;
    }
    w.flush()?;
    Ok(())
}

fn write_sidecar(dir: &Path, stem: &str, car: &Sidecar) -> Result<()> {
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(car)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

struct Cell<P> {
    meta: CellMeta,
    point: P,
    config: SimConfig,
}

fn run_cells<P: Sync>(mode: ExecMode, cells: &[Cell<P>]) -> Vec<Result<RunMetrics, SimError>> {
    par::map_slice(mode, cells, |c| crate::sim_engine::run(&c.config))
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub metrics: RunMetrics,
    pub records: Vec<TransmissionRecord>,
}

pub fn run_single(spec: &ExperimentSpec) -> Result<SingleRun> {
    spec.config.validate()?;
    let cfg = spec.config.sim_config()?;
    let opts = RunOptions {
        record_log: spec.config.log_records,
        queue_stride: spec.config.queue_stride,
    };
    let (metrics, records) = Simulation::new(cfg.clone())?.run_with(opts)?;
    if let Some(dir) = &spec.out_dir {
        ensure_dir(dir)?;
        let mut files = vec!["run_metrics.json".to_string(), "run_peaks.csv".to_string()];
        let doc = serde_json::json!({ "config": cfg, "metrics": metrics });
        fs::write(
            dir.join("run_metrics.json"),
            serde_json::to_string_pretty(&doc)?,
        )?;
        let peak_rows: Vec<Vec<String>> = metrics
            .peak_series
            .iter()
            .enumerate()
            .flat_map(|(k, p)| {
                p.iter().enumerate().map(move |(m, b)| {
                    vec![(k + 1).to_string(), (m + 1).to_string(), b.to_string()]
                })
            })
            .collect();
        write_csv(
            &dir.join("run_peaks.csv"),
            &["sensor", "m", "b_m"],
            &peak_rows,
        )?;
        if !metrics.queue_trajectory.is_empty() {
            let f = fs::File::create(dir.join("run_queues.csv"))?;
            write_queue_csv(
                f,
                metrics
                    .queue_trajectory
                    .iter()
                    .map(|s| (s.n, s.queues.as_slice())),
            )?;
            files.push("run_queues.csv".to_string());
        }
        if !records.is_empty() {
            write_records_csv(&dir.join("run_transmissions.csv"), &records)?;
            files.push("run_transmissions.csv".to_string());
        }
        let cells = vec![CellMeta {
            index: 0,
            seed: cfg.seed,
            label: format!(
                "K={} D={}B eps={}",
                cfg.sensors, spec.config.payload_bytes, cfg.link.epsilon
            ),
        }];
        write_sidecar(dir, "run", &sidecar(spec, cells, files))?;
    }
    Ok(SingleRun { metrics, records })
}

fn write_records_csv(path: &Path, records: &[TransmissionRecord]) -> Result<()> {
    let k = records.first().map_or(0, |r| r.ages.len());
    let mut header: Vec<String> = [
        "n",
        "t_n",
        "sensor",
        "h",
        "P",
        "L",
        "S",
        "B",
        "feasible",
        "increment",
        "peak",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in 1..=k {
        header.extend([
            format!("age{j}"),
            format!("Qf{j}"),
            format!("Qm{j}"),
            format!("Qv{j}"),
        ]);
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.n.to_string(),
                r.t_n.to_string(),
                (r.sensor + 1).to_string(),
                r.gain.to_string(),
                r.power.to_string(),
                r.blocklength.to_string(),
                r.interval.to_string(),
                u8::from(r.decoded).to_string(),
                u8::from(r.feasible).to_string(),
                r.objective_increment.to_string(),
                r.peak.map_or(String::new(), |b| b.to_string()),
            ];
            for (a, q) in r.ages.iter().zip(&r.queues) {
                row.extend([
                    a.to_string(),
                    q.q_cost.to_string(),
                    q.q_mean.to_string(),
                    q.q_var.to_string(),
                ]);
            }
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header_refs, &rows)
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasizeRow {
    pub payload_bytes: f64,
    pub epsilon: f64,
    pub avg_power_dbm: f64,
    pub avg_power_w: f64,
    pub avg_energy_j: f64,
    pub mean_blocklength: f64,
    pub p99_blocklength: f64,
    pub p99_tx_time_s: f64,
    pub infeasible_rate: f64,
    pub reps_ok: usize,
    pub error: Option<String>,
}

pub fn run_sweep_datasize(spec: &ExperimentSpec) -> Result<Vec<DatasizeRow>> {
    let c = &spec.config;
    c.validate()?;
    let mut points = Vec::new();
    for &eps in &c.datasize_epsilons {
        for (di, &d) in c.datasize_bytes.iter().enumerate() {
            points.push((di, d, eps));
        }
    }
    let mut cells = Vec::new();
    for (p, &(di, d, eps)) in points.iter().enumerate() {
        for r in 0..c.reps {
            let index = p * c.reps + r;
            // both error targets at one payload see the same fading stream
            let seed = c.seed.wrapping_add((di * c.reps + r) as u64);
            cells.push(Cell {
                meta: CellMeta {
                    index,
                    seed,
                    label: format!("D={d}B eps={eps} rep={r}"),
                },
                point: p,
                config: c.sim_config_for(c.sensors, d, eps, seed)?,
            });
        }
    }
    let results = run_cells(c.exec_mode(), &cells);
    let rows: Vec<DatasizeRow> = points
        .iter()
        .enumerate()
        .map(|(p, &(_, d, eps))| {
            let (ok, errors) = split_results(&cells, &results, p);
            let avg_power_w = mean(ok.iter().map(|m| m.mean_power));
            DatasizeRow {
                payload_bytes: d,
                epsilon: eps,
                avg_power_dbm: watts_to_dbm(avg_power_w),
                avg_power_w,
                avg_energy_j: mean(ok.iter().map(|m| m.mean_energy)),
                mean_blocklength: mean(ok.iter().map(|m| m.mean_blocklength)),
                p99_blocklength: mean(ok.iter().map(|m| m.p99_blocklength)),
                p99_tx_time_s: mean(ok.iter().map(|m| m.p99_transmission_time)),
                infeasible_rate: mean(ok.iter().map(|m| m.infeasible as f64 / m.lifetime as f64)),
                reps_ok: ok.len(),
                error: errors,
            }
        })
        .collect();
    if let Some(dir) = &spec.out_dir {
        ensure_dir(dir)?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.payload_bytes.to_string(),
                    r.epsilon.to_string(),
                    r.avg_power_dbm.to_string(),
                    r.avg_energy_j.to_string(),
                    r.mean_blocklength.to_string(),
                    r.p99_blocklength.to_string(),
                    r.p99_tx_time_s.to_string(),
                    r.infeasible_rate.to_string(),
                    r.reps_ok.to_string(),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("sweep_datasize.csv"),
            &[
                "D_bytes",
                "epsilon",
                "avg_P_dBm",
                "avg_energy_J",
                "mean_L",
                "p99_L",
                "p99_tx_time_s",
                "infeasible_rate",
                "reps",
                "error",
            ],
            &table,
        )?;
        let metas = cells.into_iter().map(|c| c.meta).collect();
        write_sidecar(
            dir,
            "sweep_datasize",
            &sidecar(spec, metas, vec!["sweep_datasize.csv".to_string()]),
        )?;
    }
    Ok(rows)
}

fn split_results<'a, P: PartialEq<usize>>(
    cells: &[Cell<P>],
    results: &'a [Result<RunMetrics, SimError>],
    point: usize,
) -> (Vec<&'a RunMetrics>, Option<String>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        if c.point != point {
            continue;
        }
        match r {
            Ok(m) => ok.push(m),
            Err(e) => errors.push(format!("{}: {e}", c.meta.label)),
        }
    }
    let errors = (!errors.is_empty()).then(|| errors.join("; "));
    (ok, errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorsRow {
    pub sensors: usize,
    pub avg_peak_aoi_s: f64,
    pub avg_interval_s: f64,
    /// b-bar / (K S-bar).
    pub ratio: f64,
    pub max_avg_cost: f64,
    pub reps_ok: usize,
    pub error: Option<String>,
}

pub fn run_sweep_sensors(spec: &ExperimentSpec) -> Result<Vec<SensorsRow>> {
    let c = &spec.config;
    c.validate()?;
    let mut cells = Vec::new();
    for (p, &k) in c.sensor_counts.iter().enumerate() {
        for r in 0..c.reps {
            let index = p * c.reps + r;
            let seed = c.seed.wrapping_add(index as u64);
            cells.push(Cell {
                meta: CellMeta {
                    index,
                    seed,
                    label: format!("K={k} rep={r}"),
                },
                point: p,
                config: c.sim_config_for(k, c.payload_bytes, c.epsilon, seed)?,
            });
        }
    }
    let results = run_cells(c.exec_mode(), &cells);
    let rows: Vec<SensorsRow> = c
        .sensor_counts
        .iter()
        .enumerate()
        .map(|(p, &k)| {
            let (ok, error) = split_results(&cells, &results, p);
            let b = mean(ok.iter().map(|m| m.avg_peak_aoi));
            let s = mean(ok.iter().map(|m| m.avg_interval));
            SensorsRow {
                sensors: k,
                avg_peak_aoi_s: b,
                avg_interval_s: s,
                ratio: b / (k as f64 * s),
                max_avg_cost: ok
                    .iter()
                    .flat_map(|m| m.avg_cost.iter().copied())
                    .fold(f64::NAN, f64::max),
                reps_ok: ok.len(),
                error,
            }
        })
        .collect();
    if let Some(dir) = &spec.out_dir {
        ensure_dir(dir)?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.sensors.to_string(),
                    r.avg_peak_aoi_s.to_string(),
                    r.avg_interval_s.to_string(),
                    r.ratio.to_string(),
                    r.max_avg_cost.to_string(),
                    r.reps_ok.to_string(),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("sweep_sensors.csv"),
            &[
                "K",
                "avg_peak_aoi_s",
                "avg_interval_s",
                "ratio",
                "max_avg_cost",
                "reps",
                "error",
            ],
            &table,
        )?;
        let metas = cells.into_iter().map(|c| c.meta).collect();
        write_sidecar(
            dir,
            "sweep_sensors",
            &sidecar(spec, metas, vec!["sweep_sensors.csv".to_string()]),
        )?;
    }
    Ok(rows)
}

// ---------------------------------------------------------------- tail

/// Block-maxima statistics of one replication at one block size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub maxima: usize,
    /// KS distance to the GEV law implied by the peaks-over-threshold fit.
    pub ks_pot: f64,
    /// KS distance to the PWM fit of the maxima themselves.
    pub ks_pwm: f64,
    pub shape_pwm: f64,
    pub location: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub mode: TailMode,
    pub block_size: usize,
    /// Mean over the replications where the block size was usable.
    pub ks_pot: f64,
    pub ks_pwm: f64,
    pub shape_pwm: f64,
    pub maxima: f64,
    pub reps_ok: usize,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailModeSummary {
    pub mode: TailMode,
    pub avg_peak_aoi_s: f64,
    pub pot_threshold: f64,
    pub pot_shape: f64,
    pub pot_scale: f64,
    pub extremal_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    pub modes: Vec<TailModeSummary>,
}

struct RepTail {
    avg_peak: f64,
    pot: crate::evt_tail::PotFit,
    theta: f64,
    cells: Vec<Result<(TailCell, CcdfCurve), String>>,
}

struct CcdfCurve {
    empirical: Vec<(f64, f64)>,
    model: Vec<(f64, f64)>,
}

fn tail_of_run(m: &RunMetrics, c: &ExperimentConfig) -> Result<RepTail, String> {
    let pooled: Vec<f64> = m.peak_series.iter().flatten().copied().collect();
    let pot = fit_gpd_pot(&pooled, c.pot_quantile).map_err(|e| format!("PoT fit: {e}"))?;
    // clusters are counted within each sensor's own series
    let mut exceed = 0.0;
    let mut weighted = 0.0;
    for s in &m.peak_series {
        let n_exc = s.iter().filter(|&&x| x > pot.threshold).count() as f64;
        if n_exc > 0.0 {
            let th = runs_extremal_index(s, pot.threshold, c.run_gap).map_err(|e| e.to_string())?;
            weighted += th * n_exc;
            exceed += n_exc;
        }
    }
    let theta = if exceed > 0.0 { weighted / exceed } else { 1.0 };
    let cells = c
        .block_sizes
        .iter()
        .map(|&bs| {
            let mut maxima = Vec::new();
            for s in &m.peak_series {
                maxima.extend(block_maxima(s, bs).map_err(|e| e.to_string())?);
            }
            let pwm = fit_gev_block_maxima(&maxima).map_err(|e| format!("M={bs}: {e}"))?;
            let model = gev_from_pot(&pot, theta, bs).map_err(|e| format!("M={bs}: {e}"))?;
            let ks_pot = ks_distance(&maxima, &model).map_err(|e| e.to_string())?;
            let ks_pwm = ks_distance(&maxima, &pwm.params).map_err(|e| e.to_string())?;
            let curve = ccdf_curve(&maxima, &model, c.ccdf_points).map_err(|e| e.to_string())?;
            Ok((
                TailCell {
                    maxima: maxima.len(),
                    ks_pot,
                    ks_pwm,
                    shape_pwm: pwm.params.shape,
                    location: model.location,
                    scale: model.scale,
                },
                curve,
            ))
        })
        .collect();
    Ok(RepTail {
        avg_peak: m.avg_peak_aoi,
        pot,
        theta,
        cells,
    })
}

/// Normalized empirical CCDF of the maxima and the standardized GEV curve.
fn ccdf_curve(
    maxima: &[f64],
    model: &GevParams,
    points: usize,
) -> Result<CcdfCurve, crate::evt_tail::EvtError> {
    let norm: Vec<f64> = maxima.iter().map(|&z| model.normalize(z)).collect();
    let emp = empirical_ccdf(&norm)?;
    let std = model.standardized();
    let empirical: Vec<(f64, f64)> = emp
        .values
        .iter()
        .copied()
        .zip(emp.ccdf.iter().copied())
        .collect();
    let (lo, hi) = (empirical[0].0, empirical[empirical.len() - 1].0);
    let n = points.max(2);
    let model = (0..n)
        .map(|i| {
            let z = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (z, std.ccdf(z))
        })
        .collect();
    Ok(CcdfCurve { empirical, model })
}

pub fn run_tail_analysis(spec: &ExperimentSpec) -> Result<TailReport> {
    let c = &spec.config;
    c.validate()?;
    let mut cells = Vec::new();
    for (p, &mode) in c.tail_modes.iter().enumerate() {
        for r in 0..c.reps {
            let index = p * c.reps + r;
            let seed = c.seed.wrapping_add(index as u64);
            let mut cfg = c.sim_config_for(c.sensors, c.payload_bytes, c.epsilon, seed)?;
            cfg.tail_mode = mode;
            cfg.validate()?;
            cells.push(Cell {
                meta: CellMeta {
                    index,
                    seed,
                    label: format!("mode={mode} rep={r}"),
                },
                point: p,
                config: cfg,
            });
        }
    }
    let mode = c.exec_mode();
    let tails: Vec<Result<RepTail, String>> = par::map_slice(mode, &cells, |cell| {
        let m = crate::sim_engine::run(&cell.config).map_err(|e| e.to_string())?;
        tail_of_run(&m, c)
    });

    let mut rows = Vec::new();
    let mut modes = Vec::new();
    let mut files = Vec::new();
    if let Some(dir) = &spec.out_dir {
        ensure_dir(dir)?;
    }
    for (p, &tm) in c.tail_modes.iter().enumerate() {
        let reps: Vec<&RepTail> = cells
            .iter()
            .zip(&tails)
            .filter(|(cell, _)| cell.point == p)
            .filter_map(|(_, t)| t.as_ref().ok())
            .collect();
        let failed: Vec<String> = cells
            .iter()
            .zip(&tails)
            .filter(|(cell, _)| cell.point == p)
            .filter_map(|(cell, t)| {
                t.as_ref()
                    .err()
                    .map(|e| format!("{}: {e}", cell.meta.label))
            })
            .collect();
        modes.push(TailModeSummary {
            mode: tm,
            avg_peak_aoi_s: mean(reps.iter().map(|r| r.avg_peak)),
            pot_threshold: mean(reps.iter().map(|r| r.pot.threshold)),
            pot_shape: mean(reps.iter().map(|r| r.pot.shape)),
            pot_scale: mean(reps.iter().map(|r| r.pot.scale)),
            extremal_index: mean(reps.iter().map(|r| r.theta)),
        });
        for (bi, &bs) in c.block_sizes.iter().enumerate() {
            let ok: Vec<&(TailCell, CcdfCurve)> = reps
                .iter()
                .filter_map(|r| r.cells[bi].as_ref().ok())
                .collect();
            let mut skipped: Vec<String> = reps
                .iter()
                .filter_map(|r| r.cells[bi].as_ref().err().cloned())
                .collect();
            skipped.extend(failed.iter().cloned());
            rows.push(TailRow {
                mode: tm,
                block_size: bs,
                ks_pot: mean(ok.iter().map(|(t, _)| t.ks_pot)),
                ks_pwm: mean(ok.iter().map(|(t, _)| t.ks_pwm)),
                shape_pwm: mean(ok.iter().map(|(t, _)| t.shape_pwm)),
                maxima: mean(ok.iter().map(|(t, _)| t.maxima as f64)),
                reps_ok: ok.len(),
                skipped: (!skipped.is_empty()).then(|| skipped.join("; ")),
            });
            if let (Some(dir), Some((_, curve))) = (&spec.out_dir, ok.first()) {
                let name = format!("tail_ccdf_{tm}_M{bs}.csv");
                let emp: Vec<Vec<String>> = curve
                    .empirical
                    .iter()
                    .map(|(z, p)| vec!["empirical".to_string(), z.to_string(), p.to_string()])
                    .chain(
                        curve
                            .model
                            .iter()
                            .map(|(z, p)| vec!["gev".to_string(), z.to_string(), p.to_string()]),
                    )
                    .collect();
                write_csv(&dir.join(&name), &["series", "z_normalized", "ccdf"], &emp)?;
                files.push(name);
            }
        }
    }
    if let Some(dir) = &spec.out_dir {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let s = modes
                    .iter()
                    .find(|s| s.mode == r.mode)
                    .expect("mode summary");
                vec![
                    r.mode.to_string(),
                    r.block_size.to_string(),
                    r.maxima.to_string(),
                    r.ks_pot.to_string(),
                    r.ks_pwm.to_string(),
                    s.pot_shape.to_string(),
                    r.shape_pwm.to_string(),
                    s.pot_threshold.to_string(),
                    s.pot_scale.to_string(),
                    s.extremal_index.to_string(),
                    s.avg_peak_aoi_s.to_string(),
                    r.reps_ok.to_string(),
                    r.skipped.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("tail_summary.csv"),
            &[
                "mode",
                "M",
                "maxima",
                "ks_pot",
                "ks_pwm",
                "xi_pot",
                "xi_pwm",
                "q",
                "sigma_pot",
                "theta",
                "avg_peak_aoi_s",
                "reps",
                "skipped",
            ],
            &table,
        )?;
        files.insert(0, "tail_summary.csv".to_string());
        let metas = cells.into_iter().map(|c| c.meta).collect();
        write_sidecar(dir, "tail", &sidecar(spec, metas, files))?;
    }
    Ok(TailReport { rows, modes })
}

// ---------------------------------------------------------------- selftest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub measured: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<SelfCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One CCP-vs-oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCase {
    pub instance: usize,
    pub payload_bytes: f64,
    pub epsilon: f64,
    pub fading: f64,
    pub oracle_objective: f64,
    pub ccp_objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub ccp_feasible: bool,
    pub monotone: bool,
}

/// CCP against the exhaustive oracle on `draws` Rayleigh draws spread over
/// the payload and error-probability grid.
pub fn optimizer_cases(
    c: &ExperimentConfig,
    draws: usize,
    seed: u64,
) -> Result<Vec<OptimizerCase>> {
    let pl = path_loss_db(c.distance_m)?;
    let grid: Vec<(f64, f64)> = [20.0, 100.0, 250.0]
        .iter()
        .flat_map(|&d| [1e-9, 1e-5].into_iter().map(move |e| (d, e)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(draws);
    for i in 0..draws {
        let (d, e) = grid[i % grid.len()];
        let fading: f64 = rand_distr::Distribution::sample(&rand_distr::Exp1, &mut rng);
        jobs.push((i, d, e, fading));
    }
    let cases = par::map_slice(c.exec_mode(), &jobs, |&(i, d, e, fading)| {
        let inst = Sp1Instance::new(
            channel_gain_from_fading(pl, fading),
            c.link(e),
            d * 8.0,
            c.l_max,
        )?;
        let oracle = solve_sp1_oracle(&inst);
        let ccp = solve_sp1_ccp(&inst);
        let monotone = ccp.objective_trace.windows(2).all(|w| w[1] <= w[0]);
        Ok::<_, anyhow::Error>(OptimizerCase {
            instance: i,
            payload_bytes: d,
            epsilon: e,
            fading,
            oracle_objective: oracle.objective,
            ccp_objective: ccp.objective,
            gap: if oracle.feasible {
                (ccp.objective - oracle.objective) / oracle.objective
            } else {
                0.0
            },
            iterations: ccp.iterations,
            ccp_feasible: !oracle.feasible || inst.satisfies_rate(ccp.power, ccp.blocklength),
            monotone,
        })
    });
    cases.into_iter().collect()
}

/// Relative SP2 stationarity residual over `n` random interior tuples, and
/// the largest deviation from `sqrt(V E / phi)` when `psi = 0`.
pub fn sp2_residuals(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, s_max) = (1.0f64, 10.0f64);
    let mut worst = 0.0f64;
    let mut closed = 0.0f64;
    let mut done = 0;
    while done < n {
        let phi = rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-3.0..2.0));
        let psi = 10f64.powf(rng.gen_range(-3.0..2.0));
        let energy = 10f64.powf(rng.gen_range(-12.0..-6.0));
        let g_max = psi * s_max.exp() + phi - v * energy / (s_max * s_max);
        if g_max <= 0.0 {
            continue;
        }
        let s = solve_sp2(phi, psi, v, energy, 0.0, s_max).expect("valid bounds");
        let rhs = v * energy / (s * s);
        // roots whose residual is below binary64 resolution are not scored
        if (psi * s.exp() * s + phi.abs()) * f64::EPSILON / rhs > 1e-8 {
            continue;
        }
        worst = worst.max(((psi * s.exp() + phi) - rhs).abs() / rhs);
        let phi0 = phi.abs();
        let s0 = solve_sp2(phi0, 0.0, v, energy, 0.0, s_max).expect("valid bounds");
        let exact = (v * energy / phi0).sqrt().min(s_max);
        closed = closed.max((s0 - exact).abs() / exact);
        done += 1;
    }
    (worst, closed)
}

/// Largest |xi_hat - xi| over GPD samples of size `n` with shapes -0.2, 0, 0.2.
pub fn gpd_recovery(n: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, xi) in [-0.2, 0.0, 0.2].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
        let y = sample_gpd(&mut rng, xi, 1.0, n);
        let stats = crate::evt_tail::ExceedanceMoments::from_samples(0.0, &y);
        let est = crate::evt_tail::shape_from_moments(&stats)?;
        worst = worst.max((est - xi).abs());
    }
    Ok(worst)
}

pub fn run_selftest(spec: &ExperimentSpec) -> Result<SelftestReport> {
    let c = &spec.config;
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, measured: String| {
        checks.push(SelfCheck {
            name: name.to_string(),
            passed,
            measured,
        })
    };

    let mut worst_rt = 0.0f64;
    for i in 0..=400 {
        let y = 10f64.powf(-300.0 + 300.0 * i as f64 / 400.0);
        // 2 - y rounds to 2 below y ~ 1e-16, outside the domain
        for y in [y, 2.0 - y].into_iter().filter(|&y| y < 2.0) {
            let back = erfc(erfc_inv(y)?);
            worst_rt = worst_rt.max((back - y).abs() / y);
        }
    }
    check(
        "erfc_inv round trip",
        worst_rt < 1e-10,
        format!("max rel err {worst_rt:.3e}"),
    );

    let mut worst_sh = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let snr = 10f64.powf(-2.0 + 0.5 * i as f64);
            let l = 10f64.powf(0.4 * j as f64);
            worst_sh = worst_sh.max((fb_rate(snr, l, 0.5)? - (1.0 + snr).log2()).abs());
        }
    }
    check(
        "shannon limit at epsilon 0.5",
        worst_sh < 1e-12,
        format!("max abs err {worst_sh:.3e}"),
    );

    let cases = optimizer_cases(c, c.selftest_draws.max(1), c.seed)?;
    let gap = cases.iter().fold(0.0f64, |m, k| m.max(k.gap));
    let feasible = cases.iter().all(|k| k.ccp_feasible);
    let monotone = cases.iter().all(|k| k.monotone);
    check(
        "ccp gap to oracle <= 5%",
        gap <= 0.05,
        format!("max gap {:.3}% over {}", 100.0 * gap, cases.len()),
    );
    check(
        "ccp rate constraint after rounding",
        feasible,
        format!("{} instances", cases.len()),
    );
    check(
        "ccp objective non-increasing",
        monotone,
        format!("{} traces", cases.len()),
    );

    let (res, closed) = sp2_residuals(1000, c.seed);
    check(
        "sp2 stationarity residual",
        res < 1e-6,
        format!("max rel residual {res:.3e}"),
    );
    check(
        "sp2 closed form at psi = 0",
        closed < 1e-9,
        format!("max rel err {closed:.3e}"),
    );

    let gpd = gpd_recovery(1_000_000, c.seed)?;
    check(
        "gpd shape recovery at 1e6 samples",
        gpd < 0.02,
        format!("max |xi err| {gpd:.4}"),
    );

    if let Some(dir) = &spec.out_dir {
        ensure_dir(dir)?;
        let rows: Vec<Vec<String>> = cases
            .iter()
            .map(|k| {
                vec![
                    k.instance.to_string(),
                    k.payload_bytes.to_string(),
                    k.epsilon.to_string(),
                    k.fading.to_string(),
                    k.oracle_objective.to_string(),
                    k.ccp_objective.to_string(),
                    k.gap.to_string(),
                    k.iterations.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("selftest_optimizer.csv"),
            &[
                "instance",
                "D_bytes",
                "epsilon",
                "fading",
                "oracle_PL",
                "ccp_PL",
                "gap",
                "iterations",
            ],
            &rows,
        )?;
        let check_rows: Vec<Vec<String>> = checks
            .iter()
            .map(|k| vec![k.name.clone(), k.passed.to_string(), k.measured.clone()])
            .collect();
        write_csv(
            &dir.join("selftest_checks.csv"),
            &["check", "passed", "measured"],
            &check_rows,
        )?;
        let cells = vec![CellMeta {
            index: 0,
            seed: c.seed,
            label: "selftest".to_string(),
        }];
        write_sidecar(
            dir,
            "selftest",
            &sidecar(
                spec,
                cells,
                vec![
                    "selftest_optimizer.csv".to_string(),
                    "selftest_checks.csv".to_string(),
                ],
            ),
        )?;
    }
    Ok(SelftestReport { checks })
}

/// Builds the [`ExperimentSpec`] of `kind` from an optional config file, overrides and the
/// dedicated flags.
pub fn build_spec(
    kind: ExperimentKind,
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    reps: Option<usize>,
    out_dir: Option<PathBuf>,
) -> Result<ExperimentSpec> {
    let mut cfg = match config {
        Some(p) => parse_config_file(p)?,
        None => ExperimentConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if cfg.reps == 0 {
        bail!("--reps must be at least 1");
    }
    Ok(ExperimentSpec {
        kind,
        config: cfg,
        out_dir,
    })
}
