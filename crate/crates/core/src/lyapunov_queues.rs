//! Virtual queues for the average-cost and tail-shape constraints, and the
//! per-transmission weights `phi` and `psi` of the drift-plus-penalty
//! problem.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Sign regime imposed on the tail shape of the maximal AoI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMode {
    /// Short tail (shape threshold below zero).
    Negative,
    /// Light tail, equality constraints with unclamped queues.
    Zero,
    /// Heavy tail (shape threshold above zero).
    Positive,
}

impl fmt::Display for TailMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TailMode::Negative => "negative",
            TailMode::Zero => "zero",
            TailMode::Positive => "positive",
        })
    }
}

impl FromStr for TailMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "neg" | "short" => Ok(TailMode::Negative),
            "zero" | "light" => Ok(TailMode::Zero),
            "positive" | "pos" | "heavy" => Ok(TailMode::Positive),
            other => Err(format!("unknown tail mode `{other}`")),
        }
    }
}

/// Q_f(n+1) = max{Q_f(n) + e^tau(t_n) - f_th, 0}.
pub fn update_cost_queue(q_cost: f64, age_at_tn: f64, f_threshold: f64) -> f64 {
    (q_cost + age_at_tn.exp() - f_threshold).max(0.0)
}

/// Updates (Q_m, Q_v) after a successful delivery with peak `peak`.
pub fn update_tail_queues(
    mode: TailMode,
    q_mean: f64,
    q_var: f64,
    peak: f64,
    threshold: f64,
    eta: f64,
    delta: f64,
) -> (f64, f64) {
    if !(peak > threshold) {
        return (q_mean, q_var);
    }
    let y = peak - threshold;
    let y2 = y * y;
    let two_eta2 = 2.0 * eta * eta;
    match mode {
        TailMode::Negative => (
            (q_mean - (y - eta - delta)).max(0.0),
            (q_var + (y2 - two_eta2 + delta)).max(0.0),
        ),
        TailMode::Zero => (q_mean + (y - eta), q_var + (y2 - two_eta2)),
        TailMode::Positive => (
            (q_mean + (y - eta + delta)).max(0.0),
            (q_var - (y2 - two_eta2 - delta)).max(0.0),
        ),
    }
}

/// Linear-in-S weight of the scheduled sensor; `age_prev` is tau(t_{n-1}).
pub fn phi(mode: TailMode, q_mean: f64, q_var: f64, age_prev: f64) -> f64 {
    let t = age_prev;
    let cubic = 2.0 * t * t * t;
    match mode {
        TailMode::Negative => 2.0 * q_var * t + cubic - q_mean * t - q_mean,
        TailMode::Zero => 2.0 * q_var * t + cubic + 2.0 * t + q_mean * t + q_mean,
        TailMode::Positive => -2.0 * q_var * t + cubic + 2.0 * t + q_mean * t + q_mean,
    }
}

/// Exponential-in-S weight: sum over the non-scheduled sensors of
/// Q_f e^tau(t_{n-1}).
pub fn psi(q_cost: &[f64], ages_prev: &[f64], scheduled: usize) -> f64 {
    q_cost
        .iter()
        .zip(ages_prev)
        .enumerate()
        .filter(|&(k, _)| k != scheduled)
        .map(|(_, (q, a))| q * a.exp())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub mode: TailMode,
    /// Tail threshold eta (seconds).
    pub eta: f64,
    pub delta: f64,
    pub f_threshold: f64,
}

/// The three per-sensor virtual queues plus their thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueSet {
    pub params: QueueParams,
    pub q_cost: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_var: Vec<f64>,
    /// Peaks-over-threshold level q per sensor; +inf disables the tail queues.
    pub pot_threshold: Vec<f64>,
}

/// Queue values of one sensor at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub q_cost: f64,
    pub q_mean: f64,
    pub q_var: f64,
}

impl VirtualQueueSet {
    pub fn new(sensors: usize, params: QueueParams) -> Self {
        Self {
            params,
            q_cost: vec![0.0; sensors],
            q_mean: vec![0.0; sensors],
            q_var: vec![0.0; sensors],
            pot_threshold: vec![f64::INFINITY; sensors],
        }
    }

    pub fn sensors(&self) -> usize {
        self.q_cost.len()
    }

    pub fn set_pot_thresholds(&mut self, thresholds: Vec<f64>) {
        assert_eq!(thresholds.len(), self.sensors());
        self.pot_threshold = thresholds;
    }

    pub fn phi_for(&self, k: usize, age_prev: f64) -> f64 {
        phi(self.params.mode, self.q_mean[k], self.q_var[k], age_prev)
    }

    pub fn psi_for(&self, k: usize, ages_prev: &[f64]) -> f64 {
        psi(&self.q_cost, ages_prev, k)
    }

    /// Tail-queue update of sensor `k` after its delivery with peak `peak`.
    pub fn on_success(&mut self, k: usize, peak: f64) {
        let p = self.params;
        let (qm, qv) = update_tail_queues(
            p.mode,
            self.q_mean[k],
            self.q_var[k],
            peak,
            self.pot_threshold[k],
            p.eta,
            p.delta,
        );
        self.q_mean[k] = qm;
        self.q_var[k] = qv;
    }

    /// Cost-queue update of every sensor with the ages at t_n.
    pub fn on_transmission(&mut self, ages_at_tn: &[f64]) {
        let f_th = self.params.f_threshold;
        for (q, &a) in self.q_cost.iter_mut().zip(ages_at_tn) {
            *q = update_cost_queue(*q, a, f_th);
        }
    }

    pub fn snapshot(&self, k: usize) -> QueueSnapshot {
        QueueSnapshot {
            q_cost: self.q_cost[k],
            q_mean: self.q_mean[k],
            q_var: self.q_var[k],
        }
    }

    pub fn snapshots(&self) -> Vec<QueueSnapshot> {
        (0..self.sensors()).map(|k| self.snapshot(k)).collect()
    }

    /// Largest absolute queue value across sensors and queue kinds.
    pub fn max_abs(&self) -> f64 {
        self.q_cost
            .iter()
            .chain(&self.q_mean)
            .chain(&self.q_var)
            .fold(0.0, |m, q| m.max(q.abs()))
    }
}

/// Writes `n,sensor,Qf,Qm,Qv` rows; `rows` yields (n, per-sensor snapshots).
pub fn write_queue_csv<'a, W, I>(out: W, rows: I) -> csv::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (u64, &'a [QueueSnapshot])>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "sensor", "Qf", "Qm", "Qv"])?;
    for (n, snaps) in rows {
        for (k, s) in snaps.iter().enumerate() {
            w.write_record(&[
                n.to_string(),
                (k + 1).to_string(),
                s.q_cost.to_string(),
                s.q_mean.to_string(),
                s.q_var.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
