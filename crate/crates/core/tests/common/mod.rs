//! Offline replay of a run from its seed and configuration.
//!
//! The bookkeeping (scheduling, fading and decoding draws, ages, peaks,
//! virtual queues, tail thresholds) is re-derived here from first
//! principles; only the two per-transmission optimizers are shared with the
//! library.

#![allow(dead_code)]

use aoi_tail::lyapunov_queues::TailMode;
use aoi_tail::sim_engine::{SimConfig, TransmissionRecord};
use aoi_tail::transmission_optimizer::{
    solve_sp1_ccp, solve_sp1_oracle, solve_sp2, SolveMethod, Sp1Instance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    pub n: u64,
    pub t_n: f64,
    pub sensor: usize,
    pub gain: f64,
    pub power: f64,
    pub blocklength: u32,
    pub interval: f64,
    pub decoded: bool,
    pub ages: Vec<f64>,
    pub peak: Option<f64>,
    pub q_cost: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub thresholds: Vec<f64>,
    /// Measured-phase steps only.
    pub steps: Vec<ReplayStep>,
    pub peaks: Vec<Vec<f64>>,
}

fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Round-robin replay of `cfg` (warm-up included).
pub fn replay(cfg: &SimConfig) -> Replay {
    let k_count = cfg.sensors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pl_db = 33.0 * cfg.link.distance.log10() + 20.0 * 2.625f64.log10() + 32.0;
    let (eta, delta, f_th) = (cfg.eta, cfg.delta, cfg.f_threshold);

    let mut ages = vec![0.0f64; k_count];
    let mut qf = vec![0.0f64; k_count];
    let mut qm = vec![0.0f64; k_count];
    let mut qv = vec![0.0f64; k_count];
    let mut q = vec![f64::INFINITY; k_count];
    let mut peaks: Vec<Vec<f64>> = vec![Vec::new(); k_count];
    let mut t = 0.0f64;
    let mut steps = Vec::new();

    let total = cfg.warmup + cfg.lifetime;
    for n in 1..=total {
        if n == cfg.warmup + 1 {
            for j in 0..k_count {
                q[j] = quantile(&peaks[j], cfg.pot_quantile);
                peaks[j].clear();
            }
        }
        let k = ((n - 1) % k_count as u64) as usize;
        let fading: f64 = Exp1.sample(&mut rng);
        let gain = 10f64.powf(-pl_db / 10.0) * fading;

        let tau = ages[k];
        let phi = match cfg.tail_mode {
            TailMode::Negative => 2.0 * qv[k] * tau + 2.0 * tau * tau * tau - qm[k] * tau - qm[k],
            TailMode::Zero => {
                2.0 * qv[k] * tau + 2.0 * tau * tau * tau + 2.0 * tau + qm[k] * tau + qm[k]
            }
            TailMode::Positive => {
                -2.0 * qv[k] * tau + 2.0 * tau * tau * tau + 2.0 * tau + qm[k] * tau + qm[k]
            }
        };
        let psi: f64 = (0..k_count)
            .filter(|&j| j != k)
            .map(|j| qf[j] * ages[j].exp())
            .sum();

        let inst = Sp1Instance::new(gain, cfg.link, cfg.payloads[k], cfg.l_max).unwrap();
        let sp1 = match cfg.sp1_method {
            SolveMethod::Ccp => solve_sp1_ccp(&inst),
            SolveMethod::Oracle => solve_sp1_oracle(&inst),
        };
        let energy = sp1.power * sp1.blocklength as f64 / cfg.link.bandwidth;
        let s =
            solve_sp2(phi, psi, cfg.lyapunov_v, energy, cfg.s_min, cfg.s_max).unwrap_or(cfg.s_max);
        t += s;
        let u: f64 = rng.gen();
        let decoded = u >= cfg.link.epsilon && sp1.feasible;

        let mut peak = None;
        for j in 0..k_count {
            ages[j] += s;
        }
        if decoded {
            let b = ages[k];
            ages[k] = 0.0;
            peaks[k].push(b);
            peak = Some(b);
            if b > q[k] {
                let y = b - q[k];
                let (m, v) = match cfg.tail_mode {
                    TailMode::Negative => (
                        (qm[k] - (y - eta - delta)).max(0.0),
                        (qv[k] + (y * y - 2.0 * eta * eta + delta)).max(0.0),
                    ),
                    TailMode::Zero => (qm[k] + (y - eta), qv[k] + (y * y - 2.0 * eta * eta)),
                    TailMode::Positive => (
                        (qm[k] + (y - eta + delta)).max(0.0),
                        (qv[k] - (y * y - 2.0 * eta * eta - delta)).max(0.0),
                    ),
                };
                qm[k] = m;
                qv[k] = v;
            }
        }
        for j in 0..k_count {
            qf[j] = (qf[j] + ages[j].exp() - f_th).max(0.0);
        }
        if n > cfg.warmup {
            steps.push(ReplayStep {
                n,
                t_n: t,
                sensor: k,
                gain,
                power: sp1.power,
                blocklength: sp1.blocklength,
                interval: s,
                decoded,
                ages: ages.clone(),
                peak,
                q_cost: qf.clone(),
                q_mean: qm.clone(),
                q_var: qv.clone(),
            });
        }
    }
    Replay {
        thresholds: q,
        steps,
        peaks,
    }
}

/// Q^{-1}(eps) by bisection on the complementary error function.
pub fn q_inv(eps: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * libm::erfc(mid / std::f64::consts::SQRT_2) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bits carried by `l` channel uses at SNR `snr`, normal approximation.
pub fn bits(snr: f64, l: f64, eps: f64) -> f64 {
    let v = snr * (snr + 2.0) / ((1.0 + snr) * (1.0 + snr));
    l * (1.0 + snr).log2() - (l * v).sqrt() * q_inv(eps) * std::f64::consts::LOG2_E
}

/// First index where the logged run and the replay disagree, with a reason.
pub fn first_mismatch(log: &[TransmissionRecord], replay: &Replay) -> Option<(usize, String)> {
    if log.len() != replay.steps.len() {
        return Some((
            0,
            format!("{} records vs {} replayed", log.len(), replay.steps.len()),
        ));
    }
    for (i, (r, s)) in log.iter().zip(&replay.steps).enumerate() {
        let same = r.n == s.n
            && r.t_n == s.t_n
            && r.sensor == s.sensor
            && r.gain == s.gain
            && r.power == s.power
            && r.blocklength == s.blocklength
            && r.interval == s.interval
            && r.decoded == s.decoded
            && r.ages == s.ages
            && r.peak == s.peak
            && r.queues
                .iter()
                .map(|x| x.q_cost)
                .eq(s.q_cost.iter().copied())
            && r.queues
                .iter()
                .map(|x| x.q_mean)
                .eq(s.q_mean.iter().copied())
            && r.queues.iter().map(|x| x.q_var).eq(s.q_var.iter().copied());
        if !same {
            return Some((i, format!("logged {r:?}\nreplayed {s:?}")));
        }
    }
    None
}
