//! Per-transmission control: power and blocklength (SP1) and the update
//! interval (SP2).
//!
//! SP1 minimizes transmit energy `P * L` under the finite-blocklength rate
//! requirement. [`solve_sp1_ccp`] is the convex-concave procedure used by the
//! controller; [`solve_sp1_oracle`] is an exhaustive scan over integer
//! blocklengths that serves as ground truth.

mod ccp;

pub use ccp::{
    initial_feasible_point, solve_cpj, solve_cpj_reduced, solve_cpj_with, solve_sp1_ccp,
    solve_sp1_ccp_with, AuxPoint, CpjOptions, CpjProblem, CpjSolution, ScaledPoint,
    CPJ_CONSTRAINTS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::phy_channel::{LinkParams, PhyError, RateModel};

/// Default blocklength search cap in channel uses.
pub const DEFAULT_L_MAX: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("payload cannot be delivered within {l_max} channel uses at full power")]
    Infeasible { l_max: u32 },
    #[error("transmit energy must be positive, got {0}")]
    Energy(f64),
    #[error("invalid interval bounds [{s_min}, {s_max}]")]
    IntervalBounds { s_min: f64, s_max: f64 },
}

/// One SP1 instance: a channel gain, link constants and a payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sp1Instance {
    pub gain: f64,
    pub link: LinkParams,
    /// Payload D in bits.
    pub payload_bits: f64,
    pub l_max: u32,
}

impl Sp1Instance {
    pub fn new(
        gain: f64,
        link: LinkParams,
        payload_bits: f64,
        l_max: u32,
    ) -> Result<Self, OptError> {
        let inst = Self {
            gain,
            link,
            payload_bits,
            l_max,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), OptError> {
        self.link.validate()?;
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(OptError::Instance(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if !(self.payload_bits.is_finite() && self.payload_bits > 0.0) {
            return Err(OptError::Instance(format!(
                "payload must be positive, got {}",
                self.payload_bits
            )));
        }
        if self.l_max == 0 {
            return Err(OptError::Instance("l_max must be at least 1".into()));
        }
        Ok(())
    }

    /// SNR reached at full power.
    pub fn snr_max(&self) -> f64 {
        self.link.snr(self.link.p_max, self.gain)
    }

    /// Converts an SNR to the transmit power that produces it.
    pub fn power_for_snr(&self, snr: f64) -> f64 {
        snr * self.link.noise_power() / self.gain
    }

    pub fn snr_for_power(&self, power: f64) -> f64 {
        self.link.snr(power, self.gain)
    }

    pub fn rate_model(&self) -> Result<RateModel, OptError> {
        Ok(RateModel::new(self.link.epsilon)?)
    }

    /// True rate constraint `L * R(P, L) >= D`.
    pub fn satisfies_rate(&self, power: f64, blocklength: u32) -> bool {
        match self.rate_model() {
            Ok(m) if power > 0.0 => {
                m.payload_capacity(self.snr_for_power(power), blocklength as f64)
                    >= self.payload_bits
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Ccp,
    Oracle,
}

/// How the convex sub-solver finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveQuality {
    Converged,
    IterationLimit,
    /// Line search stalled; the best strictly feasible iterate was kept.
    Stalled,
    /// No strictly feasible start could be found; the reference point was kept.
    NoInterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sp1Solution {
    /// Transmit power in W.
    pub power: f64,
    /// Integer blocklength in channel uses.
    pub blocklength: u32,
    /// `power * blocklength` in W * channel uses.
    pub objective: f64,
    pub method: SolveMethod,
    pub feasible: bool,
    /// Outer iterations (CCP) or scanned lengths (oracle).
    pub iterations: usize,
    /// `g + rho` after initialization and after every accepted CCP step.
    pub objective_trace: Vec<f64>,
    pub quality: SolveQuality,
}

impl Sp1Solution {
    fn infeasible(inst: &Sp1Instance, method: SolveMethod, iterations: usize) -> Self {
        // transmit anyway at full power with the longest codeword
        Self {
            power: inst.link.p_max,
            blocklength: inst.l_max,
            objective: inst.link.p_max * inst.l_max as f64,
            method,
            feasible: false,
            iterations,
            objective_trace: Vec::new(),
            quality: SolveQuality::Converged,
        }
    }

    /// Energy of the transmission in J for bandwidth `bandwidth`.
    pub fn energy(&self, bandwidth: f64) -> f64 {
        self.objective / bandwidth
    }
}

const MONOTONE_PROBES: usize = 32;
const GRID_FALLBACK: usize = 10_000;
const POWER_RTOL: f64 = 1e-9;

/// Smallest power in (0, P_max] meeting the rate requirement with `blocklength`
/// channel uses, or `None` if full power is not enough.
pub fn feasible_power_for_length(inst: &Sp1Instance, blocklength: u32) -> Option<f64> {
    let model = inst.rate_model().ok()?;
    feasible_snr(
        &model,
        inst.payload_bits,
        blocklength as f64,
        inst.snr_max(),
    )
    .map(|snr| inst.power_for_snr(snr))
}

/// SNR-domain version of [`feasible_power_for_length`].
pub(crate) fn feasible_snr(
    model: &RateModel,
    payload: f64,
    blocklength: f64,
    snr_max: f64,
) -> Option<f64> {
    let excess = |snr: f64| model.payload_capacity(snr, blocklength) - payload;
    if !(blocklength >= 1.0) || excess(snr_max) < 0.0 {
        return None;
    }
    let root = bisect_snr(&excess, 0.0, snr_max);
    // the rate must increase on [root, snr_max] and no smaller grid point may
    // already be feasible; otherwise fall back to a dense scan
    if rate_increasing_on(model, blocklength, root, snr_max) && !feasible_below(&excess, root) {
        Some(root)
    } else {
        Some(grid_scan_snr(&excess, snr_max))
    }
}

// f(lo) < 0 <= f(hi); returns the feasible end once the bracket is within POWER_RTOL
fn bisect_snr(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= POWER_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn rate_increasing_on(model: &RateModel, blocklength: f64, lo: f64, hi: f64) -> bool {
    if hi <= lo {
        return true;
    }
    let ratio = (hi / lo).powf(1.0 / MONOTONE_PROBES as f64);
    let mut prev = model.rate(lo, blocklength);
    let mut snr = lo;
    for _ in 0..MONOTONE_PROBES {
        snr *= ratio;
        let r = model.rate(snr.min(hi), blocklength);
        if r < prev {
            return false;
        }
        prev = r;
    }
    true
}

fn feasible_below(f: &impl Fn(f64) -> f64, root: f64) -> bool {
    (1..MONOTONE_PROBES).any(|i| f(root * i as f64 / MONOTONE_PROBES as f64) >= 0.0)
}

fn grid_scan_snr(f: &impl Fn(f64) -> f64, snr_max: f64) -> f64 {
    let step = snr_max / GRID_FALLBACK as f64;
    let first = (1..=GRID_FALLBACK)
        .find(|&i| f(step * i as f64) >= 0.0)
        .unwrap_or(GRID_FALLBACK);
    bisect_snr(f, step * (first - 1) as f64, step * first as f64)
}

/// Exhaustive SP1 solution over the integer blocklengths `1..=l_max`.
pub fn solve_sp1_oracle(inst: &Sp1Instance) -> Sp1Solution {
    let Ok(model) = inst.rate_model() else {
        return Sp1Solution::infeasible(inst, SolveMethod::Oracle, 0);
    };
    let snr_max = inst.snr_max();
    let candidates: Vec<Option<(u32, f64)>> = par::map_range(1..inst.l_max + 1, |l| {
        feasible_snr(&model, inst.payload_bits, l as f64, snr_max).map(|snr| (l, snr * l as f64))
    });
    // ties go to the smaller length
    let best =
        candidates
            .into_iter()
            .flatten()
            .fold(None::<(u32, f64)>, |best, (l, e)| match best {
                Some((_, be)) if be <= e => best,
                _ => Some((l, e)),
            });
    match best {
        Some((l, _)) => {
            let power = feasible_power_for_length(inst, l).expect("scanned length is feasible");
            Sp1Solution {
                power,
                blocklength: l,
                objective: power * l as f64,
                method: SolveMethod::Oracle,
                feasible: true,
                iterations: inst.l_max as usize,
                objective_trace: Vec::new(),
                quality: SolveQuality::Converged,
            }
        }
        None => Sp1Solution::infeasible(inst, SolveMethod::Oracle, inst.l_max as usize),
    }
}

/// Optimal update interval: the root of
/// `psi e^S + phi = V * energy / S^2`, clamped to `[s_min, s_max]`.
///
/// The left side is non-decreasing and the right side strictly decreasing in
/// `S`, so the root is unique when it exists.
pub fn solve_sp2(
    phi: f64,
    psi: f64,
    v: f64,
    energy: f64,
    s_min: f64,
    s_max: f64,
) -> Result<f64, OptError> {
    if !(energy.is_finite() && energy > 0.0) {
        return Err(OptError::Energy(energy));
    }
    if !(s_min >= 0.0 && s_max > s_min && s_max.is_finite()) {
        return Err(OptError::IntervalBounds { s_min, s_max });
    }
    let c = v * energy;
    let g = |s: f64| psi * s.exp() + phi - c / (s * s);
    if g(s_max) < 0.0 {
        return Ok(s_max);
    }
    let mut hi = s_max;
    let mut lo = s_max;
    while g(lo) >= 0.0 {
        hi = lo;
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Ok(s_min.max(lo));
        }
    }
    // geometric bisection down to a few ulps
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let root = if g(hi).abs() <= g(lo).abs() { hi } else { lo };
    Ok(root.clamp(s_min, s_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy_channel::path_loss_db;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn factory_instance(fading: f64, bytes: f64, eps: f64) -> Sp1Instance {
        let link = LinkParams::factory_default(eps);
        let gain = 10f64.powf(-path_loss_db(15.0).unwrap() / 10.0) * fading;
        Sp1Instance::new(gain, link, bytes * 8.0, DEFAULT_L_MAX).unwrap()
    }

    #[test]
    fn shannon_boundary_power_is_pmax() {
        let mut inst = factory_instance(1.0, 20.0, 0.5);
        let l = 40;
        inst.payload_bits = l as f64 * inst.snr_max().log2().max((1.0 + inst.snr_max()).log2());
        let p = feasible_power_for_length(&inst, l).unwrap();
        assert_relative_eq!(p, inst.link.p_max, max_relative = 1e-8);
    }

    #[test]
    fn too_large_payload_is_infeasible() {
        let mut inst = factory_instance(1.0, 20.0, 1e-5);
        inst.payload_bits = inst.l_max as f64 * (1.0 + inst.snr_max()).log2() + 1.0;
        assert!(feasible_power_for_length(&inst, inst.l_max).is_none());
        let sol = solve_sp1_oracle(&inst);
        assert!(!sol.feasible);
        assert_eq!(sol.power, inst.link.p_max);
        assert!(!solve_sp1_ccp(&inst).feasible);
    }

    #[test]
    fn min_power_meets_constraint_with_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = RateModel::new(1e-9).unwrap();
        for _ in 0..200 {
            let inst = factory_instance(rng.gen_range(0.05..3.0), rng.gen_range(20.0..250.0), 1e-9);
            let l = rng.gen_range(1..=inst.l_max);
            if let Some(p) = feasible_power_for_length(&inst, l) {
                let bits = model.payload_capacity(inst.snr_for_power(p), l as f64);
                assert!(bits >= inst.payload_bits);
                assert!(
                    (bits - inst.payload_bits) / inst.payload_bits < 1e-6,
                    "{bits}"
                );
                assert!(p <= inst.link.p_max);
            }
        }
    }

    #[test]
    fn oracle_beats_verification_grid() {
        let inst = factory_instance(0.7, 100.0, 1e-5);
        let sol = solve_sp1_oracle(&inst);
        assert!(sol.feasible);
        assert!(inst.satisfies_rate(sol.power, sol.blocklength));
        let model = inst.rate_model().unwrap();
        for i in 1..=200 {
            let l = (i * inst.l_max as usize / 200).max(1) as u32;
            for j in 1..=200 {
                let p = inst.link.p_max * j as f64 / 200.0;
                if model.payload_capacity(inst.snr_for_power(p), l as f64) >= inst.payload_bits {
                    assert!(sol.objective <= p * l as f64 * (1.0 + 1e-6));
                }
            }
        }
    }

    #[test]
    fn oracle_matches_shannon_minimization() {
        // with epsilon = 1/2 the energy D (2^(D/L) - 1) / L falls with L
        let inst = factory_instance(1.0, 20.0, 0.5);
        let sol = solve_sp1_oracle(&inst);
        let direct = (1..=inst.l_max)
            .map(|l| {
                let snr = 2f64.powf(inst.payload_bits / l as f64) - 1.0;
                (l, inst.power_for_snr(snr) * l as f64)
            })
            .filter(|(_, e)| e / (inst.l_max as f64) <= inst.link.p_max * 1.0000001)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(sol.blocklength, direct.0);
        assert_relative_eq!(sol.objective, direct.1, max_relative = 1e-8);
    }

    #[test]
    fn sp2_closed_form_without_psi() {
        let (phi, v, energy) = (0.37, 1.3, 2.5e-3);
        let s = solve_sp2(phi, 0.0, v, energy, 0.0, 10.0).unwrap();
        assert_relative_eq!(s, (v * energy / phi).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn sp2_residual_and_clamps() {
        let (phi, psi, v, e) = (-0.2, 0.5, 1.0, 0.01);
        let s = solve_sp2(phi, psi, v, e, 0.0, 10.0).unwrap();
        let rhs = v * e / (s * s);
        assert!(((psi * s.exp() + phi - rhs) / rhs).abs() < 1e-6);
        // large phi drives the root below s_min
        assert_eq!(solve_sp2(1e12, 0.0, 1.0, 1e-3, 0.01, 10.0).unwrap(), 0.01);
        // no root below the cap
        assert_eq!(solve_sp2(-1.0, 0.0, 1.0, 1e-3, 0.0, 10.0).unwrap(), 10.0);
        assert!(solve_sp2(1.0, 0.0, 1.0, 0.0, 0.0, 10.0).is_err());
        assert!(solve_sp2(1.0, 0.0, 1.0, 1.0, 1.0, 0.5).is_err());
    }
}
