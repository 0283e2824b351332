//! Convex-concave procedure for SP1.
//!
//! The relaxed problem replaces the rate constraint by exponential auxiliary
//! variables `(varsigma, eta, a, b, g, rho)`. Each concave side is linearized
//! at the current reference point, giving the convex problem CP-j, which is
//! solved with a log-barrier Newton method.
//!
//! CP-j is posed in normalized coordinates: SNR replaces power, and the
//! auxiliaries carry the log noise power (or log power-to-SNR factor) as an
//! offset. Constraints are divided by positive constants so all are of order
//! one. None of this changes the feasible set or the minimizer.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use super::{
    feasible_power_for_length, OptError, SolveMethod, SolveQuality, Sp1Instance, Sp1Solution,
};

pub const CPJ_CONSTRAINTS: usize = 11;
const NV: usize = 9;
const SLACK: usize = 8;
const PHASE1_FLOOR: f64 = -1.0;
const CCP_MAX_ITERS: usize = 50;
const CCP_TOL: f64 = 1e-6;
const ROUNDOFF_DECREMENT: f64 = 1e-6;

type Vec9 = SVector<f64, NV>;
type Mat9 = SMatrix<f64, NV, NV>;

/// Auxiliary variables in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxPoint {
    pub varsigma: f64,
    pub eta_aux: f64,
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub rho: f64,
}

/// A point of CP-j in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoint {
    pub snr: f64,
    pub blocklength: f64,
    pub varsigma: f64,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub rho: f64,
}

impl ScaledPoint {
    /// Auxiliaries placed exactly on their defining curves.
    pub fn tight(snr: f64, blocklength: f64) -> Self {
        Self {
            snr,
            blocklength,
            varsigma: blocklength.ln(),
            eta: snr.ln_1p(),
            a: snr.ln(),
            b: (2.0 + snr).ln(),
            g: snr.ln(),
            rho: blocklength.ln(),
        }
    }

    pub fn from_physical(inst: &Sp1Instance, power: f64, blocklength: f64, aux: &AuxPoint) -> Self {
        let (ln_noise, ln_pscale) = offsets(inst);
        Self {
            snr: inst.snr_for_power(power),
            blocklength,
            varsigma: aux.varsigma,
            eta: aux.eta_aux - ln_noise,
            a: aux.a - ln_noise,
            b: aux.b - ln_noise,
            g: aux.g - ln_pscale,
            rho: aux.rho,
        }
    }

    pub fn power(&self, inst: &Sp1Instance) -> f64 {
        inst.power_for_snr(self.snr)
    }

    pub fn aux(&self, inst: &Sp1Instance) -> AuxPoint {
        let (ln_noise, ln_pscale) = offsets(inst);
        AuxPoint {
            varsigma: self.varsigma,
            eta_aux: self.eta + ln_noise,
            a: self.a + ln_noise,
            b: self.b + ln_noise,
            g: self.g + ln_pscale,
            rho: self.rho,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.snr,
            self.blocklength,
            self.varsigma,
            self.eta,
            self.a,
            self.b,
            self.g,
            self.rho,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self {
            snr: v[0],
            blocklength: v[1],
            varsigma: v[2],
            eta: v[3],
            a: v[4],
            b: v[5],
            g: v[6],
            rho: v[7],
        }
    }

    fn to_vec9(self, slack: f64) -> Vec9 {
        let a = self.to_array();
        Vec9::from_fn(|i, _| if i < 8 { a[i] } else { slack })
    }

    fn from_vec9(x: &Vec9) -> Self {
        Self::from_array(std::array::from_fn(|i| x[i]))
    }
}

fn offsets(inst: &Sp1Instance) -> (f64, f64) {
    let ln_noise = inst.link.noise_power().ln();
    (ln_noise, ln_noise - inst.gain.ln())
}

/// CP-j linearized at a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct CpjProblem {
    reference: ScaledPoint,
    payload: f64,
    kappa: f64,
    snr_max: f64,
    l_max: f64,
    ln_pscale: f64,
    inv_ea: f64,
    inv_eb: f64,
    inv_eg: f64,
    inv_er: f64,
}

impl CpjProblem {
    pub fn new(inst: &Sp1Instance, reference: ScaledPoint) -> Result<Self, OptError> {
        inst.validate()?;
        let model = inst.rate_model()?;
        if reference.to_array().iter().any(|v| !v.is_finite()) {
            return Err(OptError::Instance("reference point is not finite".into()));
        }
        Ok(Self {
            reference,
            payload: inst.payload_bits,
            kappa: std::f64::consts::SQRT_2 * model.dispersion_coef() / LN_2,
            snr_max: inst.snr_max(),
            l_max: inst.l_max as f64,
            ln_pscale: offsets(inst).1,
            inv_ea: (-reference.a).exp(),
            inv_eb: (-reference.b).exp(),
            inv_eg: (-reference.g).exp(),
            inv_er: (-reference.rho).exp(),
        })
    }

    pub fn reference(&self) -> &ScaledPoint {
        &self.reference
    }

    /// Physical objective `g + rho`.
    pub fn objective(&self, x: &ScaledPoint) -> f64 {
        x.g + x.rho + self.ln_pscale
    }

    /// Normalized constraint values; all must be `<= 0`. Points outside the
    /// domain (`L <= 0` or `snr <= -1`) map to `+inf`.
    pub fn constraint_values(&self, x: &ScaledPoint) -> [f64; CPJ_CONSTRAINTS] {
        let mut out = [f64::INFINITY; CPJ_CONSTRAINTS];
        if let Some(terms) = self.terms(&x.to_vec9(0.0), false) {
            for (o, t) in out.iter_mut().zip(terms.iter()) {
                *o = t.value;
            }
        }
        out
    }

    pub fn is_strictly_feasible(&self, x: &ScaledPoint) -> bool {
        self.constraint_values(x).iter().all(|&v| v < 0.0)
    }

    fn terms(&self, x: &Vec9, hessians: bool) -> Option<[Term; CPJ_CONSTRAINTS]> {
        let (snr, l, vs, eta, a, b, g, rho) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
        if !(l > 0.0 && snr > -1.0) {
            return None;
        }
        let r = &self.reference;
        let mut t: [Term; CPJ_CONSTRAINTS] = std::array::from_fn(|_| Term::default());

        t[0].set(
            snr * self.inv_ea - (a - r.a + 1.0),
            &[(0, self.inv_ea), (4, -1.0)],
        );
        t[1].set(
            (2.0 + snr) * self.inv_eb - (b - r.b + 1.0),
            &[(0, self.inv_eb), (5, -1.0)],
        );
        t[2].set(
            snr * self.inv_eg - (g - r.g + 1.0),
            &[(0, self.inv_eg), (6, -1.0)],
        );
        t[3].set(
            l * self.inv_er - (rho - r.rho + 1.0),
            &[(1, self.inv_er), (7, -1.0)],
        );

        let q = vs.exp() / l;
        t[4].set(q - 1.0, &[(2, q), (1, -q / l)]);
        if hessians {
            t[4].hess_pair(2, 1, q, -q / l, 2.0 * q / (l * l));
        }

        let one_snr = 1.0 + snr;
        let q = eta.exp() / one_snr;
        t[5].set(q - 1.0, &[(3, q), (0, -q / one_snr)]);
        if hessians {
            t[5].hess_pair(3, 0, q, -q / one_snr, 2.0 * q / (one_snr * one_snr));
        }

        let disp = self.kappa * (0.5 * (a + b) - eta - 0.5 * vs).exp();
        let w = [(2usize, -0.5), (3, -1.0), (4, 0.5), (5, 0.5)];
        t[6].set(
            self.payload / l - snr.ln_1p() / LN_2 + disp,
            &[
                (1, -self.payload / (l * l)),
                (0, -1.0 / (one_snr * LN_2)),
                (2, -0.5 * disp),
                (3, -disp),
                (4, 0.5 * disp),
                (5, 0.5 * disp),
            ],
        );
        if hessians {
            let h = t[6].hess.get_or_insert_with(Mat9::zeros);
            h[(1, 1)] += 2.0 * self.payload / (l * l * l);
            h[(0, 0)] += 1.0 / (one_snr * one_snr * LN_2);
            for &(i, wi) in &w {
                for &(j, wj) in &w {
                    h[(i, j)] += disp * wi * wj;
                }
            }
        }

        t[7].set(1.0 - l, &[(1, -1.0)]);
        t[8].set(-snr, &[(0, -1.0)]);
        t[9].set(snr / self.snr_max - 1.0, &[(0, 1.0 / self.snr_max)]);
        t[10].set(l / self.l_max - 1.0, &[(1, 1.0 / self.l_max)]);
        Some(t)
    }

    /// Log-barrier value, gradient and Hessian at `x`; `None` if `x` is not
    /// strictly feasible. Phase I shifts each constraint by the slack `x[8]`.
    fn barrier(&self, x: &Vec9, t: f64, phase1: bool, derivs: bool) -> Option<(f64, Vec9, Mat9)> {
        let terms = self.terms(x, derivs)?;
        let mut value = 0.0;
        let mut grad = Vec9::zeros();
        let mut hess = Mat9::zeros();
        let s = if phase1 { x[SLACK] } else { 0.0 };
        let mut add = |f: f64, gi: &Vec9, hi: Option<&Mat9>| -> Option<()> {
            if !(f < 0.0) {
                return None;
            }
            let inv = -1.0 / f;
            value -= (-f).ln();
            if derivs {
                grad += gi * inv;
                hess += gi * gi.transpose() * (inv * inv);
                if let Some(h) = hi {
                    hess += h * inv;
                }
            }
            Some(())
        };
        for term in &terms {
            let mut gi = term.grad;
            if phase1 {
                gi[SLACK] = -1.0;
            }
            add(term.value - s, &gi, term.hess.as_ref())?;
        }
        if phase1 {
            let mut gi = Vec9::zeros();
            gi[SLACK] = -1.0;
            add(PHASE1_FLOOR - s, &gi, None)?;
            // g and rho are only bounded below; box them so phase I stays bounded
            for (i, anchor) in [(6, self.reference.g), (7, self.reference.rho)] {
                let mut gi = Vec9::zeros();
                gi[i] = 1.0;
                add(x[i] - anchor - 1.0, &gi, None)?;
            }
            value += t * s;
            grad[SLACK] += t;
        } else {
            value += t * (x[6] + x[7]);
            grad[6] += t;
            grad[7] += t;
        }
        Some((value, grad, hess))
    }

    fn lagrangian_residual(
        &self,
        terms: &[Term; CPJ_CONSTRAINTS],
        duals: &[f64; CPJ_CONSTRAINTS],
        active: &[bool; NV],
    ) -> f64 {
        let mut lagrangian = Vec9::zeros();
        lagrangian[6] = 1.0;
        lagrangian[7] = 1.0;
        for (term, &lam) in terms.iter().zip(duals.iter()) {
            lagrangian += term.grad * lam;
        }
        (0..8)
            .filter(|&i| active[i])
            .map(|i| lagrangian[i].abs())
            .fold(0.0, f64::max)
    }

    fn max_violation(&self, x: &Vec9) -> f64 {
        match self.terms(x, false) {
            Some(t) => t.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max),
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Term {
    value: f64,
    grad: Vec9,
    hess: Option<Mat9>,
}

impl Term {
    fn set(&mut self, value: f64, grad: &[(usize, f64)]) {
        self.value = value;
        for &(i, g) in grad {
            self.grad[i] += g;
        }
    }

    fn hess_pair(&mut self, i: usize, j: usize, hii: f64, hij: f64, hjj: f64) {
        let h = self.hess.get_or_insert_with(Mat9::zeros);
        h[(i, i)] += hii;
        h[(i, j)] += hij;
        h[(j, i)] += hij;
        h[(j, j)] += hjj;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpjOptions {
    pub t0: f64,
    pub mu: f64,
    /// Stop once `1 / t` falls below this.
    pub barrier_tol: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Coordinates (in [`ScaledPoint::to_array`] order) held at their start value.
    pub pinned: [bool; 8],
}

impl Default for CpjOptions {
    fn default() -> Self {
        Self {
            t0: 100.0,
            mu: 50.0,
            barrier_tol: 1e-8,
            newton_tol: 1e-10,
            max_newton: 2000,
            pinned: [false; 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpjSolution {
    pub point: ScaledPoint,
    /// Physical objective `g + rho`.
    pub objective: f64,
    /// Dual estimates `1 / (t * -f_i)` for the normalized constraints.
    pub duals: [f64; CPJ_CONSTRAINTS],
    /// Infinity norm of the Lagrangian gradient over the free coordinates.
    pub kkt_residual: f64,
    pub barrier_parameter: f64,
    pub newton_steps: usize,
    pub quality: SolveQuality,
}

pub fn solve_cpj(problem: &CpjProblem, start: &ScaledPoint) -> CpjSolution {
    solve_cpj_with(problem, start, &CpjOptions::default())
}

/// Barrier Newton solve of CP-j. A phase-I search runs first when `start` is
/// not strictly feasible.
pub fn solve_cpj_with(problem: &CpjProblem, start: &ScaledPoint, opts: &CpjOptions) -> CpjSolution {
    let mut active = [true; NV];
    for (a, &p) in active.iter_mut().zip(opts.pinned.iter()) {
        *a = !p;
    }
    let mut steps = 0usize;
    let mut x = start.to_vec9(0.0);
    let mut quality = SolveQuality::Converged;

    if !problem.is_strictly_feasible(start) {
        match phase_one(problem, &x, &active, opts, &mut steps) {
            Some(found) => x = found,
            None => {
                return CpjSolution {
                    point: *start,
                    objective: problem.objective(start),
                    duals: [0.0; CPJ_CONSTRAINTS],
                    kkt_residual: f64::NAN,
                    barrier_parameter: f64::NAN,
                    newton_steps: steps,
                    quality: SolveQuality::NoInterior,
                }
            }
        }
    }
    x[SLACK] = 0.0;
    active[SLACK] = false;

    let mut t = opts.t0;
    loop {
        match center(problem, &mut x, t, false, &active, opts, &mut steps, false) {
            Center::Done => {}
            Center::Stalled => quality = SolveQuality::Stalled,
            Center::Limit => {
                quality = SolveQuality::IterationLimit;
                break;
            }
        }
        if 1.0 / t < opts.barrier_tol {
            break;
        }
        t *= opts.mu;
    }

    let point = ScaledPoint::from_vec9(&x);
    let terms = problem
        .terms(&x, false)
        .expect("iterate stays strictly feasible");
    let duals: [f64; CPJ_CONSTRAINTS] = std::array::from_fn(|i| 1.0 / (t * -terms[i].value));
    let kkt_residual = problem.lagrangian_residual(&terms, &duals, &active);
    CpjSolution {
        point,
        objective: problem.objective(&point),
        duals,
        kkt_residual,
        barrier_parameter: 1.0 / t,
        newton_steps: steps,
        quality,
    }
}

fn phase_one(
    problem: &CpjProblem,
    x0: &Vec9,
    active: &[bool; NV],
    opts: &CpjOptions,
    steps: &mut usize,
) -> Option<Vec9> {
    let worst = problem.max_violation(x0);
    if !worst.is_finite() {
        return None;
    }
    let mut x = *x0;
    x[SLACK] = worst.max(0.0) + 1.0;
    let mut active = *active;
    active[SLACK] = true;
    let mut t = 1.0;
    loop {
        let status = center(problem, &mut x, t, true, &active, opts, steps, true);
        if problem.max_violation(&x) < 0.0 {
            return Some(x);
        }
        if status == Center::Limit || 1.0 / t < opts.barrier_tol {
            return None;
        }
        t *= opts.mu;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Center {
    Done,
    Stalled,
    Limit,
}

#[allow(clippy::too_many_arguments)]
fn center(
    problem: &CpjProblem,
    x: &mut Vec9,
    t: f64,
    phase1: bool,
    active: &[bool; NV],
    opts: &CpjOptions,
    steps: &mut usize,
    stop_when_feasible: bool,
) -> Center {
    let mut prev_dec = f64::INFINITY;
    loop {
        if *steps >= opts.max_newton {
            return Center::Limit;
        }
        let Some((value, mut grad, mut hess)) = problem.barrier(x, t, phase1, true) else {
            return Center::Stalled;
        };
        for i in 0..NV {
            if !active[i] {
                grad[i] = 0.0;
                for j in 0..NV {
                    hess[(i, j)] = 0.0;
                    hess[(j, i)] = 0.0;
                }
                hess[(i, i)] = 1.0;
            }
        }
        let Some(step) = newton_step(&hess, &grad) else {
            return Center::Stalled;
        };
        let dec = -grad.dot(&step) * 0.5;
        let full = match newton_rule(dec, &mut prev_dec, opts.newton_tol) {
            Rule::Done => return Center::Done,
            Rule::Full => true,
            Rule::Search => false,
        };
        *steps += 1;
        let mut alpha = 1.0;
        loop {
            let cand = *x + step * alpha;
            if let Some((v, _, _)) = problem.barrier(&cand, t, phase1, false) {
                if full || v <= value - 0.5 * alpha * dec {
                    *x = cand;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-20 {
                return if dec < ROUNDOFF_DECREMENT {
                    Center::Done
                } else {
                    Center::Stalled
                };
            }
        }
        if stop_when_feasible && problem.max_violation(x) < 0.0 {
            return Center::Done;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Done,
    /// Inside the quadratic-convergence region: take the full Newton step.
    Full,
    Search,
}

// `dec` is half the squared Newton decrement. Below 1/32 the decrement is under
// 1/4, where a full step stays feasible and contracts it quadratically; once it
// stops contracting, the remaining decrement is roundoff.
fn newton_rule(dec: f64, prev: &mut f64, tol: f64) -> Rule {
    if dec <= tol {
        return Rule::Done;
    }
    if dec < 1.0 / 32.0 {
        if dec >= 0.5 * *prev {
            return Rule::Done;
        }
        *prev = dec;
        Rule::Full
    } else {
        *prev = f64::INFINITY;
        Rule::Search
    }
}

fn newton_step(hess: &Mat9, grad: &Vec9) -> Option<Vec9> {
    if let Some(ch) = hess.cholesky() {
        return Some(-ch.solve(grad));
    }
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 1e-12 * scale;
    for _ in 0..12 {
        if let Some(ch) = (hess + Mat9::identity() * reg).cholesky() {
            return Some(-ch.solve(grad));
        }
        reg *= 100.0;
    }
    None
}

/// Auxiliaries that are optimal for CP-j once `(snr, L)` is fixed: g, rho, a
/// and b sit on their linearizations, varsigma and eta on their exact curves.
#[derive(Debug, Clone, Copy)]
struct Reduced {
    a: f64,
    b: f64,
    disp: f64,
    rate_gap: f64,
}

impl CpjProblem {
    fn reduced(&self, snr: f64, l: f64) -> Option<Reduced> {
        if !(l > 0.0 && snr > -1.0) {
            return None;
        }
        let r = &self.reference;
        let ln_snr1 = snr.ln_1p();
        let a = r.a - 1.0 + snr * self.inv_ea;
        let b = r.b - 1.0 + (2.0 + snr) * self.inv_eb;
        let disp = self.kappa * (0.5 * (a + b) - ln_snr1 - 0.5 * l.ln()).exp();
        let rate_gap = self.payload / l - ln_snr1 / LN_2 + disp;
        Some(Reduced {
            a,
            b,
            disp,
            rate_gap,
        })
    }

    /// Lifts a reduced iterate to the full CP-j point.
    fn lift(&self, snr: f64, l: f64) -> ScaledPoint {
        let r = &self.reference;
        let red = self.reduced(snr, l).expect("lift inside the domain");
        ScaledPoint {
            snr,
            blocklength: l,
            varsigma: l.ln(),
            eta: snr.ln_1p(),
            a: red.a,
            b: red.b,
            g: r.g - 1.0 + snr * self.inv_eg,
            rho: r.rho - 1.0 + l * self.inv_er,
        }
    }

    fn reduced_value(&self, x: [f64; 2], t: f64) -> Option<f64> {
        let [snr, l] = x;
        let red = self.reduced(snr, l)?;
        let box_terms = [snr, 1.0 - snr / self.snr_max, l - 1.0, 1.0 - l / self.l_max];
        if !(red.rate_gap < 0.0) || box_terms.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let slack_product = -red.rate_gap * box_terms.iter().product::<f64>();
        Some(t * (snr * self.inv_eg + l * self.inv_er) - slack_product.ln())
    }

    fn reduced_barrier(&self, x: [f64; 2], t: f64) -> Option<(f64, [f64; 2], [[f64; 2]; 2])> {
        let [snr, l] = x;
        let red = self.reduced(snr, l)?;
        let box_terms = [snr, 1.0 - snr / self.snr_max, l - 1.0, 1.0 - l / self.l_max];
        if !(red.rate_gap < 0.0) || box_terms.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let one_snr = 1.0 + snr;
        let u_s = 0.5 * (self.inv_ea + self.inv_eb) - 1.0 / one_snr;
        let u_l = -0.5 / l;
        let h = red.rate_gap;
        let h_s = -1.0 / (one_snr * LN_2) + red.disp * u_s;
        let h_l = -self.payload / (l * l) + red.disp * u_l;
        let h_ss =
            1.0 / (one_snr * one_snr * LN_2) + red.disp * (u_s * u_s + 1.0 / (one_snr * one_snr));
        let h_ll = 2.0 * self.payload / (l * l * l) + red.disp * (u_l * u_l + 0.5 / (l * l));
        let h_sl = red.disp * u_s * u_l;

        let inv2 = 1.0 / (h * h);
        let mut grad = [t * self.inv_eg + h_s / -h, t * self.inv_er + h_l / -h];
        let mut hess = [
            [h_s * h_s * inv2 + h_ss / -h, h_s * h_l * inv2 + h_sl / -h],
            [0.0, h_l * h_l * inv2 + h_ll / -h],
        ];
        // box: -ln(snr) - ln(1 - snr/snr_max) - ln(l - 1) - ln(1 - l/l_max)
        let d = [
            (0usize, box_terms[0], 1.0),
            (0, box_terms[1], -1.0 / self.snr_max),
            (1, box_terms[2], 1.0),
            (1, box_terms[3], -1.0 / self.l_max),
        ];
        for (i, v, dv) in d {
            grad[i] -= dv / v;
            hess[i][i] += dv * dv / (v * v);
        }
        let slack_product = -h * box_terms.iter().product::<f64>();
        let value = t * (snr * self.inv_eg + l * self.inv_er) - slack_product.ln();
        hess[1][0] = hess[0][1];
        Some((value, grad, hess))
    }

    /// Some strictly feasible reduced point near `(snr, l)`, if one is found.
    fn reduced_interior(&self, snr: f64, l: f64) -> Option<[f64; 2]> {
        let mut lengths = vec![l, l + 1e-6, l + 0.5];
        let mut next = l * 1.25;
        while next < self.l_max {
            lengths.push(next);
            next *= 1.25;
        }
        lengths.push(self.l_max * (1.0 - 1e-9));
        let mut best: Option<([f64; 2], f64)> = None;
        for scale in [1.0 - 1e-9, 1.0 - 1e-6, 1.0 - 1e-3, 0.9, 0.5] {
            let s = (snr * scale).min(self.snr_max * (1.0 - 1e-9));
            for &len in &lengths {
                let len = len.clamp(1.0 + 1e-9, self.l_max * (1.0 - 1e-9));
                if self.reduced_value([s, len], 1.0).is_some() {
                    let gap = self.reduced(s, len).map_or(f64::INFINITY, |r| r.rate_gap);
                    if best.is_none_or(|(_, g)| gap < g) {
                        best = Some(([s, len], gap));
                    }
                }
            }
        }
        best.map(|(x, _)| x)
    }
}

/// Solves CP-j over `(snr, L)` only, with the auxiliaries eliminated in
/// closed form. Same minimizer as [`solve_cpj`]; `start` need not be strictly
/// feasible.
pub fn solve_cpj_reduced(
    problem: &CpjProblem,
    start: &ScaledPoint,
    opts: &CpjOptions,
) -> CpjSolution {
    let no_interior = |steps| CpjSolution {
        point: *start,
        objective: problem.objective(start),
        duals: [0.0; CPJ_CONSTRAINTS],
        kkt_residual: f64::NAN,
        barrier_parameter: f64::NAN,
        newton_steps: steps,
        quality: SolveQuality::NoInterior,
    };
    let mut x = [start.snr, start.blocklength];
    if problem.reduced_value(x, 1.0).is_none() {
        match problem.reduced_interior(start.snr, start.blocklength) {
            Some(found) => x = found,
            None => return no_interior(0),
        }
    }
    let mut steps = 0;
    let mut quality = SolveQuality::Converged;
    let mut t = opts.t0;
    'outer: loop {
        let mut prev_dec = f64::INFINITY;
        loop {
            if steps >= opts.max_newton {
                quality = SolveQuality::IterationLimit;
                break 'outer;
            }
            let (value, grad, h) = problem
                .reduced_barrier(x, t)
                .expect("iterate stays strictly feasible");
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(det > 0.0 && h[0][0] > 0.0) {
                quality = SolveQuality::Stalled;
                break;
            }
            let step = [
                -(h[1][1] * grad[0] - h[0][1] * grad[1]) / det,
                -(h[0][0] * grad[1] - h[1][0] * grad[0]) / det,
            ];
            let dec = -(grad[0] * step[0] + grad[1] * step[1]) * 0.5;
            let full = match newton_rule(dec, &mut prev_dec, opts.newton_tol) {
                Rule::Done => break,
                Rule::Full => true,
                Rule::Search => false,
            };
            steps += 1;
            let mut alpha = 1.0;
            loop {
                let cand = [x[0] + alpha * step[0], x[1] + alpha * step[1]];
                if let Some(v) = problem.reduced_value(cand, t) {
                    if full || v <= value - 0.5 * alpha * dec {
                        x = cand;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break;
                }
            }
            if alpha < 1e-20 {
                if dec >= ROUNDOFF_DECREMENT {
                    quality = SolveQuality::Stalled;
                }
                break;
            }
        }
        if 1.0 / t < opts.barrier_tol {
            break;
        }
        t *= opts.mu;
    }

    let point = problem.lift(x[0], x[1]);
    let red = problem
        .reduced(x[0], x[1])
        .expect("final iterate inside the domain");
    let mut duals = [0.0; CPJ_CONSTRAINTS];
    let lam_rate = 1.0 / (t * -red.rate_gap);
    duals[6] = lam_rate;
    duals[7] = 1.0 / (t * (x[1] - 1.0));
    duals[8] = 1.0 / (t * x[0]);
    duals[9] = 1.0 / (t * (1.0 - x[0] / problem.snr_max));
    duals[10] = 1.0 / (t * (1.0 - x[1] / problem.l_max));
    // multipliers of the eliminated constraints follow from stationarity in
    // the auxiliary coordinates
    duals[0] = 0.5 * red.disp * lam_rate;
    duals[1] = 0.5 * red.disp * lam_rate;
    duals[2] = 1.0;
    duals[3] = 1.0;
    duals[4] = 0.5 * red.disp * lam_rate;
    duals[5] = red.disp * lam_rate;
    let terms = problem
        .terms(&point.to_vec9(0.0), false)
        .expect("lifted point inside the domain");
    let kkt_residual = problem.lagrangian_residual(&terms, &duals, &[true; NV]);
    CpjSolution {
        point,
        objective: problem.objective(&point),
        duals,
        kkt_residual,
        barrier_parameter: 1.0 / t,
        newton_steps: steps,
        quality,
    }
}

/// Full power with the shortest codeword that carries the payload, auxiliaries
/// tight.
pub fn initial_feasible_point(inst: &Sp1Instance) -> Result<ScaledPoint, OptError> {
    let model = inst.rate_model()?;
    let snr = inst.snr_max();
    (1..=inst.l_max)
        .find(|&l| model.payload_capacity(snr, l as f64) >= inst.payload_bits)
        .map(|l| ScaledPoint::tight(snr, l as f64))
        .ok_or(OptError::Infeasible { l_max: inst.l_max })
}

/// SP1 by the convex-concave procedure, followed by rounding the blocklength
/// up and re-tightening the power for it.
pub fn solve_sp1_ccp(inst: &Sp1Instance) -> Sp1Solution {
    solve_sp1_ccp_with(inst, &CpjOptions::default())
}

/// [`solve_sp1_ccp`] with explicit barrier settings for every CP-j solve.
pub fn solve_sp1_ccp_with(inst: &Sp1Instance, opts: &CpjOptions) -> Sp1Solution {
    let Ok(mut current) = initial_feasible_point(inst) else {
        return Sp1Solution::infeasible(inst, SolveMethod::Ccp, 0);
    };
    let ln_pscale = offsets(inst).1;
    let mut obj = current.g + current.rho + ln_pscale;
    let mut trace = vec![obj];
    let mut quality = SolveQuality::Converged;
    let mut iterations = 0;
    for j in 0..CCP_MAX_ITERS {
        let Ok(problem) = CpjProblem::new(inst, current) else {
            break;
        };
        let sol = solve_cpj_reduced(&problem, &current, opts);
        iterations = j + 1;
        if sol.quality == SolveQuality::NoInterior {
            quality = SolveQuality::NoInterior;
            break;
        }
        if sol.quality != SolveQuality::Converged {
            quality = sol.quality;
        }
        // a CP-j solution can only be worse than its reference through the
        // barrier's residual gap; keep the reference then
        if sol.objective > obj {
            break;
        }
        let improvement = obj - sol.objective;
        current = sol.point;
        obj = sol.objective;
        trace.push(obj);
        if improvement < CCP_TOL {
            break;
        }
        if j + 1 == CCP_MAX_ITERS {
            quality = SolveQuality::IterationLimit;
        }
    }

    let relaxed = current.blocklength;
    let mut blocklength = ((relaxed * (1.0 - 1e-12)).ceil() as u32).clamp(1, inst.l_max);
    let power = loop {
        // the relaxation implies feasibility at the rounded length; walk up if
        // rounding noise says otherwise
        if let Some(p) = feasible_power_for_length(inst, blocklength) {
            break Some(p);
        }
        if blocklength == inst.l_max {
            break None;
        }
        blocklength += 1;
    };
    match power {
        Some(power) => Sp1Solution {
            power,
            blocklength,
            objective: power * blocklength as f64,
            method: SolveMethod::Ccp,
            feasible: true,
            iterations,
            objective_trace: trace,
            quality,
        },
        None => Sp1Solution::infeasible(inst, SolveMethod::Ccp, iterations),
    }
}
