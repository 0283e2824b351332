//! Independent checks of the per-transmission optimizers: finite-difference
//! KKT conditions, a brute-force solve of the reduced convex subproblem, an
//! exhaustive grid and the Shannon-limit closed form.

mod common;

use aoi_tail::phy_channel::{path_loss_db, LinkParams};
use aoi_tail::transmission_optimizer::{
    initial_feasible_point, solve_cpj, solve_cpj_reduced, solve_sp1_ccp, solve_sp1_oracle,
    CpjOptions, CpjProblem, ScaledPoint, Sp1Instance, CPJ_CONSTRAINTS, DEFAULT_L_MAX,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn instance(fading: f64, bytes: f64, eps: f64) -> Sp1Instance {
    let gain = 10f64.powf(-path_loss_db(15.0).unwrap() / 10.0) * fading;
    Sp1Instance::new(
        gain,
        LinkParams::factory_default(eps),
        bytes * 8.0,
        DEFAULT_L_MAX,
    )
    .unwrap()
}

/// A mid-course CCP reference: the point after one CP-j solve.
fn second_reference(inst: &Sp1Instance) -> ScaledPoint {
    let start = initial_feasible_point(inst).unwrap();
    let p = CpjProblem::new(inst, start).unwrap();
    solve_cpj_reduced(&p, &start, &CpjOptions::default()).point
}

fn central_gradient(f: impl Fn(&[f64; 8]) -> f64, x: &[f64; 8]) -> [f64; 8] {
    std::array::from_fn(|i| {
        let h = 1e-6 * x[i].abs().max(1.0);
        let (mut up, mut down) = (*x, *x);
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Smallest stationarity residual `|c + J^T lambda|_inf` over lambda >= 0,
/// by enumerating supports of the candidate active set.
fn nnls_residual(c: &[f64; 8], grads: &[[f64; 8]]) -> f64 {
    let m = grads.len();
    let mut best = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for mask in 1u32..(1 << m) {
        let cols: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
        let a = DMatrix::from_fn(8, cols.len(), |r, k| grads[cols[k]][r]);
        let b = DVector::from_fn(8, |r, _| -c[r]);
        let Ok(lam) = a.clone().svd(true, true).solve(&b, 1e-14) else {
            continue;
        };
        if lam.iter().any(|&l| l < 0.0) {
            continue;
        }
        let r = (&a * &lam - &b).amax();
        best = best.min(r);
    }
    best
}

#[test]
fn cpj_kkt_holds_by_finite_differences() {
    for (fading, bytes, eps) in [
        (0.3, 20.0, 1e-9),
        (1.0, 100.0, 1e-5),
        (2.5, 250.0, 1e-9),
        (0.05, 250.0, 1e-5),
    ] {
        let inst = instance(fading, bytes, eps);
        for reference in [
            initial_feasible_point(&inst).unwrap(),
            second_reference(&inst),
        ] {
            let problem = CpjProblem::new(&inst, reference).unwrap();
            let sol = solve_cpj(&problem, &reference);
            let x = sol.point.to_array();
            let values = problem.constraint_values(&sol.point);
            assert!(values.iter().all(|&v| v <= 1e-8), "{values:?}");

            let objective = |v: &[f64; 8]| problem.objective(&ScaledPoint::from_array(*v));
            let c = central_gradient(objective, &x);
            let active: Vec<usize> = (0..CPJ_CONSTRAINTS)
                .filter(|&i| values[i] > -1e-5)
                .collect();
            assert!(active.len() <= 12);
            let grads: Vec<[f64; 8]> = active
                .iter()
                .map(|&i| {
                    central_gradient(
                        |v| problem.constraint_values(&ScaledPoint::from_array(*v))[i],
                        &x,
                    )
                })
                .collect();
            let residual = nnls_residual(&c, &grads);
            assert!(
                residual < 1e-6,
                "fading {fading} D {bytes} eps {eps}: residual {residual:.3e}, active {active:?}"
            );
        }
    }
}

/// Minimum of the reduced CP-j objective by direct search over L with the
/// smallest feasible SNR found by scanning and bisection.
fn reduced_brute_force(problem: &CpjProblem, inst: &Sp1Instance) -> f64 {
    let r = *problem.reference();
    let (ea, eb, eg, er) = ((-r.a).exp(), (-r.b).exp(), (-r.g).exp(), (-r.rho).exp());
    let kappa = common::q_inv(inst.link.epsilon) / std::f64::consts::LN_2;
    let snr_max = inst.snr_max();
    let rate_gap = |snr: f64, l: f64| {
        let a = r.a - 1.0 + snr * ea;
        let b = r.b - 1.0 + (2.0 + snr) * eb;
        let eta = snr.ln_1p();
        let vs = l.ln();
        inst.payload_bits / l - snr.ln_1p() / std::f64::consts::LN_2
            + kappa * (0.5 * (a + b) - eta - 0.5 * vs).exp()
    };
    let min_snr = |l: f64| -> Option<f64> {
        let n = 4000;
        let mut prev = 0.0;
        for i in 1..=n {
            let s = snr_max * (i as f64 / n as f64).powi(3);
            if rate_gap(s, l) <= 0.0 {
                let (mut lo, mut hi) = (prev, s);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if rate_gap(mid, l) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            prev = s;
        }
        None
    };
    let value = |l: f64| min_snr(l).map(|s| (r.g - 1.0 + s * eg) + (r.rho - 1.0 + l * er));
    let l_max = inst.l_max as f64;
    let grid = 2000;
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..=grid {
        let l = 1.0 + (l_max - 1.0) * i as f64 / grid as f64;
        if let Some(v) = value(l) {
            if v < best.0 {
                best = (v, l);
            }
        }
    }
    // golden-section refinement around the best grid point
    let step = (l_max - 1.0) / grid as f64;
    let (mut lo, mut hi) = ((best.1 - step).max(1.0), (best.1 + step).min(l_max));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if value(m1).unwrap_or(f64::INFINITY) <= value(m2).unwrap_or(f64::INFINITY) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.0.min(value(0.5 * (lo + hi)).unwrap_or(f64::INFINITY))
}

#[test]
fn reduced_subproblem_matches_brute_force() {
    for (fading, bytes, eps) in [(0.4, 20.0, 1e-9), (1.0, 100.0, 1e-5), (3.0, 250.0, 1e-9)] {
        let inst = instance(fading, bytes, eps);
        for reference in [
            initial_feasible_point(&inst).unwrap(),
            second_reference(&inst),
        ] {
            let problem = CpjProblem::new(&inst, reference).unwrap();
            let oracle = reduced_brute_force(&problem, &inst);
            for sol in [
                solve_cpj(&problem, &reference),
                solve_cpj_reduced(&problem, &reference, &CpjOptions::default()),
            ] {
                let got = sol.point.g + sol.point.rho;
                assert!(
                    (got - oracle).abs() < 1e-6 * oracle.abs().max(1.0),
                    "fading {fading} D {bytes}: solver {got} vs brute force {oracle}"
                );
            }
        }
    }
}

#[test]
fn oracle_beats_verification_grid() {
    for (fading, bytes, eps) in [(0.2, 20.0, 1e-9), (1.0, 150.0, 1e-5), (4.0, 250.0, 1e-9)] {
        let inst = instance(fading, bytes, eps);
        let best = solve_sp1_oracle(&inst);
        assert!(best.feasible);
        let p_max = inst.link.p_max;
        let noise = inst.link.noise_power();
        for i in 1..=200 {
            let p = p_max * 10f64.powf(-6.0 * (200 - i) as f64 / 199.0);
            for j in 0..200 {
                let l = (1 + j * (DEFAULT_L_MAX as usize - 1) / 199) as f64;
                if common::bits(p * inst.gain / noise, l, eps) >= inst.payload_bits {
                    assert!(
                        p * l >= best.objective * (1.0 - 1e-6),
                        "grid point ({p}, {l}) beats {best:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn shannon_limit_oracle_closed_form() {
    for fading in [0.1, 1.0, 5.0] {
        let inst = instance(fading, 100.0, 0.5);
        let sol = solve_sp1_oracle(&inst);
        let l = DEFAULT_L_MAX as f64;
        let expected =
            (2f64.powf(inst.payload_bits / l) - 1.0) * inst.link.noise_power() / inst.gain * l;
        assert!(
            (sol.objective - expected).abs() <= 1e-6 * expected,
            "{} vs {expected}",
            sol.objective
        );
        assert_eq!(sol.blocklength, DEFAULT_L_MAX);
    }
}

#[test]
fn deep_fade_is_infeasible_for_both_solvers() {
    let inst = instance(1e-6, 250.0, 1e-9);
    assert!(!solve_sp1_oracle(&inst).feasible);
    let ccp = solve_sp1_ccp(&inst);
    assert!(!ccp.feasible);
    assert_eq!(
        (ccp.power, ccp.blocklength),
        (inst.link.p_max, DEFAULT_L_MAX)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn full_and_reduced_cpj_agree(fading in 0.05f64..5.0, bytes in 20.0f64..250.0, tight in prop::bool::ANY) {
        let eps = if tight { 1e-9 } else { 1e-5 };
        let inst = instance(fading, bytes, eps);
        let reference = initial_feasible_point(&inst).unwrap();
        let problem = CpjProblem::new(&inst, reference).unwrap();
        let full = solve_cpj(&problem, &reference);
        let reduced = solve_cpj_reduced(&problem, &reference, &CpjOptions::default());
        prop_assert!((full.objective - reduced.objective).abs() < 1e-6 * full.objective.abs().max(1.0));
        prop_assert!(problem.is_strictly_feasible(&full.point) || problem.constraint_values(&full.point).iter().all(|&v| v <= 1e-8));
    }

    #[test]
    fn ccp_result_satisfies_rate(fading in 0.01f64..5.0, bytes in 20.0f64..250.0) {
        let inst = instance(fading, bytes, 1e-5);
        let sol = solve_sp1_ccp(&inst);
        if sol.feasible {
            let snr = sol.power * inst.gain / inst.link.noise_power();
            prop_assert!(common::bits(snr, sol.blocklength as f64, 1e-5) >= inst.payload_bits * (1.0 - 1e-9));
            prop_assert!(sol.power <= inst.link.p_max);
        }
    }
}
