//! Exit criteria. Each criterion prints one PASS/FAIL line with its measured
//! values and runtime; the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use aoi_tail::cli_experiments::{
    run_sweep_datasize, run_sweep_sensors, run_tail_analysis, ExperimentConfig, ExperimentKind,
    ExperimentSpec,
};
use aoi_tail::evt_tail::{shape_from_moments, ExceedanceMoments};
use aoi_tail::lyapunov_queues::TailMode;
use aoi_tail::phy_channel::{fb_rate, LinkParams};
use aoi_tail::sim_engine::{run, run_logged, SimConfig};
use aoi_tail::transmission_optimizer::{
    solve_sp1_ccp, solve_sp1_oracle, solve_sp2, Sp1Instance, DEFAULT_L_MAX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn spec(kind: ExperimentKind, overrides: &[&str]) -> ExperimentSpec {
    let mut config = ExperimentConfig::default();
    for o in overrides {
        config.apply_override(o).unwrap();
    }
    ExperimentSpec {
        kind,
        config,
        out_dir: None,
    }
}

fn shannon_identity() -> Verdict {
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in 0..10 {
        for j in 0..10 {
            let snr = 10f64.powf(-3.0 + 0.6 * i as f64);
            let l = 1.0 + 500.0 * j as f64;
            let err = (fb_rate(snr, l, 0.5).unwrap() - (1.0 + snr).log2()).abs();
            worst = worst.max(err);
            count += 1;
        }
    }
    verdict(
        worst < 1e-12,
        format!("{count} points, max |err| = {worst:.2e}"),
    )
}

fn gpd_consistency() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, xi) in [-0.2f64, 0.0, 0.2].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let y: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let u = 1.0 - rng.gen::<f64>();
                if xi == 0.0 {
                    -u.ln()
                } else {
                    (u.powf(-xi) - 1.0) / xi
                }
            })
            .collect();
        let est = shape_from_moments(&ExceedanceMoments::from_samples(0.0, &y)).unwrap();
        ok &= (est - xi).abs() < 0.02;
        parts.push(format!("xi={xi}: {est:.4}"));
    }
    verdict(ok, parts.join(", "))
}

fn ccp_vs_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pl_db = 33.0 * 15f64.log10() + 20.0 * 2.625f64.log10() + 32.0;
    let grid = [
        (20.0, 1e-9),
        (20.0, 1e-5),
        (100.0, 1e-9),
        (100.0, 1e-5),
        (250.0, 1e-9),
        (250.0, 1e-5),
    ];
    let (mut compared, mut infeasible, mut worst_gap) = (0, 0, 0.0f64);
    let (mut violations, mut non_monotone) = (0, 0);
    for i in 0..150 {
        let (bytes, eps) = grid[i % grid.len()];
        let fading: f64 = Exp1.sample(&mut rng);
        let gain = 10f64.powf(-pl_db / 10.0) * fading;
        let link = LinkParams::factory_default(eps);
        let inst = Sp1Instance::new(gain, link, bytes * 8.0, DEFAULT_L_MAX).unwrap();
        let oracle = solve_sp1_oracle(&inst);
        if !oracle.feasible {
            infeasible += 1;
            continue;
        }
        let ccp = solve_sp1_ccp(&inst);
        compared += 1;
        worst_gap = worst_gap.max((ccp.objective - oracle.objective) / oracle.objective);
        let snr = ccp.power * gain / link.noise_power();
        if !(ccp.feasible
            && ccp.power <= link.p_max
            && common::bits(snr, ccp.blocklength as f64, eps) >= bytes * 8.0 * (1.0 - 1e-9))
        {
            violations += 1;
        }
        if ccp.objective_trace.windows(2).any(|w| w[1] > w[0]) {
            non_monotone += 1;
        }
    }
    verdict(
        compared >= 100 && worst_gap <= 0.05 && violations == 0 && non_monotone == 0,
        format!(
            "{compared} instances ({infeasible} infeasible skipped), max gap {:.3}%, rate violations {violations}, non-monotone traces {non_monotone}",
            100.0 * worst_gap
        ),
    )
}

fn sp2_residual() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (v, s_max) = (1.0f64, 10.0f64);
    let (mut worst, mut closed, mut tuples, mut unresolvable) = (0.0f64, 0.0f64, 0, 0);
    while tuples < 1000 {
        let phi = rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-3.0..2.0));
        let psi = 10f64.powf(rng.gen_range(-3.0..2.0));
        let power_len = 10f64.powf(rng.gen_range(-6.0..0.0));
        let energy = power_len / 1e6;
        // interior: the stationarity function changes sign inside (0, s_max)
        if psi * s_max.exp() + phi - v * energy / (s_max * s_max) <= 0.0 {
            continue;
        }
        // binary64 resolution of the residual at the exact root: one ulp of S
        // and the rounding of psi e^S + phi, relative to V E / S^2
        let root = sp2_bisection(phi, psi, v * energy, s_max);
        let rhs_root = v * energy / (root * root);
        let floor = (psi * root.exp() * root + phi.abs()) * f64::EPSILON / rhs_root;
        if floor > 1e-8 {
            unresolvable += 1;
            continue;
        }
        let s = solve_sp2(phi, psi, v, energy, 0.0, s_max).unwrap();
        let rhs = v * energy / (s * s);
        worst = worst.max((psi * s.exp() + phi - rhs).abs() / rhs);
        let phi0 = phi.abs();
        let s0 = solve_sp2(phi0, 0.0, v, energy, 0.0, s_max).unwrap();
        let exact = (v * energy / phi0).sqrt();
        if exact < s_max {
            closed = closed.max((s0 - exact).abs() / exact);
        }
        tuples += 1;
    }
    verdict(
        worst < 1e-6 && closed < 1e-9,
        format!(
            "{tuples} tuples, max rel residual {worst:.2e}, max closed-form rel err {closed:.2e}; \
             {unresolvable} interior draws skipped as unresolvable in binary64"
        ),
    )
}

/// Root of `psi e^S + phi - c / S^2` on `(0, s_max]` by plain bisection.
fn sp2_bisection(phi: f64, psi: f64, c: f64, s_max: f64) -> f64 {
    let g = |s: f64| psi * s.exp() + phi - c / (s * s);
    let (mut lo, mut hi) = (0.0f64, s_max);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid == 0.0 || g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn peak_interval_identity() -> Verdict {
    let rows = run_sweep_sensors(&spec(ExperimentKind::SweepSensors, &["reps=1"])).unwrap();
    let ratios_ok = rows.iter().all(|r| (0.98..=1.02).contains(&r.ratio));
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].avg_interval_s < w[0].avg_interval_s);
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "K={} S={:.3e} ratio={:.4}",
                r.sensors, r.avg_interval_s, r.ratio
            )
        })
        .collect();
    verdict(
        ratios_ok && decreasing && rows.iter().all(|r| r.error.is_none()),
        format!(
            "ratio in band: {ratios_ok}, S strictly decreasing: {decreasing}; {}",
            table.join("; ")
        ),
    )
}

fn datasize_trends() -> Verdict {
    let rows = run_sweep_datasize(&spec(
        ExperimentKind::SweepDatasize,
        &["reps=1", "lifetime=20000", "warmup=2000"],
    ))
    .unwrap();
    let series = |eps: f64| rows.iter().filter(|r| r.epsilon == eps).collect::<Vec<_>>();
    let (hi, lo) = (series(1e-9), series(1e-5));
    let mut checks = Vec::new();
    for (name, s) in [("eps=1e-9", &hi), ("eps=1e-5", &lo)] {
        checks.push((
            format!("{name} mean L non-decreasing"),
            s.windows(2)
                .all(|w| w[1].mean_blocklength >= w[0].mean_blocklength),
        ));
        checks.push((
            format!("{name} mean P non-increasing"),
            s.windows(2).all(|w| w[1].avg_power_w <= w[0].avg_power_w),
        ));
        checks.push((
            format!("{name} mean energy non-decreasing"),
            s.windows(2).all(|w| w[1].avg_energy_j >= w[0].avg_energy_j),
        ));
    }
    checks.push((
        "P(1e-5) <= P(1e-9) per D".to_string(),
        hi.iter()
            .zip(&lo)
            .all(|(a, b)| b.avg_power_w <= a.avg_power_w),
    ));
    let p99 = rows.iter().map(|r| r.p99_tx_time_s).fold(0.0, f64::max);
    checks.push((
        "largest p99 L/W in [0.5, 2] ms".to_string(),
        (0.5e-3..=2e-3).contains(&p99),
    ));
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.1)
        .map(|c| c.0.as_str())
        .collect();
    let powers: Vec<String> = hi
        .iter()
        .zip(&lo)
        .map(|(a, b)| {
            format!(
                "D={}: L={:.0}/{:.0} P={:.2}/{:.2} dBm",
                a.payload_bytes,
                a.mean_blocklength,
                b.mean_blocklength,
                a.avg_power_dbm,
                b.avg_power_dbm
            )
        })
        .collect();
    verdict(
        failed.is_empty(),
        format!(
            "failed: [{}]; p99 tx time {:.3} ms; (eps 1e-9 / 1e-5) {}",
            failed.join(", "),
            1e3 * p99,
            powers.join("; ")
        ),
    )
}

fn tail_convergence() -> Verdict {
    let report = run_tail_analysis(&spec(ExperimentKind::Tail, &["reps=5"])).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in [TailMode::Negative, TailMode::Positive] {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.mode == mode).collect();
        let decreasing = rows.windows(2).all(|w| w[1].ks_pot < w[0].ks_pot)
            && rows.iter().all(|r| r.reps_ok == 5);
        ok &= decreasing;
        let ks: Vec<String> = rows
            .iter()
            .map(|r| format!("M={}:{:.4}", r.block_size, r.ks_pot))
            .collect();
        parts.push(format!(
            "{mode} KS strictly decreasing: {decreasing} ({})",
            ks.join(" ")
        ));
    }
    let neg = report
        .modes
        .iter()
        .find(|m| m.mode == TailMode::Negative)
        .unwrap();
    let pos = report
        .modes
        .iter()
        .find(|m| m.mode == TailMode::Positive)
        .unwrap();
    let shape_ok = neg.pot_shape < pos.pot_shape;
    let peak_ok = neg.avg_peak_aoi_s > pos.avg_peak_aoi_s;
    ok &= shape_ok && peak_ok;
    parts.push(format!(
        "xi negative {:.3} < positive {:.3}: {shape_ok}; mean peak negative {:.3e} > positive {:.3e}: {peak_ok}",
        neg.pot_shape, pos.pot_shape, neg.avg_peak_aoi_s, pos.avg_peak_aoi_s
    ));
    verdict(ok, parts.join("; "))
}

fn queue_stability() -> Verdict {
    let cfg = SimConfig::baseline(2);
    let m = run(&cfg).unwrap();
    let cost_ok = m.avg_cost.iter().all(|&c| c <= 1.03 * 1.05);
    let q_ratio = m.max_final_queue() / m.lifetime as f64;
    verdict(
        cost_ok && q_ratio < 0.01,
        format!(
            "avg e^age per sensor {:?}, max queue / N = {q_ratio:.2e}",
            m.avg_cost
        ),
    )
}

fn replay_determinism() -> Verdict {
    let cfg = SimConfig {
        lifetime: 20_000,
        warmup: 4_000,
        ..SimConfig::baseline(2)
    };
    let (metrics, log) = run_logged(&cfg).unwrap();
    let replayed = common::replay(&cfg);
    let mismatch = common::first_mismatch(&log, &replayed);
    let thresholds_ok = replayed.thresholds == metrics.pot_thresholds;
    let peaks_ok = replayed.peaks == metrics.peak_series;
    verdict(
        mismatch.is_none() && thresholds_ok && peaks_ok,
        format!(
            "{} records, first mismatch {:?}, thresholds equal {thresholds_ok}, peaks equal {peaks_ok}",
            log.len(),
            mismatch.map(|m| m.0)
        ),
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = (u32, &'static str, u64, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        (1, "Shannon-limit identity", 1, shannon_identity),
        (2, "GPD shape estimator consistency", 30, gpd_consistency),
        (3, "CCP within 5% of oracle", 300, ccp_vs_oracle),
        (4, "update-interval stationarity residual", 5, sp2_residual),
        (
            5,
            "peak age equals K times interval",
            600,
            peak_interval_identity,
        ),
        (6, "data-size trends", 600, datasize_trends),
        (
            7,
            "block-maxima convergence and tail shape",
            1200,
            tail_convergence,
        ),
        (
            8,
            "constraint tracking and queue stability",
            300,
            queue_stability,
        ),
        (9, "replay determinism", 120, replay_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let passed = v.passed && in_time;
        let line = format!(
            "{} criterion {id} ({name}): {} [{:.1} s of {budget} s]\n",
            if passed { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
        // bypass the harness capture so every line shows up
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
