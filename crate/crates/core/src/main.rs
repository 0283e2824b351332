use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use aoi_tail::cli_experiments::{
    build_spec, run_selftest, run_single, run_sweep_datasize, run_sweep_sensors, run_tail_analysis,
    ExperimentKind, CONFIG_KEYS,
};

#[derive(Parser)]
#[command(
    name = "aoi-tail",
    version,
    about = "Tail-aware age-of-information experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation run: metrics JSON, peak and queue CSVs.
    Run(Common),
    /// Power, energy and blocklength versus payload size.
    SweepDatasize(Common),
    /// Peak age and update interval versus number of sensors.
    SweepSensors(Common),
    /// Block-maxima convergence and tail shape per tail mode.
    Tail(Common),
    /// Optimizer, special-function and estimator self-checks.
    Selftest(Common),
    /// Lists the config keys.
    Keys,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file, or a JSON sidecar from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    /// Override one key, e.g. `--set epsilon=1e-5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn spec(kind: ExperimentKind, c: Common) -> Result<aoi_tail::cli_experiments::ExperimentSpec> {
    build_spec(
        kind,
        c.config.as_deref(),
        &c.overrides,
        c.seed,
        c.reps,
        Some(c.out),
    )
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(c) => {
            let s = spec(ExperimentKind::Run, c)?;
            let r = run_single(&s)?;
            let m = &r.metrics;
            println!(
                "avg_peak_aoi_s={:.6e} avg_interval_s={:.6e} ratio={:.4} avg_P_w={:.4e} max_queue={:.3e} infeasible={}",
                m.avg_peak_aoi,
                m.avg_interval,
                m.ratio(),
                m.mean_power,
                m.max_queue,
                m.infeasible
            );
        }
        Command::SweepDatasize(c) => {
            let s = spec(ExperimentKind::SweepDatasize, c)?;
            for r in run_sweep_datasize(&s)? {
                println!(
                    "D={}B eps={:e} P={:.3} dBm E={:.4e} J mean_L={:.1} p99_tx={:.3e} s{}",
                    r.payload_bytes,
                    r.epsilon,
                    r.avg_power_dbm,
                    r.avg_energy_j,
                    r.mean_blocklength,
                    r.p99_tx_time_s,
                    r.error.map(|e| format!(" error: {e}")).unwrap_or_default()
                );
            }
        }
        Command::SweepSensors(c) => {
            let s = spec(ExperimentKind::SweepSensors, c)?;
            for r in run_sweep_sensors(&s)? {
                println!(
                    "K={} b={:.4e} s S={:.4e} s ratio={:.4}{}",
                    r.sensors,
                    r.avg_peak_aoi_s,
                    r.avg_interval_s,
                    r.ratio,
                    r.error.map(|e| format!(" error: {e}")).unwrap_or_default()
                );
            }
        }
        Command::Tail(c) => {
            let s = spec(ExperimentKind::Tail, c)?;
            let rep = run_tail_analysis(&s)?;
            for m in &rep.modes {
                println!(
                    "mode={} avg_peak_aoi_s={:.4e} q={:.4e} xi={:.4} sigma={:.4e} theta={:.3}",
                    m.mode,
                    m.avg_peak_aoi_s,
                    m.pot_threshold,
                    m.pot_shape,
                    m.pot_scale,
                    m.extremal_index
                );
            }
            for r in &rep.rows {
                println!(
                    "mode={} M={} maxima={:.0} ks_pot={:.4} ks_pwm={:.4}{}",
                    r.mode,
                    r.block_size,
                    r.maxima,
                    r.ks_pot,
                    r.ks_pwm,
                    r.skipped
                        .as_ref()
                        .map(|e| format!(" skipped: {e}"))
                        .unwrap_or_default()
                );
            }
        }
        Command::Selftest(c) => {
            let s = spec(ExperimentKind::Selftest, c)?;
            let rep = run_selftest(&s)?;
            for c in &rep.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured
                );
            }
            if !rep.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Keys => {
            for (k, doc) in CONFIG_KEYS {
                println!("{k:<20} {doc}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
