//! One function per subcommand. Each returns its rows (and a text report
//! where there is one) so the binary and the tests share the same code path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use wncs_aoi::aoi::{metrics, paoi_cdf, paoi_pdf, paoi_violation, Scheme, TrafficParams};
use wncs_aoi::channel::{
    avg_blep_mrc, avg_blep_quadrature, dbm_to_linear, linear_to_db, LinkBudget,
};
use wncs_aoi::control::{aoi_trace_to_steps, simulate_closed_loop, StateTrace};
use wncs_aoi::optimizer::{optimize_dinkelbach, optimize_exhaustive, OptimizerResult};
use wncs_aoi::sim::{
    empirical_violation, simulate as run_sim, wilson_interval, ViolationEstimate, WILSON_Z95,
};
use wncs_aoi::{Error, SimResult};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Serialise rows to CSV with a header taken from the row type.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io("CSV buffer".into(), e.into_error()))
}

pub fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(path)
}

fn require_nonempty<T>(axis: &[T], name: &str) -> CliResult<()> {
    if axis.is_empty() {
        return Err(CliError::Usage(format!("{name} list is empty")));
    }
    Ok(())
}

/// Every `(a, b)` pair in row-major order, for deterministic parallel sweeps.
fn grid<A: Copy, B: Copy>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| (x, y)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlepAxis {
    /// `sweep.gamma_bar` as linear mean branch SNR.
    MeanSnr,
    /// `sweep.pt_dbm` against the configured noise level.
    TransmitPower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlepRow {
    pub gamma_bar: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub eps_closed: f64,
    pub eps_quadrature: f64,
    pub abs_diff: f64,
}

pub fn blep(cfg: &ExperimentConfig, axis: BlepAxis) -> CliResult<Vec<BlepRow>> {
    require_nonempty(&cfg.sweep.k, "K")?;
    let fbl = cfg.fbl()?;
    let gammas: Vec<f64> = match axis {
        BlepAxis::MeanSnr => cfg.sweep.gamma_bar.clone(),
        BlepAxis::TransmitPower => cfg
            .sweep
            .pt_dbm
            .iter()
            .map(|pt| dbm_to_linear(pt - cfg.channel.noise_variance_dbm))
            .collect(),
    };
    require_nonempty(&gammas, "mean SNR")?;
    grid(&gammas, &cfg.sweep.k)
        .into_par_iter()
        .map(|(g, k)| {
            let b = LinkBudget::from_mean_snr(g, k)?;
            let closed = avg_blep_mrc(&b, &fbl);
            let quad = avg_blep_quadrature(&b, &fbl)?.value;
            Ok(BlepRow {
                gamma_bar: g,
                k,
                eps_closed: closed,
                eps_quadrature: quad,
                abs_diff: (closed - quad).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AoiRow {
    pub pt_dbm: f64,
    pub gamma_bar_db: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub scheme: String,
    pub epsilon: f64,
    pub avg_aoi_ms: f64,
    pub avg_paoi_ms: f64,
}

const SCHEMES: [Scheme; 3] = [Scheme::Nr, Scheme::Arq, Scheme::Kr];

/// Closed-form averages; a link that never delivers reports `inf`.
pub fn analytic_metrics(scheme: Scheme, tp: &TrafficParams) -> CliResult<(f64, f64)> {
    match metrics(scheme, tp) {
        Ok(m) => Ok((m.avg_aoi_ms, m.avg_paoi_ms)),
        Err(Error::Divergent(_)) => Ok((f64::INFINITY, f64::INFINITY)),
        Err(e) => Err(e.into()),
    }
}

pub fn aoi(cfg: &ExperimentConfig) -> CliResult<Vec<AoiRow>> {
    require_nonempty(&cfg.sweep.pt_dbm, "transmit power")?;
    require_nonempty(&cfg.sweep.k, "K")?;
    let fbl = cfg.fbl()?;
    let mut rows = Vec::new();
    for (pt, k) in grid(&cfg.sweep.pt_dbm, &cfg.sweep.k) {
        let budget = cfg.budget(pt, k)?;
        for scheme in SCHEMES {
            let tp = TrafficParams::for_scheme(scheme, cfg.traffic.arrival_rate, &fbl, &budget)?;
            let (avg_aoi_ms, avg_paoi_ms) = analytic_metrics(scheme, &tp)?;
            rows.push(AoiRow {
                pt_dbm: pt,
                gamma_bar_db: pt - cfg.channel.noise_variance_dbm,
                k,
                scheme: scheme.to_string(),
                epsilon: tp.avg_blep(),
                avg_aoi_ms,
                avg_paoi_ms,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaoiDistRow {
    pub x_ms: f64,
    pub pdf: f64,
    pub cdf: f64,
    pub violation: f64,
}

/// PAoI density, CDF and tail on `[0, 2ζ]` in steps of 0.05 ms, at the
/// configured link.
pub fn paoi_dist(cfg: &ExperimentConfig) -> CliResult<Vec<PaoiDistRow>> {
    let tp = nr_traffic(cfg, cfg.link.transmit_power_dbm, cfg.link.connections)?;
    let steps = (2.0 * cfg.constraints.paoi_threshold_ms / 0.05).round() as usize;
    Ok((0..=steps)
        .map(|i| {
            let x = i as f64 * 0.05;
            PaoiDistRow {
                x_ms: x,
                pdf: paoi_pdf(x, &tp),
                cdf: paoi_cdf(x, &tp),
                violation: paoi_violation(x, &tp),
            }
        })
        .collect())
}

fn nr_traffic(cfg: &ExperimentConfig, pt: f64, k: u32) -> CliResult<TrafficParams> {
    Ok(TrafficParams::for_scheme(
        Scheme::Nr,
        cfg.traffic.arrival_rate,
        &cfg.fbl()?,
        &cfg.budget(pt, k)?,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub pt_dbm: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub scheme: String,
    pub seed: u64,
    pub stream: u64,
    pub epsilon: f64,
    pub avg_aoi_sim: f64,
    pub avg_aoi_theory: f64,
    pub avg_paoi_sim: f64,
    pub avg_paoi_theory: f64,
    pub zeta_ms: f64,
    pub violation_sim: f64,
    pub violation_ci_low: f64,
    pub violation_ci_high: f64,
    /// Only defined for NR.
    pub violation_theory: Option<f64>,
    pub deliveries: u64,
    pub drops: u64,
    pub failures: u64,
    pub low_confidence: bool,
}

/// Analytic counterpart of a simulation, honouring a forced success
/// probability (per packet, attempt or repetition as in the simulator).
pub fn theory_for(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    pt: f64,
    k: u32,
) -> CliResult<TrafficParams> {
    let fbl = cfg.fbl()?;
    match cfg.simulation.forced_success_prob {
        None => Ok(TrafficParams::for_scheme(
            scheme,
            cfg.traffic.arrival_rate,
            &fbl,
            &cfg.budget(pt, k)?,
        )?),
        Some(p) => {
            let count = if scheme == Scheme::Kr { k } else { 1 };
            Ok(TrafficParams::new(
                cfg.traffic.arrival_rate,
                fbl.service_time_ms(),
                1.0 - p,
                count,
            )?)
        }
    }
}

pub fn sim_row(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    pt: f64,
    k: u32,
    stream: u64,
) -> CliResult<(SimRow, SimResult)> {
    let r = run_sim(&cfg.sim_config(scheme, pt, k, stream)?)?;
    let tp = theory_for(cfg, scheme, pt, k)?;
    let (aoi_t, paoi_t) = analytic_metrics(scheme, &tp)?;
    let zeta = cfg.constraints.paoi_threshold_ms;
    let v = empirical_violation(&r, zeta);
    let row = SimRow {
        pt_dbm: pt,
        k,
        scheme: scheme.to_string(),
        seed: r.seed,
        stream: r.stream,
        epsilon: tp.avg_blep(),
        avg_aoi_sim: r.time_avg_aoi_ms,
        avg_aoi_theory: aoi_t,
        avg_paoi_sim: r.mean_paoi_ms,
        avg_paoi_theory: paoi_t,
        zeta_ms: zeta,
        violation_sim: v.freq,
        violation_ci_low: v.ci_low,
        violation_ci_high: v.ci_high,
        violation_theory: (scheme == Scheme::Nr).then(|| paoi_violation(zeta, &tp)),
        deliveries: r.successes,
        drops: r.drops,
        failures: r.failures,
        low_confidence: r.low_confidence,
    };
    Ok((row, r))
}

/// Monte Carlo over the `P_t × K` sweep with the configured scheme; point
/// `i` of the grid uses stream `i`.
pub fn simulate(cfg: &ExperimentConfig) -> CliResult<Vec<SimRow>> {
    require_nonempty(&cfg.sweep.pt_dbm, "transmit power")?;
    require_nonempty(&cfg.sweep.k, "K")?;
    let scheme = cfg.scheme()?;
    grid(&cfg.sweep.pt_dbm, &cfg.sweep.k)
        .into_par_iter()
        .enumerate()
        .map(|(i, (pt, k))| sim_row(cfg, scheme, pt, k, i as u64).map(|(row, _)| row))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KRow {
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "epsilon_K")]
    pub epsilon_k: f64,
    pub avg_paoi_ms: f64,
    pub violation: f64,
    pub eta: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub exhaustive: OptimizerResult,
    pub dinkelbach: OptimizerResult,
    pub report: String,
}

impl OptimizeOutcome {
    pub fn agree(&self) -> bool {
        self.exhaustive.k_opt == self.dinkelbach.k_opt
            || (self.exhaustive.eta_opt - self.dinkelbach.eta_opt).abs() <= 1e-9
    }

    pub fn table(&self) -> Vec<KRow> {
        self.exhaustive
            .table
            .iter()
            .map(|r| KRow {
                k: r.k,
                epsilon_k: r.avg_blep,
                avg_paoi_ms: r.avg_paoi_ms,
                violation: r.violation,
                eta: r.eta,
                feasible: r.feasible,
            })
            .collect()
    }
}

pub fn optimize(cfg: &ExperimentConfig) -> CliResult<OptimizeOutcome> {
    let pt = cfg.link.transmit_power_dbm;
    let p = cfg.optimizer_params(pt)?;
    let exhaustive = optimize_exhaustive(&p)?;
    let dinkelbach = optimize_dinkelbach(&p)?;

    let mut s = String::new();
    let g = p.mean_branch_snr();
    let _ = writeln!(
        s,
        "transmit power {pt} dBm, noise {} dBm, mean branch SNR {g:.4} ({:.2} dB)",
        p.noise_variance_dbm,
        linear_to_db(g)
    );
    let _ = writeln!(
        s,
        "constraints: P_max {} dBm (K <= {}), Pr_max {} at zeta {} ms (eps_K <= {:.6})",
        p.max_total_power_dbm,
        p.power_limited_k(),
        p.max_violation,
        p.paoi_threshold_ms,
        p.blep_bound()
    );
    match dinkelbach.feasible_range {
        Some((lo, hi)) => {
            let _ = writeln!(s, "feasible range: [{lo}, {hi}]");
        }
        None => {
            let _ = writeln!(s, "feasible range: empty; comparing K in {{1, 2}} only");
        }
    }
    let _ = writeln!(
        s,
        "exhaustive: k_opt = {}, eta = {:.6e}",
        exhaustive.k_opt, exhaustive.eta_opt
    );
    let _ = write!(
        s,
        "dinkelbach: k_opt = {}, eta = {:.6e}, iterations = {}",
        dinkelbach.k_opt, dinkelbach.eta_opt, dinkelbach.iterations
    );
    if let Some(r) = &dinkelbach.relaxed {
        let _ = write!(
            s,
            ", relaxed K* = {:.4} (eta {:.6e}, residual {:.1e})",
            r.k, r.eta, r.residual
        );
    }
    s.push('\n');
    let mut out = OptimizeOutcome {
        exhaustive,
        dinkelbach,
        report: s,
    };
    let _ = writeln!(
        out.report,
        "agreement: {}",
        if out.agree() { "yes" } else { "NO" }
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub k_opt: u32,
    pub paoi_violation_theory: f64,
    pub paoi_violation_sim: ViolationEstimate,
    pub state_threshold: f64,
    pub state_violation: ViolationEstimate,
    pub gain_residual: f64,
    pub trace: StateTrace,
    pub report: String,
}

/// Optimised K at the configured power, one queue simulation with its age
/// trace, and the plant driven by that trace.
pub fn control(cfg: &ExperimentConfig) -> CliResult<ControlOutcome> {
    let pt = cfg.link.transmit_power_dbm;
    let opt = optimize_exhaustive(&cfg.optimizer_params(pt)?)?;
    let k = opt.k_opt;

    let mut sim_cfg = cfg.sim_config(Scheme::Nr, pt, k, 0)?;
    sim_cfg.record_trace = true;
    let sim = run_sim(&sim_cfg)?;
    let zeta = cfg.constraints.paoi_threshold_ms;
    let tp = theory_for(cfg, Scheme::Nr, pt, k)?;
    let paoi_theory = paoi_violation(zeta, &tp);
    let paoi_sim = empirical_violation(&sim, zeta);

    let plant = cfg.plant()?;
    let dt = plant.timestep_ms();
    let age = sim.trace.as_deref().unwrap_or_default();
    let covered = match (age.first(), age.last()) {
        (Some(f), Some(l)) => ((l.t_end - f.t_start) / dt).floor() as usize + 1,
        _ => return Err(Error::Numeric("simulation produced no deliveries".into()).into()),
    };
    let n = covered.min(cfg.plant.max_steps);
    let steps = aoi_trace_to_steps(age, dt, n)?;
    let trace = simulate_closed_loop(&plant, &steps, cfg.seed, n)?;
    let hits = trace.violated.iter().filter(|&&v| v).count();
    let (lo, hi) = wilson_interval(hits, n, WILSON_Z95);
    let state = ViolationEstimate {
        freq: hits as f64 / n as f64,
        ci_low: lo,
        ci_high: hi,
        samples: n,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "transmit power {pt} dBm, optimised K = {k} (eta {:.6e})",
        opt.eta_opt
    );
    let _ = writeln!(s, "average block error probability {:.6e}", tp.avg_blep());
    let _ = writeln!(
        s,
        "PAoI violation at zeta {zeta} ms: analytic {paoi_theory:.6e}, simulated {:.6e} [{:.6e}, {:.6e}] over {} peaks (Pr_max {})",
        paoi_sim.freq, paoi_sim.ci_low, paoi_sim.ci_high, paoi_sim.samples, cfg.constraints.max_violation
    );
    let _ = writeln!(
        s,
        "plant: timestep {dt} ms, {n} steps, gain {:?}, residual {:.6e}",
        plant.control_gain().as_slice(),
        plant.gain_residual()
    );
    let _ = writeln!(
        s,
        "state violation above {:.6e}: {:.6e} [{:.6e}, {:.6e}] ({hits} steps)",
        plant.state_threshold(),
        state.freq,
        state.ci_low,
        state.ci_high
    );
    Ok(ControlOutcome {
        k_opt: k,
        paoi_violation_theory: paoi_theory,
        paoi_violation_sim: paoi_sim,
        state_threshold: plant.state_threshold(),
        state_violation: state,
        gain_residual: plant.gain_residual(),
        trace,
        report: s,
    })
}

/// State trace as CSV: `n, x_1..x_d, xhat_1..xhat_d, aoi_steps, violated`.
pub fn state_trace_csv(trace: &StateTrace) -> CliResult<Vec<u8>> {
    let d = trace.dim;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["n".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend((1..=d).map(|i| format!("xhat_{i}")));
    header.push("aoi_steps".into());
    header.push("violated".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for n in 0..trace.len() {
        rec.clear();
        rec.push(n.to_string());
        rec.extend(trace.state(n).iter().map(f64::to_string));
        rec.extend(trace.estimate(n).iter().map(f64::to_string));
        rec.push(trace.aoi_steps[n].to_string());
        rec.push(trace.violated[n].to_string());
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io("CSV buffer".into(), e.into_error()))
}
