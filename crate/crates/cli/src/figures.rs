//! Data behind each figure. Every figure is a single CSV whose schema is
//! listed in the README; simulated series use the master seed with one
//! stream per point, numbered in row order.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use wncs_aoi::aoi::{paoi_cdf, paoi_pdf, paoi_violation, Scheme};
use wncs_aoi::channel::dbm_to_linear;
use wncs_aoi::optimizer::{
    k_table, optimize_dinkelbach, optimize_exhaustive, snr_threshold, OptimizerParams,
};
use wncs_aoi::sim::{empirical_violation, simulate as run_sim};
use wncs_aoi::Error;

use crate::commands::{analytic_metrics, csv_bytes, theory_for};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FigureId {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
}

impl FigureId {
    pub const ALL: [FigureId; 8] = [
        FigureId::Fig3,
        FigureId::Fig4,
        FigureId::Fig5,
        FigureId::Fig6,
        FigureId::Fig7,
        FigureId::Fig8,
        FigureId::Fig9,
        FigureId::Fig10,
    ];
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = FigureId::ALL
            .iter()
            .position(|x| x == self)
            .expect("listed")
            + 3;
        write!(f, "fig{n}")
    }
}

impl FromStr for FigureId {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        FigureId::ALL
            .into_iter()
            .find(|id| id.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| CliError::Usage(format!("unknown figure '{s}'; expected fig3..fig10")))
    }
}

pub fn figure_csv(cfg: &ExperimentConfig, id: FigureId) -> CliResult<Vec<u8>> {
    match id {
        FigureId::Fig3 => csv_bytes(&fig3(cfg)?),
        FigureId::Fig4 => csv_bytes(&fig4(cfg)?),
        FigureId::Fig5 => csv_bytes(&fig5(cfg)?),
        FigureId::Fig6 => csv_bytes(&fig6(cfg)?),
        FigureId::Fig7 => csv_bytes(&fig7(cfg)?),
        FigureId::Fig8 => csv_bytes(&fig8(cfg)?),
        FigureId::Fig9 => csv_bytes(&fig9(cfg)?),
        FigureId::Fig10 => csv_bytes(&fig10(cfg)?),
    }
}

/// Transmit powers for the per-K figures.
const POWERS: [f64; 3] = [30.0, 35.0, 40.0];
const MAX_K: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig3Row {
    pub pt_dbm: f64,
    pub scheme: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub epsilon: f64,
    pub avg_aoi_analytic: f64,
    pub avg_aoi_sim: f64,
    pub avg_paoi_analytic: f64,
    pub avg_paoi_sim: f64,
}

const FIG3_SERIES: [(Scheme, u32); 6] = [
    (Scheme::Nr, 1),
    (Scheme::Nr, 2),
    (Scheme::Nr, 4),
    (Scheme::Arq, 1),
    (Scheme::Kr, 2),
    (Scheme::Kr, 4),
];

/// Average AoI and PAoI against transmit power for each scheme.
pub fn fig3(cfg: &ExperimentConfig) -> CliResult<Vec<Fig3Row>> {
    let points: Vec<(f64, Scheme, u32)> = cfg
        .sweep
        .pt_dbm
        .iter()
        .flat_map(|&pt| FIG3_SERIES.iter().map(move |&(s, k)| (pt, s, k)))
        .collect();
    points
        .into_par_iter()
        .enumerate()
        .map(|(i, (pt, scheme, k))| {
            let r = run_sim(&cfg.sim_config(scheme, pt, k, i as u64)?)?;
            let tp = theory_for(cfg, scheme, pt, k)?;
            let (aoi, paoi) = analytic_metrics(scheme, &tp)?;
            Ok(Fig3Row {
                pt_dbm: pt,
                scheme: scheme.to_string(),
                k,
                epsilon: tp.avg_blep(),
                avg_aoi_analytic: aoi,
                avg_aoi_sim: r.time_avg_aoi_ms,
                avg_paoi_analytic: paoi,
                avg_paoi_sim: r.mean_paoi_ms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig4Row {
    pub x: f64,
    pub pdf_analytic: f64,
    pub cdf_analytic: f64,
    pub pdf_empirical: f64,
    pub cdf_empirical: f64,
}

const FIG4_BIN_MS: f64 = 0.1;

/// PAoI density and CDF at the configured link; the empirical density is a
/// histogram with bins of 0.1 ms centred on `x`.
pub fn fig4(cfg: &ExperimentConfig) -> CliResult<Vec<Fig4Row>> {
    let (pt, k) = (cfg.link.transmit_power_dbm, cfg.link.connections);
    let r = run_sim(&cfg.sim_config(Scheme::Nr, pt, k, 0)?)?;
    let tp = theory_for(cfg, Scheme::Nr, pt, k)?;
    let mut samples = r.paoi_samples.clone();
    samples.sort_by(f64::total_cmp);
    let n = samples.len().max(1) as f64;
    let count_le = |x: f64| samples.partition_point(|&s| s <= x);
    let count_lt = |x: f64| samples.partition_point(|&s| s < x);
    let bins = (2.0 * cfg.constraints.paoi_threshold_ms / FIG4_BIN_MS).round() as usize;
    Ok((0..=bins)
        .map(|i| {
            let x = i as f64 * FIG4_BIN_MS;
            let half = FIG4_BIN_MS / 2.0;
            let in_bin = count_lt(x + half) - count_lt(x - half);
            Fig4Row {
                x,
                pdf_analytic: paoi_pdf(x, &tp),
                cdf_analytic: paoi_cdf(x, &tp),
                pdf_empirical: in_bin as f64 / (n * FIG4_BIN_MS),
                cdf_empirical: count_le(x) as f64 / n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig5Row {
    pub pt_dbm: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub zeta_ms: f64,
    pub epsilon: f64,
    pub violation_analytic: f64,
    pub violation_sim: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

const FIG5_K: [u32; 3] = [1, 2, 4];

/// PAoI violation probability against transmit power for each threshold
/// in `sweep.zeta_ms`; one simulation per `(P_t, K)` serves every threshold.
pub fn fig5(cfg: &ExperimentConfig) -> CliResult<Vec<Fig5Row>> {
    let points: Vec<(f64, u32)> = cfg
        .sweep
        .pt_dbm
        .iter()
        .flat_map(|&pt| FIG5_K.map(|k| (pt, k)))
        .collect();
    let per_point: Vec<CliResult<Vec<Fig5Row>>> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, (pt, k))| {
            let r = run_sim(&cfg.sim_config(Scheme::Nr, pt, k, i as u64)?)?;
            let tp = theory_for(cfg, Scheme::Nr, pt, k)?;
            Ok(cfg
                .sweep
                .zeta_ms
                .iter()
                .map(|&zeta| {
                    let v = empirical_violation(&r, zeta);
                    Fig5Row {
                        pt_dbm: pt,
                        k,
                        zeta_ms: zeta,
                        epsilon: tp.avg_blep(),
                        violation_analytic: paoi_violation(zeta, &tp),
                        violation_sim: v.freq,
                        ci_low: v.ci_low,
                        ci_high: v.ci_high,
                    }
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for chunk in per_point {
        rows.extend(chunk?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig6Row {
    pub pt_dbm: f64,
    pub scheme: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub epsilon: f64,
    pub avg_paoi_analytic: f64,
    pub avg_paoi_sim: f64,
}

/// Average PAoI against the number of connections (NR) or repetitions (KR).
pub fn fig6(cfg: &ExperimentConfig) -> CliResult<Vec<Fig6Row>> {
    let points: Vec<(f64, Scheme, u32)> = POWERS[..2]
        .iter()
        .flat_map(|&pt| {
            [Scheme::Nr, Scheme::Kr]
                .into_iter()
                .flat_map(move |s| (1..=MAX_K).map(move |k| (pt, s, k)))
        })
        .collect();
    points
        .into_par_iter()
        .enumerate()
        .map(|(i, (pt, scheme, k))| {
            let r = run_sim(&cfg.sim_config(scheme, pt, k, i as u64)?)?;
            let tp = theory_for(cfg, scheme, pt, k)?;
            Ok(Fig6Row {
                pt_dbm: pt,
                scheme: scheme.to_string(),
                k,
                epsilon: tp.avg_blep(),
                avg_paoi_analytic: analytic_metrics(scheme, &tp)?.1,
                avg_paoi_sim: r.mean_paoi_ms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig7Row {
    pub pt_dbm: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub avg_paoi_ms: f64,
    /// Delivered bits per ms per mW of total transmit power.
    pub energy_efficiency: f64,
    pub eta: f64,
}

/// Energy efficiency against average PAoI as K varies.
pub fn fig7(cfg: &ExperimentConfig) -> CliResult<Vec<Fig7Row>> {
    let fbl = cfg.fbl()?;
    let mut rows = Vec::new();
    for pt in POWERS {
        for k in 1..=MAX_K {
            let tp = theory_for(cfg, Scheme::Nr, pt, k)?;
            let (_, paoi) = analytic_metrics(Scheme::Nr, &tp)?;
            let ee = f64::from(fbl.info_bits()) * (1.0 - tp.avg_blep())
                / (fbl.service_time_ms() * f64::from(k) * dbm_to_linear(pt));
            rows.push(Fig7Row {
                pt_dbm: pt,
                k,
                avg_paoi_ms: paoi,
                energy_efficiency: ee,
                eta: ee / paoi,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig8Row {
    pub pt_dbm: f64,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "epsilon_K")]
    pub epsilon_k: f64,
    pub avg_paoi_ms: f64,
    pub violation: f64,
    pub eta: f64,
    pub feasible: bool,
}

/// EE-PAoI ratio against K up to the power limit.
pub fn fig8(cfg: &ExperimentConfig) -> CliResult<Vec<Fig8Row>> {
    let mut rows = Vec::new();
    for pt in POWERS {
        for r in k_table(&cfg.optimizer_params(pt)?)? {
            rows.push(Fig8Row {
                pt_dbm: pt,
                k: r.k,
                epsilon_k: r.avg_blep,
                avg_paoi_ms: r.avg_paoi_ms,
                violation: r.violation,
                eta: r.eta,
                feasible: r.feasible,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig9Row {
    pub pt_dbm: f64,
    pub gamma_bar_db: f64,
    pub eta_single: f64,
    pub k_opt: Option<u32>,
    pub eta_opt: Option<f64>,
    pub gain: Option<f64>,
    pub k_opt_unconstrained: u32,
    pub eta_opt_unconstrained: f64,
    pub gain_unconstrained: f64,
}

/// Optimised EE-PAoI ratio against transmit power, with and without the
/// violation constraint, and its gain over a single connection.
pub fn fig9(cfg: &ExperimentConfig) -> CliResult<Vec<Fig9Row>> {
    cfg.sweep
        .pt_dbm
        .par_iter()
        .map(|&pt| {
            let p = cfg.optimizer_params(pt)?;
            let single = wncs_aoi::optimizer::ee_paoi_ratio(1, &p)?;
            let constrained = optional(optimize_exhaustive(&p))?;
            let free = optimize_exhaustive(&OptimizerParams {
                max_violation: 1.0,
                ..p
            })?;
            Ok(Fig9Row {
                pt_dbm: pt,
                gamma_bar_db: pt - p.noise_variance_dbm,
                eta_single: single,
                k_opt: constrained.as_ref().map(|r| r.k_opt),
                eta_opt: constrained.as_ref().map(|r| r.eta_opt),
                gain: constrained.as_ref().map(|r| r.eta_opt / single),
                k_opt_unconstrained: free.k_opt,
                eta_opt_unconstrained: free.eta_opt,
                gain_unconstrained: free.eta_opt / single,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig10Row {
    pub pt_dbm: f64,
    pub gamma_bar_db: f64,
    pub k_opt: Option<u32>,
    pub k_opt_dinkelbach: Option<u32>,
    pub k_opt_unconstrained: u32,
    pub threshold_db: f64,
    pub above_threshold: bool,
}

/// Optimal K against transmit power, with the single-connection SNR
/// threshold for reference.
pub fn fig10(cfg: &ExperimentConfig) -> CliResult<Vec<Fig10Row>> {
    let thr_db = 10.0 * snr_threshold(&cfg.fbl()?).log10();
    cfg.sweep
        .pt_dbm
        .par_iter()
        .map(|&pt| {
            let p = cfg.optimizer_params(pt)?;
            let g_db = pt - p.noise_variance_dbm;
            Ok(Fig10Row {
                pt_dbm: pt,
                gamma_bar_db: g_db,
                k_opt: optional(optimize_exhaustive(&p))?.map(|r| r.k_opt),
                k_opt_dinkelbach: optional(optimize_dinkelbach(&p))?.map(|r| r.k_opt),
                k_opt_unconstrained: optimize_exhaustive(&OptimizerParams {
                    max_violation: 1.0,
                    ..p
                })?
                .k_opt,
                threshold_db: thr_db,
                above_threshold: g_db > thr_db,
            })
        })
        .collect()
}

/// Infeasible points become empty cells; other failures propagate.
fn optional<T>(r: wncs_aoi::Result<T>) -> CliResult<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
