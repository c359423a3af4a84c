//! Connection-count selection: the EE-PAoI ratio, its feasible region, and
//! two solvers for the integer problem (exhaustive search and Dinkelbach
//! iteration on the continuous relaxation).

use log::{info, warn};
use rayon::prelude::*;

use crate::aoi::{metrics_nr, paoi_violation, TrafficParams};
use crate::channel::{avg_blep_mrc, avg_blep_mrc_real, dbm_to_linear, FblConfig, LinkBudget};
use crate::error::{domain, Constraint, Error, Result};

/// Stop when `v(K*) - λ_D g(K*)` falls below this.
pub const DINKELBACH_TOL: f64 = 1e-9;
pub const DINKELBACH_MAX_ITER: u32 = 100;
const GOLDEN_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    /// Packets per ms.
    pub arrival_rate: f64,
    pub fbl: FblConfig,
    pub noise_variance_dbm: f64,
    pub transmit_power_dbm: f64,
    pub max_total_power_dbm: f64,
    /// `Pr_max`; 1 disables the violation constraint.
    pub max_violation: f64,
    pub paoi_threshold_ms: f64,
    pub k_search_cap: u32,
}

impl OptimizerParams {
    /// Reference constraints with the given per-link power and noise level.
    pub fn reference(transmit_power_dbm: f64, noise_variance_dbm: f64) -> Self {
        Self {
            arrival_rate: 1.0,
            fbl: FblConfig::reference(),
            noise_variance_dbm,
            transmit_power_dbm,
            max_total_power_dbm: 50.0,
            max_violation: 1e-3,
            paoi_threshold_ms: 8.0,
            k_search_cap: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0) {
            return domain(format!(
                "arrival rate must be positive, got {}",
                self.arrival_rate
            ));
        }
        if self.max_total_power_dbm < self.transmit_power_dbm {
            return domain("maximum total power must be at least the per-link power");
        }
        if !(self.max_violation > 0.0 && self.max_violation <= 1.0) {
            return domain(format!(
                "Pr_max must lie in (0, 1], got {}",
                self.max_violation
            ));
        }
        if !(self.paoi_threshold_ms > 2.0 * self.fbl.service_time_ms()) {
            return domain(format!(
                "PAoI threshold {} ms must exceed 2M = {} ms",
                self.paoi_threshold_ms,
                2.0 * self.fbl.service_time_ms()
            ));
        }
        if self.k_search_cap == 0 {
            return domain("K search cap must be >= 1");
        }
        Ok(())
    }

    pub fn mean_branch_snr(&self) -> f64 {
        dbm_to_linear(self.transmit_power_dbm - self.noise_variance_dbm)
    }

    pub fn budget(&self, k: u32) -> Result<LinkBudget> {
        LinkBudget::new(self.transmit_power_dbm, self.noise_variance_dbm, k)
    }

    pub fn avg_blep(&self, k: u32) -> Result<f64> {
        Ok(avg_blep_mrc(&self.budget(k)?, &self.fbl))
    }

    fn traffic(&self, avg_blep: f64) -> Result<TrafficParams> {
        TrafficParams::new(self.arrival_rate, self.fbl.service_time_ms(), avg_blep, 1)
    }

    /// Largest `ε̄_K` meeting the violation constraint,
    /// `1 - ln(Pr_max) / (λ(2M - ζ))`.
    pub fn blep_bound(&self) -> f64 {
        let m = self.fbl.service_time_ms();
        1.0 - self.max_violation.ln() / (self.arrival_rate * (2.0 * m - self.paoi_threshold_ms))
    }

    /// `floor(P_max / P_t)` in linear units, before the search cap.
    pub fn power_limited_k(&self) -> u32 {
        let ratio = dbm_to_linear(self.max_total_power_dbm - self.transmit_power_dbm);
        (ratio + 1e-9).floor().min(f64::from(u32::MAX)) as u32
    }

    fn effective_k_max(&self) -> u32 {
        let k = self.power_limited_k();
        if k > self.k_search_cap {
            warn!(
                "power allows K = {k}; search is capped at {}",
                self.k_search_cap
            );
        }
        k.min(self.k_search_cap)
    }
}

/// EE-PAoI ratio `L(1-ε̄_K)² / (M K P_t (1/λ + M + M(1-ε̄_K)))`, with `P_t`
/// in mW.
pub fn ee_paoi_ratio(k: u32, p: &OptimizerParams) -> Result<f64> {
    let eps = p.avg_blep(k)?;
    Ok(ratio_from_blep(k, eps, p))
}

fn ratio_from_blep(k: u32, eps: f64, p: &OptimizerParams) -> f64 {
    let m = p.fbl.service_time_ms();
    let pt = dbm_to_linear(p.transmit_power_dbm);
    let s = 1.0 - eps;
    f64::from(p.fbl.info_bits()) * s * s
        / (m * f64::from(k) * pt * (1.0 / p.arrival_rate + m + m * s))
}

/// Integer feasible interval `[K_min, K_max]` of the CLFP path.
///
/// `K_min` is at least 3; the violation part is found by scanning `K`
/// upward for the first `ε̄_K` under [`OptimizerParams::blep_bound`].
pub fn feasible_range(p: &OptimizerParams) -> Result<(u32, u32)> {
    p.validate()?;
    let k_max = p.effective_k_max();
    let bound = p.blep_bound();
    let mut k_violation = None;
    for k in 1..=p.k_search_cap {
        if p.avg_blep(k)? <= bound {
            k_violation = Some(k);
            break;
        }
    }
    let Some(k_violation) = k_violation else {
        return Err(Error::Infeasible {
            constraint: Constraint::Violation,
            detail: format!("no K <= {} reaches ε̄_K <= {bound:.6}", p.k_search_cap),
        });
    };
    let k_min = k_violation.max(3);
    if k_min > k_max {
        let constraint = if k_violation > k_max {
            Constraint::Violation
        } else {
            Constraint::TotalPower
        };
        return Err(Error::Infeasible {
            constraint,
            detail: format!("K_min = {k_min} exceeds K_max = {k_max}"),
        });
    }
    Ok((k_min, k_max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KEvaluation {
    pub k: u32,
    pub avg_blep: f64,
    pub avg_paoi_ms: f64,
    pub violation: f64,
    pub eta: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dinkelbach,
    Exhaustive,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dinkelbach => "dinkelbach",
            Method::Exhaustive => "exhaustive",
        })
    }
}

/// Optimum of the continuous relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedOptimum {
    pub k: f64,
    pub eta: f64,
    /// Final `v(K*) - λ_D g(K*)`.
    pub residual: f64,
    /// Inner maximisations performed, including the final one.
    pub iterations: u32,
    /// `λ_D` after each update.
    pub lambda_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub k_opt: u32,
    pub eta_opt: f64,
    /// `None` when the CLFP interval is empty and only K ∈ {1, 2} compete.
    pub feasible_range: Option<(u32, u32)>,
    pub table: Vec<KEvaluation>,
    pub method: Method,
    pub iterations: u32,
    pub relaxed: Option<RelaxedOptimum>,
}

pub fn evaluate_k(k: u32, p: &OptimizerParams) -> Result<KEvaluation> {
    let eps = p.avg_blep(k)?;
    let tp = p.traffic(eps)?;
    let avg_paoi_ms = if eps < 1.0 {
        metrics_nr(&tp)?.avg_paoi_ms
    } else {
        f64::INFINITY
    };
    Ok(KEvaluation {
        k,
        avg_blep: eps,
        avg_paoi_ms,
        violation: paoi_violation(p.paoi_threshold_ms, &tp),
        eta: ratio_from_blep(k, eps, p),
        feasible: k <= p.power_limited_k() && eps <= p.blep_bound(),
    })
}

/// Per-K table for `K = 1..=max(2, K_max)` (capped), evaluated in parallel and
/// returned in K order.
pub fn k_table(p: &OptimizerParams) -> Result<Vec<KEvaluation>> {
    p.validate()?;
    let upper = p.effective_k_max().max(2);
    (1..=upper)
        .into_par_iter()
        .map(|k| evaluate_k(k, p))
        .collect()
}

/// Argmax of η over feasible rows; ties go to the smaller K.
fn best_of<'a>(rows: impl IntoIterator<Item = &'a KEvaluation>) -> Option<KEvaluation> {
    let mut best: Option<KEvaluation> = None;
    for row in rows.into_iter().filter(|r| r.feasible) {
        match best {
            Some(b) if row.eta < b.eta || (row.eta == b.eta && row.k >= b.k) => {}
            _ => best = Some(*row),
        }
    }
    best
}

fn no_feasible_k(p: &OptimizerParams, table: &[KEvaluation]) -> Error {
    let power_ok = table.iter().any(|r| r.k <= p.power_limited_k() && r.k <= 2);
    let constraint = if power_ok {
        Constraint::Violation
    } else {
        Constraint::TotalPower
    };
    Error::Infeasible {
        constraint,
        detail: "no connection count satisfies (C1) and (C2)".into(),
    }
}

/// Exact integer search over `{1, 2} ∪ [K_min, K_max]`.
pub fn optimize_exhaustive(p: &OptimizerParams) -> Result<OptimizerResult> {
    let table = k_table(p)?;
    let range = match feasible_range(p) {
        Ok(r) => Some(r),
        Err(Error::Infeasible { .. }) => None,
        Err(e) => return Err(e),
    };
    let in_candidates = |k: u32| k <= 2 || range.is_some_and(|(lo, hi)| (lo..=hi).contains(&k));
    let best = best_of(table.iter().filter(|r| in_candidates(r.k)))
        .ok_or_else(|| no_feasible_k(p, &table))?;
    Ok(OptimizerResult {
        k_opt: best.k,
        eta_opt: best.eta,
        feasible_range: range,
        table,
        method: Method::Exhaustive,
        iterations: 0,
        relaxed: None,
    })
}

/// Relaxed objective pieces `v(K) = (1-ε̄_K)/K` and `g(K) = Ā_K`.
#[derive(Debug, Clone, Copy)]
pub struct Relaxation<'a> {
    p: &'a OptimizerParams,
    mean_snr: f64,
}

impl<'a> Relaxation<'a> {
    pub fn new(p: &'a OptimizerParams) -> Self {
        Self {
            p,
            mean_snr: p.mean_branch_snr(),
        }
    }

    /// `(v(K), g(K))` at real `K >= 1`.
    pub fn parts(&self, k: f64) -> Result<(f64, f64)> {
        let eps = avg_blep_mrc_real(k, self.mean_snr, &self.p.fbl)?;
        let m = self.p.fbl.service_time_ms();
        let s = 1.0 - eps;
        let g = if s > 0.0 {
            (1.0 / self.p.arrival_rate + m) / s + m
        } else {
            f64::INFINITY
        };
        Ok((s / k, g))
    }

    /// η at real `K`, i.e. `v L / (g M P_t)`.
    pub fn eta(&self, k: f64) -> Result<f64> {
        let (v, g) = self.parts(k)?;
        let scale = f64::from(self.p.fbl.info_bits())
            / (self.p.fbl.service_time_ms() * dbm_to_linear(self.p.transmit_power_dbm));
        Ok(scale * v / g)
    }
}

/// Maximiser of a unimodal function on `[lo, hi]` by golden-section search,
/// compared against both endpoints.
fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64) -> Result<(f64, f64)> {
    if hi - lo <= GOLDEN_TOL {
        let v = f(lo)?;
        return Ok((lo, v));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

/// Dinkelbach iteration on the relaxed problem over `[K_min, K_max]`,
/// followed by rounding and the comparison against `K ∈ {1, 2}`.
pub fn optimize_dinkelbach(p: &OptimizerParams) -> Result<OptimizerResult> {
    let table = k_table(p)?;
    let range = match feasible_range(p) {
        Ok(r) => r,
        Err(Error::Infeasible { constraint, detail }) => {
            info!("CLFP interval empty ({constraint}: {detail}); comparing K = 1, 2 only");
            let best = best_of(table.iter().filter(|r| r.k <= 2))
                .ok_or_else(|| no_feasible_k(p, &table))?;
            return Ok(OptimizerResult {
                k_opt: best.k,
                eta_opt: best.eta,
                feasible_range: None,
                table,
                method: Method::Dinkelbach,
                iterations: 0,
                relaxed: None,
            });
        }
        Err(e) => return Err(e),
    };

    let relaxed = dinkelbach(p, range)?;
    let (k_lo, k_hi) = range;
    let floor = (relaxed.k.floor() as u32).clamp(k_lo, k_hi);
    let ceil = (relaxed.k.ceil() as u32).clamp(k_lo, k_hi);
    let candidates = [1, 2, floor, ceil];
    let best = best_of(table.iter().filter(|r| candidates.contains(&r.k)))
        .ok_or_else(|| no_feasible_k(p, &table))?;
    Ok(OptimizerResult {
        k_opt: best.k,
        eta_opt: best.eta,
        feasible_range: Some(range),
        table,
        method: Method::Dinkelbach,
        iterations: relaxed.iterations,
        relaxed: Some(relaxed),
    })
}

/// The Dinkelbach loop proper: `K* = argmax v(K) - λ_D g(K)`, then
/// `λ_D = v(K*)/g(K*)`, until the maximum of `H` vanishes.
pub fn dinkelbach(p: &OptimizerParams, (k_min, k_max): (u32, u32)) -> Result<RelaxedOptimum> {
    let rel = Relaxation::new(p);
    let (lo, hi) = (f64::from(k_min), f64::from(k_max));
    let (v0, g0) = rel.parts(lo)?;
    let mut lambda = v0 / g0;
    let mut lambda_trace = Vec::new();
    for iteration in 1..=DINKELBACH_MAX_ITER {
        let (k_star, h) = golden_max(
            |k| {
                let (v, g) = rel.parts(k)?;
                Ok(v - lambda * g)
            },
            lo,
            hi,
        )?;
        if h <= DINKELBACH_TOL {
            let eta = rel.eta(k_star)?;
            return Ok(RelaxedOptimum {
                k: k_star,
                eta,
                residual: h,
                iterations: iteration,
                lambda_trace,
            });
        }
        let (v, g) = rel.parts(k_star)?;
        lambda = v / g;
        lambda_trace.push(lambda);
    }
    Err(Error::Numeric(format!(
        "Dinkelbach did not converge in {DINKELBACH_MAX_ITER} iterations; λ_D trace {lambda_trace:?}"
    )))
}

/// SNR above which a single connection maximises the EE-PAoI ratio,
/// `2e^R - 2` (linear).
pub fn snr_threshold(cfg: &FblConfig) -> f64 {
    2.0 * cfg.coding_rate().exp() - 2.0
}

/// EE-PAoI gain of K connections over one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePaoiGain {
    pub exact: f64,
    /// High-arrival-rate form `(1-ε̄_K)²(2-ε̄) / (K(1-ε̄)²(2-ε̄_K))`.
    pub high_rate: f64,
}

pub fn ee_paoi_gain(k: u32, p: &OptimizerParams) -> Result<EePaoiGain> {
    if k < 2 {
        return domain("EE-PAoI gain compares K >= 2 against a single connection");
    }
    let eps1 = p.avg_blep(1)?;
    let epsk = p.avg_blep(k)?;
    if eps1 >= 1.0 {
        return Err(Error::Divergent(eps1));
    }
    let (l, m, kf) = (p.arrival_rate, p.fbl.service_time_ms(), f64::from(k));
    let (s1, sk) = (1.0 - eps1, 1.0 - epsk);
    let base = 1.0 / l + m;
    let exact = (base * (sk / s1) + m * sk) / (kf * base * (s1 / sk) + kf * m * s1);
    let high_rate = sk * sk * (2.0 - eps1) / (kf * s1 * s1 * (2.0 - epsk));
    Ok(EePaoiGain { exact, high_rate })
}

/// Per-branch mean SNR (dB) where the exact gain of `k` connections crosses
/// one, by bisection on `[lo_db, hi_db]`.
pub fn gain_crossing_db(k: u32, p: &OptimizerParams, lo_db: f64, hi_db: f64) -> Result<f64> {
    let at = |db: f64| -> Result<f64> {
        let q = OptimizerParams {
            transmit_power_dbm: p.noise_variance_dbm + db,
            ..*p
        };
        Ok(ee_paoi_gain(k, &q)?.exact - 1.0)
    };
    let (mut a, mut b) = (lo_db, hi_db);
    let (fa, fb) = (at(a)?, at(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::Numeric(format!(
            "gain does not cross 1 on [{lo_db}, {hi_db}] dB"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if at(mid)?.signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Positive second differences of `v(K) = (1-ε̄_K)/K` on an integer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport {
    pub checked: usize,
    /// `(K, γ̄, second difference)` above the tolerance.
    pub violations: Vec<(u32, f64, f64)>,
}

pub fn concavity_audit(
    cfg: &FblConfig,
    mean_snrs: &[f64],
    k_lo: u32,
    k_hi: u32,
    tol: f64,
) -> Result<ConcavityReport> {
    let mut checked = 0;
    let mut violations = Vec::new();
    for &g in mean_snrs {
        let v = |k: u32| -> Result<f64> {
            let eps = avg_blep_mrc(&LinkBudget::from_mean_snr(g, k)?, cfg);
            Ok((1.0 - eps) / f64::from(k))
        };
        for k in k_lo.max(2)..k_hi {
            let d2 = v(k - 1)? - 2.0 * v(k)? + v(k + 1)?;
            checked += 1;
            if d2 > tol {
                violations.push((k, g, d2));
            }
        }
    }
    if !violations.is_empty() {
        warn!(
            "v(K) is not concave at {} of {checked} grid points",
            violations.len()
        );
    }
    Ok(ConcavityReport {
        checked,
        violations,
    })
}
