//! Closed-form age metrics for the three transmission schemes and the
//! distribution of the peak age under multi-connectivity.
//!
//! Schemes:
//! - [`Scheme::Nr`]: K synchronized links with MRC, no retransmission.
//! - [`Scheme::Arq`]: one link, retransmit until success.
//! - [`Scheme::Kr`]: one link, K blind repetitions.

use std::fmt;

use log::warn;

use crate::channel::{avg_blep_mrc, avg_blep_single, FblConfig, LinkBudget};
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Nr,
    Arq,
    Kr,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Nr => "NR",
            Scheme::Arq => "ARQ",
            Scheme::Kr => "KR",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nr" | "nr-mrc" | "mrc" => Ok(Scheme::Nr),
            "arq" => Ok(Scheme::Arq),
            "kr" | "k-repetition" | "repetition" => Ok(Scheme::Kr),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Arrival rate, service time and the average block error probability seen
/// by a scheme.
///
/// `avg_blep` is `ε̄_K` for NR and the single-link `ε̄` for ARQ and KR;
/// `count` is the number of connections (NR) or repetitions (KR).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    arrival_rate: f64,
    service_time_ms: f64,
    avg_blep: f64,
    count: u32,
}

impl TrafficParams {
    pub fn new(arrival_rate: f64, service_time_ms: f64, avg_blep: f64, count: u32) -> Result<Self> {
        if !(arrival_rate > 0.0) || !arrival_rate.is_finite() {
            return domain(format!("arrival rate must be positive, got {arrival_rate}"));
        }
        if !(service_time_ms > 0.0) || !service_time_ms.is_finite() {
            return domain(format!(
                "service time must be positive, got {service_time_ms}"
            ));
        }
        if !(0.0..=1.0).contains(&avg_blep) {
            return domain(format!(
                "block error probability must lie in [0, 1], got {avg_blep}"
            ));
        }
        if count == 0 {
            return domain("connection/repetition count must be >= 1");
        }
        if 1.0 / arrival_rate < service_time_ms {
            warn!(
                "mean inter-arrival time {:.4} ms is shorter than the service time {service_time_ms} ms",
                1.0 / arrival_rate
            );
        }
        Ok(Self {
            arrival_rate,
            service_time_ms,
            avg_blep,
            count,
        })
    }

    /// Parameters matching the simulator's channel for `scheme`: NR combines
    /// the `K` branches of `budget`, ARQ retransmits over one branch and KR
    /// repeats `K` times over one branch.
    pub fn for_scheme(
        scheme: Scheme,
        arrival_rate: f64,
        fbl: &FblConfig,
        budget: &LinkBudget,
    ) -> Result<Self> {
        let (eps, count) = match scheme {
            Scheme::Nr => (avg_blep_mrc(budget, fbl), 1),
            Scheme::Arq => (avg_blep_single(budget, fbl), 1),
            Scheme::Kr => (avg_blep_single(budget, fbl), budget.connections()),
        };
        Self::new(arrival_rate, fbl.service_time_ms(), eps, count)
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn service_time_ms(&self) -> f64 {
        self.service_time_ms
    }

    pub fn avg_blep(&self) -> f64 {
        self.avg_blep
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn with_blep(&self, avg_blep: f64) -> Result<Self> {
        Self::new(
            self.arrival_rate,
            self.service_time_ms,
            avg_blep,
            self.count,
        )
    }

    pub fn with_count(&self, count: u32) -> Result<Self> {
        Self::new(
            self.arrival_rate,
            self.service_time_ms,
            self.avg_blep,
            count,
        )
    }

    fn success(&self) -> Result<f64> {
        if self.avg_blep >= 1.0 {
            return Err(Error::Divergent(self.avg_blep));
        }
        Ok(1.0 - self.avg_blep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiMetrics {
    pub avg_aoi_ms: f64,
    pub avg_paoi_ms: f64,
    pub scheme: Scheme,
}

/// Zero-buffer M/D/1 age with per-packet success probability `p` and
/// deterministic service `s`.
fn md1_blocking(lambda: f64, s: f64, p: f64) -> (f64, f64) {
    let eps = 1.0 - p;
    let paoi = (1.0 / lambda + s) / p + s;
    let aoi = (1.0 + lambda * s) * (1.0 + eps) / (2.0 * lambda * p)
        + (1.0 + 2.0 * lambda * s + 2.0 * lambda * lambda * s * s)
            / (2.0 * lambda + 2.0 * lambda * lambda * s);
    (aoi, paoi)
}

/// Average AoI and PAoI of K-link MRC without retransmission.
pub fn metrics_nr(tp: &TrafficParams) -> Result<AoiMetrics> {
    let p = tp.success()?;
    let (aoi, paoi) = md1_blocking(tp.arrival_rate, tp.service_time_ms, p);
    Ok(AoiMetrics {
        avg_aoi_ms: aoi,
        avg_paoi_ms: paoi,
        scheme: Scheme::Nr,
    })
}

/// Average AoI and PAoI of a single link with retransmission until success.
pub fn metrics_arq(tp: &TrafficParams) -> Result<AoiMetrics> {
    let p = tp.success()?;
    let (l, m) = (tp.arrival_rate, tp.service_time_ms);
    let paoi = 2.0 * m / p + 1.0 / l;
    let aoi = (2.0 * p + l * l * m * m + 2.0 * l * m * p) / (2.0 * l * (p + l * m))
        + m * (1.0 + tp.avg_blep) / p;
    Ok(AoiMetrics {
        avg_aoi_ms: aoi,
        avg_paoi_ms: paoi,
        scheme: Scheme::Arq,
    })
}

/// Average AoI and PAoI of a single link sending K blind repetitions.
pub fn metrics_kr(tp: &TrafficParams) -> Result<AoiMetrics> {
    tp.success()?;
    let p = 1.0 - tp.avg_blep.powi(tp.count as i32);
    let s = f64::from(tp.count) * tp.service_time_ms;
    let (aoi, paoi) = md1_blocking(tp.arrival_rate, s, p);
    Ok(AoiMetrics {
        avg_aoi_ms: aoi,
        avg_paoi_ms: paoi,
        scheme: Scheme::Kr,
    })
}

pub fn metrics(scheme: Scheme, tp: &TrafficParams) -> Result<AoiMetrics> {
    match scheme {
        Scheme::Nr => metrics_nr(tp),
        Scheme::Arq => metrics_arq(tp),
        Scheme::Kr => metrics_kr(tp),
    }
}

/// Range of the NR metrics over `K ∈ [1, ∞)`: the single-link row and the
/// error-free limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrLimits {
    pub single: AoiMetrics,
    pub unlimited: AoiMetrics,
}

pub fn paoi_limits_nr(
    tp: &TrafficParams,
    cfg: &FblConfig,
    budget: &LinkBudget,
) -> Result<NrLimits> {
    let eps = avg_blep_single(budget, cfg);
    Ok(NrLimits {
        single: metrics_nr(&tp.with_blep(eps)?.with_count(1)?)?,
        unlimited: metrics_nr(&tp.with_blep(0.0)?)?,
    })
}

fn exp_rate(tp: &TrafficParams) -> f64 {
    tp.arrival_rate * (1.0 - tp.avg_blep)
}

/// Density of the peak age: shifted exponential beyond `2M`.
pub fn paoi_pdf(x: f64, tp: &TrafficParams) -> f64 {
    let floor = 2.0 * tp.service_time_ms;
    if x <= floor {
        return 0.0;
    }
    let rate = exp_rate(tp);
    rate * (rate * (floor - x)).exp()
}

pub fn paoi_cdf(x: f64, tp: &TrafficParams) -> f64 {
    let floor = 2.0 * tp.service_time_ms;
    if x <= floor {
        return 0.0;
    }
    -(exp_rate(tp) * (floor - x)).exp_m1()
}

/// `Pr[A > ζ] = e^{λ(1-ε̄_K)(2M-ζ)}`. Thresholds at or below `2M` return 1.
pub fn paoi_violation(zeta: f64, tp: &TrafficParams) -> f64 {
    let floor = 2.0 * tp.service_time_ms;
    if zeta <= floor {
        warn!("PAoI threshold {zeta} ms is not above 2M = {floor} ms; violation is certain");
        return 1.0;
    }
    (exp_rate(tp) * (floor - zeta)).exp()
}

/// Mean of the peak-age distribution above, `2M + 1/(λ(1-ε̄_K))`.
///
/// This differs from [`metrics_nr`]'s PAoI whenever `ε̄_K > 0`.
pub fn paoi_distribution_mean(tp: &TrafficParams) -> Result<f64> {
    let p = tp.success()?;
    Ok(2.0 * tp.service_time_ms + 1.0 / (tp.arrival_rate * p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationBounds {
    /// Single connection.
    pub upper: f64,
    /// Error-free limit `K → ∞`.
    pub lower: f64,
}

pub fn violation_bounds(
    zeta: f64,
    tp: &TrafficParams,
    cfg: &FblConfig,
    budget: &LinkBudget,
) -> Result<ViolationBounds> {
    let eps = avg_blep_single(budget, cfg);
    Ok(ViolationBounds {
        upper: paoi_violation(zeta, &tp.with_blep(eps)?),
        lower: paoi_violation(zeta, &tp.with_blep(0.0)?),
    })
}

/// `Ā_ARQ - Ā_NR = (M - 1/λ)/(1-ε̄) + 1/λ - M`.
pub fn arq_nr_gap(tp: &TrafficParams) -> Result<f64> {
    let p = tp.success()?;
    let (l, m) = (tp.arrival_rate, tp.service_time_ms);
    Ok((m - 1.0 / l) / p + 1.0 / l - m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{avg_blep_mrc, avg_blep_quadrature};
    use crate::quadrature::integrate;

    fn tp(eps: f64) -> TrafficParams {
        TrafficParams::new(1.0, 0.5, eps, 1).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn nr_reference_values() {
        let m = metrics_nr(&tp(0.0)).unwrap();
        assert!(close(m.avg_paoi_ms, 2.0, 1e-12));
        assert!(close(m.avg_aoi_ms, 0.75 + 2.5 / 3.0, 1e-12));
        let m = metrics_nr(&tp(0.5)).unwrap();
        assert!(close(m.avg_paoi_ms, 3.5, 1e-12));
        assert!(close(m.avg_aoi_ms, 2.25 + 2.5 / 3.0, 1e-12));
        assert!(matches!(metrics_nr(&tp(1.0)), Err(Error::Divergent(_))));
    }

    #[test]
    fn arq_reference_values() {
        let m = metrics_arq(&tp(0.0)).unwrap();
        let nr = metrics_nr(&tp(0.0)).unwrap();
        assert!(close(m.avg_paoi_ms, 2.0, 1e-12));
        assert!(close(m.avg_aoi_ms, nr.avg_aoi_ms, 1e-12));
        let m = metrics_arq(&tp(0.5)).unwrap();
        assert!(close(m.avg_paoi_ms, 3.0, 1e-12));
        // Renewal argument: E[S] + E[Y^2] / (2 E[Y]) with Y = X + N M.
        assert!(close(m.avg_aoi_ms, 2.375, 1e-12));
        assert!(metrics_arq(&tp(1.0)).is_err());
    }

    #[test]
    fn kr_reference_values() {
        for eps in [0.0, 0.2, 0.7] {
            let kr = metrics_kr(&tp(eps)).unwrap();
            let nr = metrics_nr(&tp(eps)).unwrap();
            assert!(close(kr.avg_paoi_ms, nr.avg_paoi_ms, 1e-12));
            assert!(close(kr.avg_aoi_ms, nr.avg_aoi_ms, 1e-12));
        }
        let m = metrics_kr(&tp(0.5).with_count(2).unwrap()).unwrap();
        assert!(close(m.avg_paoi_ms, 2.0 / 0.75 + 1.0, 1e-12));
        assert!(metrics_kr(&tp(1.0)).is_err());
    }

    #[test]
    fn nr_strictly_increasing_in_blep() {
        let mut prev = metrics_nr(&tp(0.0)).unwrap();
        for i in 1..100 {
            let m = metrics_nr(&tp(f64::from(i) / 100.0)).unwrap();
            assert!(m.avg_paoi_ms > prev.avg_paoi_ms && m.avg_aoi_ms > prev.avg_aoi_ms);
            assert!(m.avg_aoi_ms <= m.avg_paoi_ms);
            assert!(m.avg_paoi_ms >= 1.0);
            prev = m;
        }
    }

    #[test]
    fn table_limits() {
        let cfg = FblConfig::reference();
        let budget = LinkBudget::new(35.0, 23.0, 1).unwrap();
        let lim = paoi_limits_nr(&tp(0.3), &cfg, &budget).unwrap();
        assert!(close(lim.unlimited.avg_paoi_ms, 2.0, 1e-12));
        assert!(close(lim.unlimited.avg_aoi_ms, 1.583_333_333_333, 1e-9));
        let eps = avg_blep_single(&budget, &cfg);
        let single = metrics_nr(&tp(eps)).unwrap();
        assert_eq!(lim.single, single);
        let mut prev = f64::INFINITY;
        for k in 1..=16 {
            let e = avg_blep_mrc(&budget.with_connections(k).unwrap(), &cfg);
            let a = metrics_nr(&tp(e)).unwrap().avg_paoi_ms;
            assert!(a <= prev + 1e-12 && a >= lim.unlimited.avg_paoi_ms - 1e-12);
            prev = a;
        }
    }

    #[test]
    fn pdf_cdf_boundaries() {
        let t = tp(0.0);
        assert_eq!(paoi_pdf(1.0, &t), 0.0);
        assert_eq!(paoi_cdf(1.0, &t), 0.0);
        assert!(close(paoi_pdf(1.0 + 1e-9, &t), 1.0, 1e-8));
        assert!(close(paoi_cdf(1e4, &t), 1.0, 1e-15));
    }

    #[test]
    fn pdf_normalises() {
        for (l, m, e) in [
            (1.0, 0.5, 0.0),
            (0.5, 0.2, 0.3),
            (2.0, 0.1, 0.8),
            (20.0, 0.5, 0.1),
        ] {
            let t = TrafficParams::new(l, m, e, 1).unwrap();
            let rate = l * (1.0 - e);
            let hi = 2.0 * m + 80.0 / rate;
            let total = integrate(|x| paoi_pdf(x, &t), 2.0 * m, hi).unwrap().value;
            assert!(close(total, 1.0, 1e-9), "{total}");
        }
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        let t = TrafficParams::new(1.0, 0.5, 0.2, 1).unwrap();
        let h = 1e-5;
        for i in 1..=100 {
            let x = 1.0 + 9.0 * f64::from(i) / 100.0;
            let fd = (paoi_cdf(x + h, &t) - paoi_cdf(x - h, &t)) / (2.0 * h);
            let pdf = paoi_pdf(x, &t);
            assert!(((fd - pdf) / pdf).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn violation_values() {
        let t = tp(0.0);
        assert!(close(paoi_violation(8.0, &t), (-7.0f64).exp(), 1e-15));
        assert!(close(paoi_violation(8.0, &t), 9.119e-4, 1e-7));
        assert!(close(paoi_violation(1.0 + 1e-12, &t), 1.0, 1e-11));
        assert_eq!(paoi_violation(0.5, &t), 1.0);
        assert_eq!(paoi_violation(8.0, &tp(1.0)), 1.0);
        for z in [1.5, 3.0, 8.0] {
            assert!(close(
                paoi_cdf(z, &tp(0.3)) + paoi_violation(z, &tp(0.3)),
                1.0,
                1e-15
            ));
        }
        assert!(paoi_violation(8.0, &tp(0.2)) > paoi_violation(8.0, &tp(0.1)));
        assert!(paoi_violation(9.0, &tp(0.2)) < paoi_violation(8.0, &tp(0.2)));
    }

    #[test]
    fn distribution_mean_vs_closed_form_mean() {
        assert!(close(paoi_distribution_mean(&tp(0.0)).unwrap(), 2.0, 1e-12));
        let t = tp(0.5);
        let dist = paoi_distribution_mean(&t).unwrap();
        let thm = metrics_nr(&t).unwrap().avg_paoi_ms;
        assert!(close(dist, 3.0, 1e-12));
        assert!(close(thm, 3.5, 1e-12));
    }

    #[test]
    fn bounds() {
        let cfg = FblConfig::reference();
        let budget = LinkBudget::from_mean_snr(7.906, 1).unwrap();
        let b = violation_bounds(8.0, &tp(0.0), &cfg, &budget).unwrap();
        assert!(close(b.lower, (-7.0f64).exp(), 1e-15));
        let eps = avg_blep_quadrature(&budget, &cfg).unwrap().value;
        assert!(close(b.upper, (-7.0 * (1.0 - eps)).exp(), 1e-9));
        assert!(close((b.upper).ln(), -4.25, 0.01));
        for g in [0.1, 1.0, 10.0, 100.0] {
            let bb = LinkBudget::from_mean_snr(g, 1).unwrap();
            let v = violation_bounds(8.0, &tp(0.0), &cfg, &bb).unwrap();
            assert!(v.upper >= v.lower);
        }
    }

    #[test]
    fn gap_values() {
        assert_eq!(arq_nr_gap(&tp(0.0)).unwrap(), 0.0);
        assert!(close(arq_nr_gap(&tp(0.5)).unwrap(), -0.5, 1e-12));
        let a =
            metrics_arq(&tp(0.5)).unwrap().avg_paoi_ms - metrics_nr(&tp(0.5)).unwrap().avg_paoi_ms;
        assert!(close(a, -0.5, 1e-12));
        for e in [0.1, 0.5, 0.9] {
            let t = TrafficParams::new(2.0, 0.5, e, 1).unwrap();
            assert!(arq_nr_gap(&t).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("nr".parse::<Scheme>().unwrap(), Scheme::Nr);
        assert_eq!("ARQ".parse::<Scheme>().unwrap(), Scheme::Arq);
        assert_eq!("k-repetition".parse::<Scheme>().unwrap(), Scheme::Kr);
        assert!("foo".parse::<Scheme>().is_err());
    }

    #[test]
    fn invalid_traffic() {
        assert!(TrafficParams::new(0.0, 0.5, 0.1, 1).is_err());
        assert!(TrafficParams::new(1.0, -0.5, 0.1, 1).is_err());
        assert!(TrafficParams::new(1.0, 0.5, 1.1, 1).is_err());
        assert!(TrafficParams::new(1.0, 0.5, 0.1, 0).is_err());
    }
}
