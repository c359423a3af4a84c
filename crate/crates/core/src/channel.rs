//! Finite-blocklength block error model over Rayleigh fading with K-branch
//! maximal-ratio combining.
//!
//! The instantaneous block error probability is the three-segment linearised
//! normal approximation. Its average over the Erlang-distributed combined SNR
//! has a closed form ([`avg_blep_mrc`]) and a quadrature reference
//! ([`avg_blep_quadrature`]) that splits the integral at the two knees.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_with, Tolerance};
use crate::special::{gamma_p_int, ln_factorial, RealGamma};

/// Converts dBm to milliwatt-referenced linear power, `10^{p/10}`.
///
/// Only ratios enter the channel model so the reference cancels in the SNR.
pub fn dbm_to_linear(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Packet and coding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblConfig {
    info_bits: u32,
    blocklength: u32,
    symbol_duration_ms: f64,
}

impl FblConfig {
    pub fn new(info_bits: u32, blocklength: u32, symbol_duration_ms: f64) -> Result<Self> {
        if info_bits == 0 || blocklength == 0 {
            return domain("information bits and blocklength must be positive");
        }
        if !(symbol_duration_ms > 0.0) || !symbol_duration_ms.is_finite() {
            return domain(format!(
                "symbol duration must be positive, got {symbol_duration_ms}"
            ));
        }
        Ok(Self {
            info_bits,
            blocklength,
            symbol_duration_ms,
        })
    }

    /// L = 160 bits, m = 100 channel uses, Ts = 0.005 ms.
    pub fn reference() -> Self {
        Self {
            info_bits: 160,
            blocklength: 100,
            symbol_duration_ms: 0.005,
        }
    }

    pub fn info_bits(&self) -> u32 {
        self.info_bits
    }

    pub fn blocklength(&self) -> u32 {
        self.blocklength
    }

    pub fn symbol_duration_ms(&self) -> f64 {
        self.symbol_duration_ms
    }

    /// Coding rate `R = L / m` in bits per channel use.
    pub fn coding_rate(&self) -> f64 {
        f64::from(self.info_bits) / f64::from(self.blocklength)
    }

    /// Service time `M = m * Ts` in ms.
    pub fn service_time_ms(&self) -> f64 {
        f64::from(self.blocklength) * self.symbol_duration_ms
    }

    /// Centre of the linear segment, `e^R - 1`.
    pub fn knee_center(&self) -> f64 {
        self.coding_rate().exp_m1()
    }

    /// Slope of the linear segment, `-sqrt(m / (2π (e^{2R} - 1)))`.
    pub fn knee_slope(&self) -> f64 {
        let r = self.coding_rate();
        -(f64::from(self.blocklength) / (2.0 * PI * (2.0 * r).exp_m1())).sqrt()
    }

    /// SNR below which a block is always lost.
    pub fn lower_knee(&self) -> f64 {
        self.knee_center() + 0.5 / self.knee_slope()
    }

    /// SNR above which a block is always decoded.
    pub fn upper_knee(&self) -> f64 {
        self.knee_center() - 0.5 / self.knee_slope()
    }
}

/// Per-link power budget with equal power on each of `K` connections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    transmit_power_dbm: f64,
    noise_variance_dbm: f64,
    connections: u32,
}

impl LinkBudget {
    pub fn new(transmit_power_dbm: f64, noise_variance_dbm: f64, connections: u32) -> Result<Self> {
        if connections == 0 {
            return domain("connection count must be >= 1");
        }
        if !transmit_power_dbm.is_finite() || !noise_variance_dbm.is_finite() {
            return domain("powers must be finite");
        }
        Ok(Self {
            transmit_power_dbm,
            noise_variance_dbm,
            connections,
        })
    }

    /// Budget with a given per-branch mean SNR (noise at 0 dBm).
    pub fn from_mean_snr(mean_branch_snr: f64, connections: u32) -> Result<Self> {
        if !(mean_branch_snr > 0.0) {
            return domain(format!("mean SNR must be positive, got {mean_branch_snr}"));
        }
        Self::new(linear_to_db(mean_branch_snr), 0.0, connections)
    }

    pub fn with_connections(&self, connections: u32) -> Result<Self> {
        Self::new(
            self.transmit_power_dbm,
            self.noise_variance_dbm,
            connections,
        )
    }

    pub fn transmit_power_dbm(&self) -> f64 {
        self.transmit_power_dbm
    }

    pub fn noise_variance_dbm(&self) -> f64 {
        self.noise_variance_dbm
    }

    pub fn connections(&self) -> u32 {
        self.connections
    }

    /// Per-branch mean SNR; independent of `K`.
    pub fn mean_branch_snr(&self) -> f64 {
        dbm_to_linear(self.transmit_power_dbm - self.noise_variance_dbm)
    }

    /// `K * P_t` in linear (mW) units.
    pub fn total_power_mw(&self) -> f64 {
        f64::from(self.connections) * dbm_to_linear(self.transmit_power_dbm)
    }
}

/// Piecewise-linear block error probability at instantaneous SNR `gamma`.
pub fn blep_instantaneous(gamma: f64, cfg: &FblConfig) -> Result<f64> {
    if !(gamma >= 0.0) {
        return domain(format!("SNR must be non-negative, got {gamma}"));
    }
    Ok(blep_unchecked(gamma, cfg))
}

pub(crate) fn blep_unchecked(gamma: f64, cfg: &FblConfig) -> f64 {
    if gamma < cfg.lower_knee() {
        1.0
    } else if gamma > cfg.upper_knee() {
        0.0
    } else {
        (cfg.knee_slope() * (gamma - cfg.knee_center()) + 0.5).clamp(0.0, 1.0)
    }
}

/// Density of the MRC-combined SNR, Erlang(K, mean γ̄).
pub fn erlang_pdf(gamma: f64, budget: &LinkBudget) -> Result<f64> {
    if !(gamma >= 0.0) {
        return domain(format!("SNR must be non-negative, got {gamma}"));
    }
    let k = budget.connections();
    let mean = budget.mean_branch_snr();
    if gamma == 0.0 {
        return Ok(if k == 1 { 1.0 / mean } else { 0.0 });
    }
    let kf = f64::from(k);
    let ln = (kf - 1.0) * gamma.ln() - gamma / mean - kf * mean.ln() - ln_factorial(k - 1);
    Ok(ln.exp())
}

/// Closed-form average block error probability for K-branch MRC, before
/// clamping.
///
/// A negative lower knee (very low rates) is treated as zero, which keeps the
/// expression equal to the exact Erlang average.
pub fn avg_blep_mrc_unclamped(budget: &LinkBudget, cfg: &FblConfig) -> f64 {
    let k = budget.connections();
    let p = |order: u32, x: f64| gamma_p_int(order, x).expect("valid order and argument");
    mrc_from_lower_gamma(budget.mean_branch_snr(), f64::from(k), cfg, |x| {
        Ok((p(k, x), p(k + 1, x)))
    })
    .expect("integer-order evaluation cannot fail")
}

/// The closed form rewritten with lower incomplete gammas,
/// `P_K(x₁) + (½ - φϖ)[P_K]_{x₁}^{x₂} + φγ̄K[P_{K+1}]_{x₁}^{x₂}`.
/// Every term shrinks like `x^K` at high SNR, so nothing cancels.
fn mrc_from_lower_gamma<F>(mean: f64, k: f64, cfg: &FblConfig, p: F) -> Result<f64>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    let (center, slope) = (cfg.knee_center(), cfg.knee_slope());
    let x1 = cfg.lower_knee().max(0.0) / mean;
    let x2 = cfg.upper_knee() / mean;
    let (pk1, pn1) = p(x1)?;
    let (pk2, pn2) = p(x2)?;
    Ok(pk1 + (0.5 - slope * center) * (pk2 - pk1) + slope * mean * k * (pn2 - pn1))
}

/// Closed-form average block error probability, clamped to `[0, 1]`.
pub fn avg_blep_mrc(budget: &LinkBudget, cfg: &FblConfig) -> f64 {
    avg_blep_mrc_unclamped(budget, cfg).clamp(0.0, 1.0)
}

/// Single-connection average block error probability `1 + φγ̄(ω₁ - ω₂)`,
/// before clamping. The connection count of `budget` is ignored.
pub fn avg_blep_single_unclamped(budget: &LinkBudget, cfg: &FblConfig) -> f64 {
    let u = 1.0 / budget.mean_branch_snr();
    let steep = -cfg.knee_slope();
    let lower = cfg.lower_knee();
    let from = lower.max(0.0);
    let width = cfg.upper_knee() - from;
    // With h(z) = (1 - e^{-z})/z the expression is
    // c(1 - e^{-from·u} h(width·u)), c = |φ|·width, which is 1 unless the
    // lower knee was clamped.
    let z = width * u;
    let h = if z > 0.0 { -(-z).exp_m1() / z } else { 1.0 };
    let one_minus_h = if z < 1e-3 {
        z / 2.0 - z * z / 6.0 + z * z * z / 24.0 - z.powi(4) / 120.0
    } else {
        1.0 - h
    };
    steep * width * (one_minus_h - h * (-from * u).exp_m1())
}

pub fn avg_blep_single(budget: &LinkBudget, cfg: &FblConfig) -> f64 {
    avg_blep_single_unclamped(budget, cfg).clamp(0.0, 1.0)
}

/// Average block error probability for a real-valued connection count
/// `k >= 1`, with the incomplete gamma functions of real order evaluated by
/// quadrature. Agrees with [`avg_blep_mrc`] at integer `k`.
pub fn avg_blep_mrc_real(k: f64, mean_branch_snr: f64, cfg: &FblConfig) -> Result<f64> {
    if !(mean_branch_snr > 0.0) {
        return domain(format!("mean SNR must be positive, got {mean_branch_snr}"));
    }
    let gamma = RealGamma::new(k)?;
    let eps = mrc_from_lower_gamma(mean_branch_snr, k, cfg, |x| {
        Ok((gamma.p(x)?, gamma.p_next(x)?))
    })?;
    Ok(eps.clamp(0.0, 1.0))
}

/// Quadrature value of the average block error probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureBlep {
    pub value: f64,
    pub abs_error: f64,
}

/// Numerical `∫ f_K(γ) ε(γ) dγ`, split exactly at the knees.
///
/// Works in the normalised variable `x = γ / γ̄`; each segment is truncated
/// where the Erlang tail mass drops below `e^{-40}`. Above the upper knee the
/// error probability is zero, so there is no tail term.
pub fn avg_blep_quadrature(budget: &LinkBudget, cfg: &FblConfig) -> Result<QuadratureBlep> {
    let k = budget.connections();
    let kf = f64::from(k);
    let mean = budget.mean_branch_snr();
    let lnf = ln_factorial(k - 1);
    let density = move |x: f64| {
        if x <= 0.0 {
            return if k == 1 { 1.0 } else { 0.0 };
        }
        ((kf - 1.0) * x.ln() - x - lnf).exp()
    };
    let cut = kf - 1.0 + 40.0 + 12.0 * kf.sqrt();
    let lower = (cfg.lower_knee().max(0.0) / mean).min(cut);
    let upper = (cfg.upper_knee() / mean).min(cut);
    let (center, slope) = (cfg.knee_center(), cfg.knee_slope());
    let tol = Tolerance {
        abs: 1e-12,
        rel: 0.0,
        max_panels: 20_000,
        initial_panels: 8,
    };

    let mut value = 0.0;
    let mut abs_error = 0.0;
    let mut add = |r: crate::quadrature::Integral| {
        value += r.value;
        abs_error += r.abs_error;
    };
    // Integrate each segment on either side of the Erlang mode so the panels
    // see monotone pieces.
    let mode = kf - 1.0;
    for (a, b, linear) in [(0.0, lower, false), (lower, upper, true)] {
        if b <= a {
            continue;
        }
        let f = |x: f64| {
            let e = if linear {
                slope * (mean * x - center) + 0.5
            } else {
                1.0
            };
            e * density(x)
        };
        if a < mode && mode < b {
            add(integrate_with(f, a, mode, tol)?);
            add(integrate_with(f, mode, b, tol)?);
        } else {
            add(integrate_with(f, a, b, tol)?);
        }
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite quadrature value at K={k}, mean SNR {mean}"
        )));
    }
    Ok(QuadratureBlep {
        value: value.clamp(0.0, 1.0),
        abs_error,
    })
}
