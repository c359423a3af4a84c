//! Incomplete gamma functions.
//!
//! Integer orders use the exact finite series; real orders (needed by the
//! continuous relaxation of the connection count) go through quadrature.

use crate::error::{domain, Result};
use crate::quadrature::{integrate_with, Tolerance};

/// `ln(n!)` by direct summation; `n` is small here.
pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| f64::from(i).ln()).sum()
}

/// Regularized upper incomplete gamma `Q(k, x) = Γ(k, x) / (k-1)!` for
/// integer `k >= 1`, i.e. `e^{-x} Σ_{j<k} x^j / j!`.
///
/// Terms are formed in log space so large `x` does not overflow.
pub fn gamma_q_int(k: u32, x: f64) -> Result<f64> {
    if k == 0 {
        return domain("incomplete gamma order must be >= 1");
    }
    if !(x >= 0.0) {
        return domain(format!("incomplete gamma argument must be >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let ln_x = x.ln();
    let mut ln_fact = 0.0;
    let mut sum = 0.0;
    for j in 0..k {
        if j > 0 {
            ln_fact += f64::from(j).ln();
        }
        sum += (f64::from(j) * ln_x - x - ln_fact).exp();
    }
    Ok(sum.min(1.0))
}

/// Upper incomplete gamma `Γ(k, x) = (k-1)! e^{-x} Σ_{j=0}^{k-1} x^j / j!`.
pub fn upper_incomplete_gamma_int(k: u32, x: f64) -> Result<f64> {
    let q = gamma_q_int(k, x)?;
    Ok(q * ln_factorial(k - 1).exp())
}

/// Regularized lower incomplete gamma `P(k, x) = 1 - Q(k, x)` for integer
/// `k >= 1`. Below `x = k + 1` the power series keeps full relative accuracy
/// however small the result.
pub fn gamma_p_int(k: u32, x: f64) -> Result<f64> {
    if x < f64::from(k) + 1.0 && k >= 1 && x >= 0.0 {
        return Ok(lower_series(f64::from(k), ln_factorial(k), x));
    }
    Ok(1.0 - gamma_q_int(k, x)?)
}

/// `P(s, x) = x^s e^{-x} / Γ(s+1) Σ_n x^n / ((s+1)...(s+n))`.
fn lower_series(s: f64, ln_gamma_s1: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut a = s;
    for _ in 0..10_000 {
        a += 1.0;
        term *= x / a;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    ((s * x.ln() - x - ln_gamma_s1).exp() * sum).min(1.0)
}

/// Pieces of the incomplete gamma function of real order `s >= 1`, computed
/// from peak-normalised integrals of `t^{s-1} e^{-t}`.
#[derive(Debug, Clone, Copy)]
pub struct RealGamma {
    s: f64,
    // ln of the integrand at its mode, subtracted to keep values O(1).
    shift: f64,
    // ∫_0^∞ t^{s-1} e^{-t - shift} dt = Γ(s) e^{-shift}
    scaled_total: f64,
}

impl RealGamma {
    pub fn new(s: f64) -> Result<Self> {
        if !(s >= 1.0) || !s.is_finite() {
            return domain(format!("real-order gamma requires s >= 1, got {s}"));
        }
        let mode = s - 1.0;
        let shift = if mode > 0.0 {
            mode * mode.ln() - mode
        } else {
            0.0
        };
        let mut g = Self {
            s,
            shift,
            scaled_total: 1.0,
        };
        g.scaled_total = g.scaled_integral(0.0)?;
        Ok(g)
    }

    fn integrand(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return if self.s == 1.0 {
                (-self.shift).exp()
            } else {
                0.0
            };
        }
        ((self.s - 1.0) * t.ln() - t - self.shift).exp()
    }

    fn scaled_integral(&self, from: f64) -> Result<f64> {
        let upper = from.max(self.s - 1.0) + 40.0 + 12.0 * self.s.sqrt();
        let tol = Tolerance {
            abs: 1e-300,
            rel: 1e-13,
            max_panels: 4000,
            initial_panels: 8,
        };
        // Split at the mode so each piece is monotone.
        let mode = self.s - 1.0;
        let mut total = 0.0;
        if from < mode {
            total += integrate_with(|t| self.integrand(t), from, mode, tol)?.value;
            total += integrate_with(|t| self.integrand(t), mode, upper, tol)?.value;
        } else {
            total += integrate_with(|t| self.integrand(t), from, upper, tol)?.value;
        }
        Ok(total)
    }

    /// `ln Γ(s)`.
    pub fn ln_gamma(&self) -> f64 {
        self.scaled_total.ln() + self.shift
    }

    /// Regularized upper incomplete gamma `Γ(s, x) / Γ(s)`.
    pub fn q(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return domain(format!("incomplete gamma argument must be >= 0, got {x}"));
        }
        if x == 0.0 {
            return Ok(1.0);
        }
        Ok((self.scaled_integral(x)? / self.scaled_total).clamp(0.0, 1.0))
    }

    /// Regularized lower incomplete gamma `P(s, x)`.
    pub fn p(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return domain(format!("incomplete gamma argument must be >= 0, got {x}"));
        }
        if x < self.s + 1.0 {
            return Ok(lower_series(self.s, self.ln_gamma() + self.s.ln(), x));
        }
        Ok(1.0 - self.q(x)?)
    }

    /// `P(s+1, x)`, without building a second table.
    pub fn p_next(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return domain(format!("incomplete gamma argument must be >= 0, got {x}"));
        }
        let s1 = self.s + 1.0;
        if x < s1 + 1.0 {
            return Ok(lower_series(s1, self.ln_gamma() + self.s.ln() + s1.ln(), x));
        }
        Ok((self.p(x)? - self.boundary_term(x) / self.s).max(0.0))
    }

    /// `x^s e^{-x} / Γ(s)`, the boundary term of `Γ(s+1, x) = sΓ(s, x) + x^s e^{-x}`.
    pub fn boundary_term(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        (self.s * x.ln() - x - self.shift).exp() / self.scaled_total
    }
}
