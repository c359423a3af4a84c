//! Linear plant closed over an ageing state estimate.
//!
//! The controller holds the freshest delivered state `x_{n-Δ}` and propagates
//! it open loop through the plant with the inputs it has applied since, so
//! the estimation error is the noise accumulated over the staleness window.

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::sim::{run_rng, AoiSegment};

/// Multiple of the standard deviation used as the default "risky state"
/// threshold; a Gaussian exceeds it on either side with probability ≈ 1e-4.
pub const RISK_SIGMAS: f64 = 3.89;

/// Least-squares gain `G = -(BᵀB)⁻¹BᵀA` and the residual `‖BG + A‖_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainFit {
    pub gain: DMatrix<f64>,
    pub residual: f64,
}

pub fn control_gain_lsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GainFit> {
    if a.nrows() != a.ncols() {
        return domain(format!(
            "system matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        ));
    }
    if b.nrows() != a.nrows() || b.ncols() == 0 {
        return domain(format!(
            "input matrix must be {}xq, got {}x{}",
            a.nrows(),
            b.nrows(),
            b.ncols()
        ));
    }
    let sv = b.clone().svd(false, false).singular_values;
    let max = sv.max();
    if b.ncols() > b.nrows() || !(sv.min() > 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return domain("input matrix must have full column rank");
    }
    let bt = b.transpose();
    let chol = (&bt * b)
        .cholesky()
        .ok_or_else(|| Error::Numeric("BᵀB is not positive definite".into()))?;
    let gain = -chol.solve(&(&bt * a));
    let residual = (b * &gain + a).norm();
    Ok(GainFit { gain, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    gain: DMatrix<f64>,
    residual: f64,
    state_threshold: f64,
    timestep_ms: f64,
}

impl PlantModel {
    /// Plant with the least-squares gain and no state threshold.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        timestep_ms: f64,
    ) -> Result<Self> {
        let fit = control_gain_lsq(&a, &b)?;
        let d = a.nrows();
        if noise_cov.shape() != (d, d) {
            return domain(format!("noise covariance must be {d}x{d}"));
        }
        if (&noise_cov - noise_cov.transpose()).amax() > 1e-12 * noise_cov.amax().max(1.0) {
            return domain("noise covariance must be symmetric");
        }
        if noise_cov.clone().symmetric_eigenvalues().min() < -1e-12 {
            return domain("noise covariance must be positive semidefinite");
        }
        if !(timestep_ms > 0.0) {
            return domain(format!("timestep must be positive, got {timestep_ms}"));
        }
        Ok(Self {
            a,
            b,
            noise_cov,
            gain: fit.gain,
            residual: fit.residual,
            state_threshold: f64::INFINITY,
            timestep_ms,
        })
    }

    /// Two-area frequency-deviation model with `R_w = 1e-6·I`.
    pub fn smart_grid(timestep_ms: f64) -> Result<Self> {
        let a = DMatrix::from_row_slice(2, 2, &[1.17, 0.67, 0.67, 0.37]);
        let b = DMatrix::from_row_slice(2, 1, &[0.67, 0.37]);
        Self::new(a, b, DMatrix::identity(2, 2) * 1e-6, timestep_ms)
    }

    /// Replace the gain; the residual is recomputed.
    pub fn with_gain(mut self, gain: DMatrix<f64>) -> Result<Self> {
        if gain.shape() != (self.b.ncols(), self.a.nrows()) {
            return domain(format!(
                "gain must be {}x{}",
                self.b.ncols(),
                self.a.nrows()
            ));
        }
        self.residual = (&self.b * &gain + &self.a).norm();
        self.gain = gain;
        Ok(self)
    }

    pub fn with_state_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return domain(format!(
                "state threshold must be non-negative, got {threshold}"
            ));
        }
        self.state_threshold = threshold;
        Ok(self)
    }

    /// Set the threshold to [`RISK_SIGMAS`] standard deviations along the
    /// principal axis of the state covariance at `Δ = zeta_ms / timestep`.
    pub fn calibrated(self, zeta_ms: f64) -> Result<Self> {
        let t = self.calibrated_threshold(zeta_ms)?;
        self.with_state_threshold(t)
    }

    pub fn calibrated_threshold(&self, zeta_ms: f64) -> Result<f64> {
        if !(zeta_ms > 0.0) {
            return domain(format!("PAoI threshold must be positive, got {zeta_ms}"));
        }
        let delta = (zeta_ms / self.timestep_ms).floor() as u32;
        let top = covariance_from_aoi(delta, self)
            .symmetric_eigenvalues()
            .max();
        Ok(RISK_SIGMAS * top.max(0.0).sqrt())
    }

    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn control_gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `‖BG + A‖_F`.
    pub fn gain_residual(&self) -> f64 {
        self.residual
    }

    pub fn state_threshold(&self) -> f64 {
        self.state_threshold
    }

    pub fn timestep_ms(&self) -> f64 {
        self.timestep_ms
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Factor `L` with `L Lᵀ = R_w`; falls back to the eigen square root when
    /// `R_w` is singular.
    fn noise_factor(&self) -> DMatrix<f64> {
        if let Some(c) = self.noise_cov.clone().cholesky() {
            return c.l();
        }
        let eig = self.noise_cov.clone().symmetric_eigen();
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&root)
    }
}

/// Plant-state covariance `Σ_{i=0}^{Δ} A^i R_w (Aᵀ)^i`.
pub fn covariance_from_aoi(delta: u32, plant: &PlantModel) -> DMatrix<f64> {
    power_sum(delta + 1, plant)
}

/// Estimation-error covariance `Σ_{i=1}^{Δ} A^{i-1} R_w (Aᵀ)^{i-1}`.
pub fn error_covariance(delta: u32, plant: &PlantModel) -> DMatrix<f64> {
    power_sum(delta, plant)
}

fn power_sum(terms: u32, plant: &PlantModel) -> DMatrix<f64> {
    let d = plant.state_dim();
    let mut acc = DMatrix::zeros(d, d);
    let mut term = plant.noise_cov.clone();
    for _ in 0..terms {
        acc += &term;
        term = &plant.a * term * plant.a.transpose();
    }
    // Restore exact symmetry lost to rounding.
    (&acc + acc.transpose()) * 0.5
}

/// Closed-loop trajectory, stored flat with `dim` entries per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub dim: usize,
    pub states: Vec<f64>,
    pub estimates: Vec<f64>,
    pub errors: Vec<f64>,
    /// `w_n`, kept so the error can be replayed from the noise.
    pub noise: Vec<f64>,
    /// Staleness actually used at each step, `Δ_n = n - τ_n`.
    pub aoi_steps: Vec<u32>,
    pub violated: Vec<bool>,
}

impl StateTrace {
    pub fn len(&self) -> usize {
        self.aoi_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aoi_steps.is_empty()
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn estimate(&self, n: usize) -> &[f64] {
        &self.estimates[n * self.dim..(n + 1) * self.dim]
    }

    pub fn error(&self, n: usize) -> &[f64] {
        &self.errors[n * self.dim..(n + 1) * self.dim]
    }

    pub fn violation_frequency(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.violated.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    /// `e_n = Σ_{i=1}^{Δ_n} A^{i-1} w_{n-i}`, rebuilt from the stored noise.
    pub fn replay_error(&self, n: usize, plant: &PlantModel) -> Vec<f64> {
        let a = plant.a.transpose().as_slice().to_vec();
        let mut z = vec![0.0; self.dim];
        let mut tmp = vec![0.0; self.dim];
        for i in (1..=self.aoi_steps[n] as usize).rev() {
            let w = &self.noise[(n - i) * self.dim..(n - i + 1) * self.dim];
            mat_vec(&a, &z, &mut tmp);
            for (t, wi) in tmp.iter_mut().zip(w) {
                *t += wi;
            }
            std::mem::swap(&mut z, &mut tmp);
        }
        z
    }

    /// Second moment `E[v vᵀ]` over steps `from..` of one of the flat series.
    pub fn second_moment(series: &[f64], dim: usize, from: usize) -> DMatrix<f64> {
        let rows = &series[from * dim..];
        let count = rows.len() / dim;
        let mut m = DMatrix::zeros(dim, dim);
        for v in rows.chunks_exact(dim) {
            for i in 0..dim {
                for j in 0..dim {
                    m[(i, j)] += v[i] * v[j];
                }
            }
        }
        m / count.max(1) as f64
    }
}

/// `out = M v` for a row-major square `m`.
fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * d..(i + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// Generator stream for plant noise, kept apart from the streams used by
/// queue simulations under the same seed.
pub const NOISE_STREAM: u64 = u64::MAX;

/// Run `x_{n+1} = A x_n + B u_n + w_n` with `u_n = G x̂_n` from `x_0 = 0`.
///
/// The estimate at step `n` propagates `x_{n-Δ_n}` forward with the applied
/// inputs. Staleness larger than `n` is clipped to `n`, since the initial
/// state is known.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    aoi_steps: &[u32],
    noise_seed: u64,
    n_steps: usize,
) -> Result<StateTrace> {
    if aoi_steps.len() < n_steps {
        return domain(format!(
            "need {n_steps} AoI samples, got {}",
            aoi_steps.len()
        ));
    }
    let d = plant.state_dim();
    let q = plant.input_dim();
    // nalgebra is column-major; transposing gives row-major slices.
    let a = plant.a.transpose().as_slice().to_vec();
    let b = plant.b.transpose().as_slice().to_vec();
    let g = plant.gain.transpose().as_slice().to_vec();
    let l = plant.noise_factor().transpose().as_slice().to_vec();
    let threshold = plant.state_threshold;

    let mut rng = run_rng(noise_seed, NOISE_STREAM);
    let mut trace = StateTrace {
        dim: d,
        states: vec![0.0; n_steps * d],
        estimates: vec![0.0; n_steps * d],
        errors: vec![0.0; n_steps * d],
        noise: vec![0.0; n_steps * d],
        aoi_steps: Vec::with_capacity(n_steps),
        violated: Vec::with_capacity(n_steps),
    };
    let mut inputs = vec![0.0; n_steps * q];
    let mut z = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut std_normal = vec![0.0; d];

    for n in 0..n_steps {
        let delta = (aoi_steps[n] as usize).min(n);
        trace.aoi_steps.push(delta as u32);

        // x̂_n = A^Δ x_{n-Δ} + Σ_{j=1}^{Δ} A^{j-1} B u_{n-j}, by Horner.
        z.copy_from_slice(&trace.states[(n - delta) * d..(n - delta + 1) * d]);
        for j in (1..=delta).rev() {
            mat_vec(&a, &z, &mut tmp);
            let u = &inputs[(n - j) * q..(n - j + 1) * q];
            for (r, t) in tmp.iter_mut().enumerate() {
                *t += (0..q).map(|c| b[r * q + c] * u[c]).sum::<f64>();
            }
            std::mem::swap(&mut z, &mut tmp);
        }
        let x = trace.states[n * d..(n + 1) * d].to_vec();
        trace.estimates[n * d..(n + 1) * d].copy_from_slice(&z);
        for i in 0..d {
            trace.errors[n * d + i] = x[i] - z[i];
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.violated.push(norm > threshold);

        for c in 0..q {
            inputs[n * q + c] = (0..d).map(|r| g[c * d + r] * z[r]).sum();
        }
        for s in std_normal.iter_mut() {
            *s = rng.sample(StandardNormal);
        }
        for i in 0..d {
            trace.noise[n * d + i] = (0..d).map(|k| l[i * d + k] * std_normal[k]).sum();
        }
        if n + 1 < n_steps {
            mat_vec(&a, &x, &mut tmp);
            let u = &inputs[n * q..(n + 1) * q];
            for i in 0..d {
                let bu: f64 = (0..q).map(|c| b[i * q + c] * u[c]).sum();
                trace.states[(n + 1) * d + i] = tmp[i] + bu + trace.noise[n * d + i];
            }
        }
    }
    if trace.states.iter().any(|v| !v.is_finite()) {
        warn!("closed-loop state diverged");
    }
    Ok(trace)
}

/// Sample a right-continuous AoI trace at `t = t₀ + n·timestep` and convert
/// to whole steps, `Δ_n = floor(Δ(t) / timestep)`.
pub fn aoi_trace_to_steps(
    trace: &[AoiSegment],
    timestep_ms: f64,
    n_steps: usize,
) -> Result<Vec<u32>> {
    if !(timestep_ms > 0.0) {
        return domain(format!("timestep must be positive, got {timestep_ms}"));
    }
    let (Some(first), Some(last)) = (trace.first(), trace.last()) else {
        return domain("AoI trace is empty");
    };
    let t0 = first.t_start;
    let horizon = t0 + (n_steps.saturating_sub(1)) as f64 * timestep_ms;
    if n_steps > 0 && horizon > last.t_end {
        return domain(format!(
            "trace covers {:.3} ms but {n_steps} steps of {timestep_ms} ms need {:.3} ms",
            last.t_end - t0,
            horizon - t0
        ));
    }
    let mut out = Vec::with_capacity(n_steps);
    let mut seg = 0;
    for n in 0..n_steps {
        let t = t0 + n as f64 * timestep_ms;
        while seg + 1 < trace.len() && t >= trace[seg].t_end {
            seg += 1;
        }
        let s = &trace[seg];
        let age = s.aoi_start + (t - s.t_start);
        out.push((age / timestep_ms + 1e-9).floor().max(0.0) as u32);
    }
    Ok(out)
}
