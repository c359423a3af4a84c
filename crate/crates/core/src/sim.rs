//! Event-driven Monte Carlo simulation of the age sawtooth.
//!
//! The K synchronized links act as one server with no buffer: an arrival
//! that finds the server busy is dropped. Service is deterministic (`M` per
//! attempt, `K·M` for K-repetition) and the channel outcome is drawn when a
//! transmission completes. Arrivals that coincide with a completion are
//! admitted (the completion is processed first).
//!
//! Statistics are accumulated from the first successful delivery onward, so
//! every recorded cycle is a full regeneration cycle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;

use crate::aoi::Scheme;
use crate::channel::{blep_unchecked, FblConfig, LinkBudget};
use crate::error::{domain, Error, Result};

/// Fewer successes than this flag a result as low-confidence.
pub const MIN_CONFIDENT_SUCCESSES: u64 = 100;

const MAX_ARQ_ATTEMPTS: u64 = 10_000_000;

/// Seeded generator for run `stream` of a sweep with master seed `seed`.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scheme: Scheme,
    /// Packets per ms.
    pub arrival_rate: f64,
    pub fbl: FblConfig,
    /// Mean branch SNR and K (connections for NR, repetitions for KR).
    pub budget: LinkBudget,
    /// Number of generated (arriving) packets.
    pub n_packets: u64,
    pub seed: u64,
    /// Independent stream index within a sweep.
    pub stream: u64,
    pub paoi_threshold_ms: f64,
    /// Replaces channel sampling: per-packet success for NR, per-attempt for
    /// ARQ, per-repetition for KR.
    pub forced_success_prob: Option<f64>,
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(scheme: Scheme, arrival_rate: f64, fbl: FblConfig, budget: LinkBudget) -> Self {
        Self {
            scheme,
            arrival_rate,
            fbl,
            budget,
            n_packets: 100_000,
            seed: 0,
            stream: 0,
            paoi_threshold_ms: 8.0,
            forced_success_prob: None,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_packets == 0 {
            return domain("n_packets must be >= 1");
        }
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return domain(format!(
                "arrival rate must be positive, got {}",
                self.arrival_rate
            ));
        }
        if let Some(p) = self.forced_success_prob {
            if !(0.0..=1.0).contains(&p) {
                return domain(format!(
                    "forced success probability must lie in [0, 1], got {p}"
                ));
            }
            if p == 0.0 && self.scheme == Scheme::Arq {
                return domain("ARQ with zero success probability never completes");
            }
        }
        Ok(())
    }
}

/// Linear piece of the AoI sawtooth between two consecutive deliveries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub aoi_start: f64,
    pub aoi_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// `Σ J_j / duration` with `J_j = Y_j²/2 + Y_j S_{j-1}`.
    pub time_avg_aoi_ms: f64,
    pub mean_paoi_ms: f64,
    pub paoi_samples: Vec<f64>,
    /// Fraction of PAoI samples strictly above the configured threshold.
    pub violation_freq: f64,
    pub arrivals: u64,
    pub drops: u64,
    pub successes: u64,
    /// Admitted packets that were never delivered (NR and KR only).
    pub failures: u64,
    /// Transmission attempts, counting every ARQ retransmission.
    pub attempts: u64,
    /// Length of the measurement window (first to last delivery), ms.
    pub sim_duration_ms: f64,
    pub seed: u64,
    pub stream: u64,
    pub low_confidence: bool,
    pub trace: Option<Vec<AoiSegment>>,
}

impl SimResult {
    /// Time-average AoI by trapezoid integration of the recorded trace.
    pub fn trace_time_average(&self) -> Option<f64> {
        let trace = self.trace.as_ref()?;
        let first = trace.first()?;
        let last = trace.last()?;
        let area: f64 = trace
            .iter()
            .map(|s| 0.5 * (s.aoi_start + s.aoi_end) * (s.t_end - s.t_start))
            .sum();
        Some(area / (last.t_end - first.t_start))
    }

    pub fn success_rate(&self) -> f64 {
        let admitted = self.arrivals - self.drops;
        if admitted == 0 {
            0.0
        } else {
            self.successes as f64 / admitted as f64
        }
    }
}

struct Channel<'a> {
    cfg: &'a SimConfig,
    mean: f64,
    branches: u32,
}

impl Channel<'_> {
    fn branch_snr<R: Rng>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        self.mean * e
    }

    fn decodes<R: Rng>(&self, rng: &mut R, snr: f64) -> bool {
        let err = blep_unchecked(snr, &self.cfg.fbl);
        rng.random::<f64>() >= err
    }

    /// Outcome of one completed transmission.
    fn transmission<R: Rng>(&self, rng: &mut R) -> bool {
        match (self.cfg.scheme, self.cfg.forced_success_prob) {
            (Scheme::Nr, Some(p)) | (Scheme::Arq, Some(p)) => rng.random::<f64>() < p,
            (Scheme::Kr, Some(p)) => {
                let mut ok = false;
                for _ in 0..self.branches {
                    ok |= rng.random::<f64>() < p;
                }
                ok
            }
            (Scheme::Nr, None) => {
                let combined: f64 = (0..self.branches).map(|_| self.branch_snr(rng)).sum();
                self.decodes(rng, combined)
            }
            (Scheme::Arq, None) => {
                let snr = self.branch_snr(rng);
                self.decodes(rng, snr)
            }
            (Scheme::Kr, None) => {
                let mut ok = false;
                for _ in 0..self.branches {
                    let snr = self.branch_snr(rng);
                    ok |= self.decodes(rng, snr);
                }
                ok
            }
        }
    }
}

struct InService {
    generated: f64,
    completes: f64,
    attempts: u64,
}

#[derive(Default)]
struct Accumulator {
    last_delivery: Option<(f64, f64)>, // (delivery time, generation time)
    window_start: f64,
    area: f64,
    paoi: Vec<f64>,
    trace: Option<Vec<AoiSegment>>,
}

impl Accumulator {
    fn deliver(&mut self, generated: f64, delivered: f64) {
        if let Some((prev_delivered, prev_generated)) = self.last_delivery {
            let y = delivered - prev_delivered;
            let s_prev = prev_delivered - prev_generated;
            let peak = delivered - prev_generated;
            debug_assert!((peak - (s_prev + y)).abs() <= 1e-9 * peak.max(1.0));
            self.area += 0.5 * y * y + y * s_prev;
            self.paoi.push(peak);
            if let Some(trace) = self.trace.as_mut() {
                trace.push(AoiSegment {
                    t_start: prev_delivered,
                    t_end: delivered,
                    aoi_start: s_prev,
                    aoi_end: peak,
                });
            }
        } else {
            self.window_start = delivered;
        }
        self.last_delivery = Some((delivered, generated));
    }
}

/// Runs one simulation. The result is a pure function of `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let mut rng = run_rng(cfg.seed, cfg.stream);
    let inter_arrival = Exp::new(cfg.arrival_rate).map_err(|e| Error::Domain(e.to_string()))?;
    let channel = Channel {
        cfg,
        mean: cfg.budget.mean_branch_snr(),
        branches: cfg.budget.connections(),
    };
    let attempt_time = cfg.fbl.service_time_ms();
    let service_time = match cfg.scheme {
        Scheme::Kr => f64::from(cfg.budget.connections()) * attempt_time,
        Scheme::Nr | Scheme::Arq => attempt_time,
    };

    let mut acc = Accumulator {
        trace: cfg.record_trace.then(Vec::new),
        ..Default::default()
    };
    let (mut arrivals, mut drops, mut successes, mut failures, mut attempts) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut next_arrival = inter_arrival.sample(&mut rng);
    let mut busy: Option<InService> = None;

    loop {
        // Completions first, including ties with the next arrival.
        if let Some(svc) = busy.as_mut() {
            if arrivals == cfg.n_packets || svc.completes <= next_arrival {
                attempts += 1;
                let ok = channel.transmission(&mut rng);
                if ok {
                    successes += 1;
                    acc.deliver(svc.generated, svc.completes);
                    busy = None;
                } else if cfg.scheme == Scheme::Arq {
                    svc.attempts += 1;
                    if svc.attempts > MAX_ARQ_ATTEMPTS {
                        return Err(Error::Numeric(format!(
                            "ARQ packet exceeded {MAX_ARQ_ATTEMPTS} attempts; success probability is effectively zero"
                        )));
                    }
                    svc.completes += service_time;
                } else {
                    failures += 1;
                    busy = None;
                }
                continue;
            }
        }
        if arrivals == cfg.n_packets {
            break;
        }
        let t = next_arrival;
        arrivals += 1;
        if busy.is_some() {
            drops += 1;
        } else {
            busy = Some(InService {
                generated: t,
                completes: t + service_time,
                attempts: 1,
            });
        }
        next_arrival = t + inter_arrival.sample(&mut rng);
    }

    let duration = acc.last_delivery.map_or(0.0, |(t, _)| t - acc.window_start);
    let n = acc.paoi.len();
    let mean_paoi = if n == 0 {
        f64::NAN
    } else {
        acc.paoi.iter().sum::<f64>() / n as f64
    };
    let violations = acc
        .paoi
        .iter()
        .filter(|&&a| a > cfg.paoi_threshold_ms)
        .count();
    let violation_freq = if n == 0 {
        f64::NAN
    } else {
        violations as f64 / n as f64
    };
    let time_avg = if duration > 0.0 {
        acc.area / duration
    } else {
        f64::NAN
    };
    let low_confidence = successes < MIN_CONFIDENT_SUCCESSES;
    if low_confidence {
        log::warn!("only {successes} successful deliveries; estimates are low-confidence");
    }
    Ok(SimResult {
        time_avg_aoi_ms: time_avg,
        mean_paoi_ms: mean_paoi,
        paoi_samples: acc.paoi,
        violation_freq,
        arrivals,
        drops,
        successes,
        failures,
        attempts,
        sim_duration_ms: duration,
        seed: cfg.seed,
        stream: cfg.stream,
        low_confidence,
        trace: acc.trace,
    })
}

/// Runs independent simulations in parallel; output order follows input.
pub fn simulate_many(cfgs: &[SimConfig]) -> Vec<Result<SimResult>> {
    cfgs.par_iter().map(simulate).collect()
}

/// Right-continuous empirical CDF of PAoI samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&s| s <= x);
        below as f64 / self.sorted.len() as f64
    }

    /// Kolmogorov–Smirnov distance to a continuous reference CDF.
    pub fn ks_distance<F: Fn(f64) -> f64>(&self, reference: F) -> f64 {
        let n = self.sorted.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = reference(x);
            d = d
                .max((f - i as f64 / n).abs())
                .max(((i + 1) as f64 / n - f).abs());
        }
        d
    }
}

pub fn empirical_paoi_cdf(result: &SimResult) -> Result<EmpiricalCdf> {
    empirical_cdf(&result.paoi_samples)
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    if samples.is_empty() {
        return domain("empirical CDF needs at least one sample");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

/// Empirical violation frequency with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationEstimate {
    pub freq: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

impl ViolationEstimate {
    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

pub const WILSON_Z95: f64 = 1.959_963_984_540_054;

pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn empirical_violation(result: &SimResult, zeta: f64) -> ViolationEstimate {
    violation_estimate(&result.paoi_samples, zeta)
}

pub fn violation_estimate(samples: &[f64], zeta: f64) -> ViolationEstimate {
    let hits = samples.iter().filter(|&&a| a > zeta).count();
    let n = samples.len();
    let (ci_low, ci_high) = wilson_interval(hits, n, WILSON_Z95);
    let freq = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    ViolationEstimate {
        freq,
        ci_low,
        ci_high,
        samples: n,
    }
}
