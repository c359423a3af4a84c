//! Acceptance gate. Prints one PASS/FAIL line per criterion, plus indented
//! detail lines, and exits non-zero if any criterion fails.

use std::process::{Command, Stdio};
use std::time::Instant;

use rand::Rng;
use wncs_aoi::aoi::{metrics, paoi_cdf, paoi_violation, Scheme, TrafficParams};
use wncs_aoi::channel::{avg_blep_mrc, avg_blep_quadrature, FblConfig, LinkBudget};
use wncs_aoi::control::{
    covariance_from_aoi, error_covariance, simulate_closed_loop, PlantModel, StateTrace,
};
use wncs_aoi::optimizer::{
    ee_paoi_ratio, feasible_range, gain_crossing_db, optimize_dinkelbach, optimize_exhaustive,
    snr_threshold, OptimizerParams,
};
use wncs_aoi::sim::{empirical_paoi_cdf, run_rng};
use wncs_aoi_cli::commands::{self, csv_bytes, sim_row};
use wncs_aoi_cli::figures::{fig5, figure_csv, FigureId};
use wncs_aoi_cli::ExperimentConfig;

const SIGMA2_DBM: f64 = 23.0;

struct Gate {
    failed: Vec<&'static str>,
}

impl Gate {
    fn record(&mut self, id: &'static str, title: &str, pass: bool, details: &[String]) {
        println!("{} {id:<4} {title}", if pass { "PASS" } else { "FAIL" });
        for d in details {
            println!("          {d}");
        }
        if !pass {
            self.failed.push(id);
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn scan() -> Vec<f64> {
    (28..=40).map(f64::from).collect()
}

fn c1(gate: &mut Gate) {
    let fbl = FblConfig::reference();
    let start = Instant::now();
    let (mut worst_diff, mut worst_err) = (0.0f64, 0.0f64);
    let mut points = 0;
    for i in 0..=30 {
        let g = 10f64.powf(-1.0 + 3.0 * f64::from(i) / 30.0);
        for k in 1..=8 {
            let b = LinkBudget::from_mean_snr(g, k).unwrap();
            let q = avg_blep_quadrature(&b, &fbl).unwrap();
            worst_diff = worst_diff.max((avg_blep_mrc(&b, &fbl) - q.value).abs());
            worst_err = worst_err.max(q.abs_error);
            points += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate.record(
        "C1",
        "closed-form vs quadrature average BLEP",
        worst_diff <= 1e-3 && worst_err <= 1e-8 && secs < 5.0,
        &[format!(
            "{points} points: max |diff| {worst_diff:.2e} (<= 1e-3), max quadrature error {worst_err:.2e} (<= 1e-8), {secs:.2} s (< 5 s)"
        )],
    );
}

fn c2(gate: &mut Gate) {
    let mut details = Vec::new();
    let mut pass = true;
    let base = ExperimentConfig::default();
    let mut cases: Vec<(String, ExperimentConfig, f64, u32)> = Vec::new();
    for eps in [0.0, 0.3, 0.5] {
        let mut cfg = base.clone();
        cfg.simulation.forced_success_prob = Some(1.0 - eps);
        cases.push((format!("forced eps {eps}"), cfg, 35.0, 1));
    }
    for pt in [32.0, 35.0] {
        for k in [1, 4] {
            cases.push((format!("P_t {pt} dBm, K {k}"), base.clone(), pt, k));
        }
    }
    for (i, (label, cfg, pt, k)) in cases.into_iter().enumerate() {
        let start = Instant::now();
        let (row, _) = sim_row(&cfg, Scheme::Nr, pt, k, i as u64).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let (ep, ea) = (
            rel(row.avg_paoi_sim, row.avg_paoi_theory),
            rel(row.avg_aoi_sim, row.avg_aoi_theory),
        );
        let ok = ep <= 0.02 && ea <= 0.02 && secs < 30.0;
        pass &= ok;
        details.push(format!(
            "{label}: PAoI {:.4} vs {:.4} ({:.2}%), AoI {:.4} vs {:.4} ({:.2}%), {secs:.2} s{}",
            row.avg_paoi_sim,
            row.avg_paoi_theory,
            100.0 * ep,
            row.avg_aoi_sim,
            row.avg_aoi_theory,
            100.0 * ea,
            if ok { "" } else { "  <-- out of tolerance" }
        ));
    }
    gate.record(
        "C2",
        "average AoI/PAoI closed forms vs simulation (100k packets, 2%)",
        pass,
        &details,
    );
}

fn c3(gate: &mut Gate) {
    let mut cfg = ExperimentConfig::default();
    let (_, r) = sim_row(&cfg, Scheme::Nr, 35.0, 4, 0).unwrap();
    let tp = commands::theory_for(&cfg, Scheme::Nr, 35.0, 4).unwrap();
    let ks = empirical_paoi_cdf(&r)
        .unwrap()
        .ks_distance(|x| paoi_cdf(x, &tp));

    cfg.simulation.forced_success_prob = Some(0.5);
    let (_, r_half) = sim_row(&cfg, Scheme::Nr, 35.0, 1, 1).unwrap();
    let tp_half = commands::theory_for(&cfg, Scheme::Nr, 35.0, 1).unwrap();
    let ks_half = empirical_paoi_cdf(&r_half)
        .unwrap()
        .ks_distance(|x| paoi_cdf(x, &tp_half));
    let mean_dist = 2.0 * 0.5 + 1.0 / (1.0 - 0.5);
    let mean_thm = metrics(Scheme::Nr, &tp_half).unwrap().avg_paoi_ms;
    gate.record(
        "C3",
        "PAoI distribution vs empirical CDF at P_t 35 dBm, K 4",
        ks <= 0.02,
        &[
            format!("KS distance {ks:.4} (<= 0.02) at eps_K {:.2e}", tp.avg_blep()),
            format!(
                "not asserted: KS {ks_half:.4} at eps 0.5; distribution mean {mean_dist:.3} ms vs average PAoI {mean_thm:.3} ms, simulated {:.3} ms",
                r_half.mean_paoi_ms
            ),
        ],
    );
}

fn c4(gate: &mut Gate) {
    let fbl = FblConfig::reference();
    let zeta = 3.0;
    let mut best = (f64::INFINITY, 0.0);
    for pt in (30..=36).map(f64::from) {
        let v = |k| {
            let tp = TrafficParams::new(
                1.0,
                0.5,
                avg_blep_mrc(&LinkBudget::new(pt, SIGMA2_DBM, k).unwrap(), &fbl),
                1,
            )
            .unwrap();
            paoi_violation(zeta, &tp)
        };
        let ratio = v(2) / v(1);
        if ratio < best.0 {
            best = (ratio, pt);
        }
    }
    let reduction = best.0 <= 0.25;

    let mut cfg = ExperimentConfig::default();
    cfg.sweep.pt_dbm = (30..=36).map(f64::from).collect();
    cfg.sweep.zeta_ms = vec![zeta];
    let rows = fig5(&cfg).unwrap();
    let low: Vec<_> = rows.iter().filter(|r| r.epsilon <= 0.005).collect();
    let inside = low
        .iter()
        .filter(|r| r.ci_low <= r.violation_analytic && r.violation_analytic <= r.ci_high)
        .count();
    let wilson = !low.is_empty() && inside == low.len();
    gate.record(
        "C4",
        "violation reduction K=2 vs K=1 at zeta 3 ms, and Wilson coverage",
        reduction && wilson,
        &[
            format!(
                "best K2/K1 violation ratio {:.3} at P_t {} dBm (needs <= 0.25){}",
                best.0,
                best.1,
                if reduction {
                    ""
                } else {
                    "  <-- not reached with noise 23 dBm"
                }
            ),
            format!(
                "{inside}/{} low-error points (eps_K <= 0.005) inside the Wilson 95% interval",
                low.len()
            ),
        ],
    );
}

fn c5(gate: &mut Gate) {
    let mut details = Vec::new();
    let mut pass = true;
    let r16 = 10.0 * snr_threshold(&FblConfig::reference()).log10();
    pass &= (r16 - 8.98).abs() < 0.01;
    details.push(format!("threshold at R = 1.6: {r16:.4} dB (~8.98)"));
    for (bits, r) in [(100, 1.0), (160, 1.6), (200, 2.0)] {
        let fbl = FblConfig::new(bits, 100, 0.005).unwrap();
        let thr = 10.0 * snr_threshold(&fbl).log10();
        for lm in [10.0, 20.0, 100.0] {
            let mut p = OptimizerParams::reference(0.0, SIGMA2_DBM);
            p.fbl = fbl;
            p.arrival_rate = lm / fbl.service_time_ms();
            let cross = gain_crossing_db(2, &p, thr - 10.0, thr + 10.0).unwrap();
            let ok = (cross - thr).abs() <= 1.5;
            pass &= ok;
            details.push(format!("R {r}, lambda*M {lm}: crossing {cross:.3} dB vs threshold {thr:.3} dB (delta {:+.3})", cross - thr));
        }
    }
    gate.record(
        "C5",
        "single-connection SNR threshold vs gain crossing (+-1.5 dB)",
        pass,
        &details,
    );
}

fn c6(gate: &mut Gate) {
    let mut rng = run_rng(6, 0);
    let (mut draws, mut tried) = (0, 0);
    let (mut agree, mut max_iter) = (0, 0);
    while draws < 50 {
        tried += 1;
        let p = OptimizerParams {
            arrival_rate: rng.random_range(0.25..2.0),
            fbl: FblConfig::reference(),
            noise_variance_dbm: rng.random_range(18.0..28.0),
            transmit_power_dbm: rng.random_range(26.0..42.0),
            max_total_power_dbm: 0.0,
            max_violation: 10f64.powf(rng.random_range(-4.0..-1.5)),
            paoi_threshold_ms: rng.random_range(3.0..12.0),
            k_search_cap: 64,
        };
        let p = OptimizerParams {
            max_total_power_dbm: p.transmit_power_dbm + rng.random_range(3.0..20.0),
            ..p
        };
        if feasible_range(&p).is_err() {
            continue;
        }
        draws += 1;
        let e = optimize_exhaustive(&p).unwrap();
        let d = optimize_dinkelbach(&p).unwrap();
        if e.k_opt == d.k_opt || (e.eta_opt - d.eta_opt).abs() <= 1e-9 {
            agree += 1;
        }
        max_iter = max_iter.max(d.iterations);
    }
    gate.record(
        "C6",
        "Dinkelbach vs exhaustive search on random feasible draws",
        agree == 50 && max_iter <= 100,
        &[format!(
            "{agree}/50 agree ({tried} draws for 50 feasible), max iterations {max_iter} (<= 100)"
        )],
    );
}

fn c7(gate: &mut Gate) {
    let fbl = FblConfig::reference();
    let mut details = Vec::new();

    let mut k_mono = true;
    for pt in [28.0, 32.0, 35.0, 40.0] {
        let (mut prev_a, mut prev_v) = (f64::INFINITY, f64::INFINITY);
        for k in 1..=16 {
            let tp = TrafficParams::new(
                1.0,
                0.5,
                avg_blep_mrc(&LinkBudget::new(pt, SIGMA2_DBM, k).unwrap(), &fbl),
                1,
            )
            .unwrap();
            let a = metrics(Scheme::Nr, &tp).unwrap().avg_aoi_ms;
            let v = paoi_violation(8.0, &tp);
            k_mono &= a <= prev_a && v <= prev_v;
            (prev_a, prev_v) = (a, v);
        }
    }
    details.push(format!(
        "average AoI and violation non-increasing in K = 1..16: {k_mono}"
    ));

    let mut arq_ok = true;
    let mut grid_points = 0;
    for lambda in [0.1, 0.5, 1.0, 1.9] {
        for m in [0.05, 0.2, 0.5] {
            if 1.0 / lambda < m {
                continue;
            }
            for eps in [0.0, 0.01, 0.1, 0.3, 0.6, 0.9] {
                let tp = TrafficParams::new(lambda, m, eps, 1).unwrap();
                // The two coincide at eps = 0; allow for rounding there.
                let nr = metrics(Scheme::Nr, &tp).unwrap().avg_aoi_ms;
                arq_ok &= metrics(Scheme::Arq, &tp).unwrap().avg_aoi_ms <= nr * (1.0 + 1e-12);
                grid_points += 1;
            }
        }
    }
    details.push(format!(
        "ARQ <= NR average AoI on {grid_points} grid points: {arq_ok}"
    ));

    let mut kr_ok = true;
    for i in 0..=20 {
        let g = 0.5 * 100f64.powf(f64::from(i) / 20.0);
        for k in 2..=4 {
            let b = LinkBudget::from_mean_snr(g, k).unwrap();
            let nr = TrafficParams::for_scheme(Scheme::Nr, 1.0, &fbl, &b).unwrap();
            let kr = TrafficParams::for_scheme(Scheme::Kr, 1.0, &fbl, &b).unwrap();
            kr_ok &= metrics(Scheme::Nr, &nr).unwrap().avg_aoi_ms
                < metrics(Scheme::Kr, &kr).unwrap().avg_aoi_ms;
        }
    }
    details.push(format!(
        "NR < KR average AoI for K = 2..4, mean SNR 0.5..50: {kr_ok}"
    ));
    gate.record(
        "C7",
        "monotonicity and scheme ordering",
        k_mono && arq_ok && kr_ok,
        &details,
    );
}

fn c8(gate: &mut Gate) {
    let mut best = (0.0, 0.0, 0);
    let mut best_free = (0.0, 0.0, 0);
    for pt in scan() {
        let p = OptimizerParams::reference(pt, SIGMA2_DBM);
        let single = ee_paoi_ratio(1, &p).unwrap();
        if let Ok(r) = optimize_exhaustive(&p) {
            if r.eta_opt / single > best.0 {
                best = (r.eta_opt / single, pt, r.k_opt);
            }
        }
        let free = optimize_exhaustive(&OptimizerParams {
            max_violation: 1.0,
            ..p
        })
        .unwrap();
        if free.eta_opt / single > best_free.0 {
            best_free = (free.eta_opt / single, pt, free.k_opt);
        }
    }
    gate.record(
        "C8",
        "EE-PAoI gain of the optimum over one connection (>= 10)",
        best.0 >= 10.0,
        &[
            format!(
                "max eta(k_opt)/eta(1) = {:.3} at P_t {} dBm (k_opt {})",
                best.0, best.1, best.2
            ),
            format!(
                "without the violation constraint: {:.3} at P_t {} dBm (k_opt {})",
                best_free.0, best_free.1, best_free.2
            ),
        ],
    );
}

fn c9(gate: &mut Gate) {
    let thr_db = 10.0 * snr_threshold(&FblConfig::reference()).log10();
    let run = |max_violation: f64| {
        let ks: Vec<(f64, u32)> = scan()
            .into_iter()
            .map(|pt| {
                let p = OptimizerParams {
                    max_violation,
                    ..OptimizerParams::reference(pt, SIGMA2_DBM)
                };
                (pt, optimize_exhaustive(&p).unwrap().k_opt)
            })
            .collect();
        let mono = ks.windows(2).all(|w| w[1].1 <= w[0].1);
        let single = ks
            .iter()
            .filter(|(pt, _)| pt - SIGMA2_DBM >= thr_db + 1.5)
            .all(|&(_, k)| k == 1);
        (ks, mono, single)
    };
    let (ks, mono, single) = run(1e-3);
    let (ks_free, mono_free, single_free) = run(1.0);
    let fmt = |ks: &[(f64, u32)]| {
        ks.iter()
            .map(|(_, k)| k.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    gate.record(
        "C9",
        "optimal K non-increasing in P_t and 1 above threshold + 1.5 dB",
        mono && single,
        &[
            format!("k_opt over 28..40 dBm: [{}]; non-increasing {mono}, equals 1 above {:.2} dB: {single}", fmt(&ks), thr_db + 1.5),
            format!(
                "without the violation constraint: [{}]; non-increasing {mono_free}, equals 1: {single_free}",
                fmt(&ks_free)
            ),
        ],
    );
}

fn c10(gate: &mut Gate) {
    let plant = PlantModel::smart_grid(0.5).unwrap();
    let mut details = Vec::new();
    let mut cov_ok = true;
    for delta in [1u32, 2, 4, 8] {
        let steps = 1_000_000;
        let t = simulate_closed_loop(&plant, &vec![delta; steps], u64::from(delta), steps).unwrap();
        let emp = StateTrace::second_moment(&t.errors, t.dim, 64);
        let theory = error_covariance(delta, &plant);
        let r = rel(emp.trace(), theory.trace());
        let scale = theory.amax();
        let entry = (&emp - &theory).amax() / scale;
        cov_ok &= r <= 0.05 && entry <= 0.05;
        details.push(format!(
            "Delta {delta}: error covariance trace off by {:.2}%, worst entry {:.2}% of the largest (<= 5%)",
            100.0 * r,
            100.0 * entry
        ));
    }
    let traces: Vec<f64> = (0..=64)
        .map(|d| covariance_from_aoi(d, &plant).trace())
        .collect();
    let trace_mono = traces.windows(2).all(|w| w[1] >= w[0]);
    details.push(format!(
        "state covariance trace non-decreasing for Delta 0..64: {trace_mono}"
    ));

    let out = commands::control(&ExperimentConfig::default()).unwrap();
    let pr_max = 1e-3;
    let paoi_ok = out.paoi_violation_theory <= pr_max && out.paoi_violation_sim.ci_low <= pr_max;
    let state_ok = out.state_violation.freq <= pr_max;
    details.push(format!(
        "case study at 35 dBm, K {}: PAoI violation analytic {:.3e}, simulated {:.3e} [{:.3e}, {:.3e}] (<= 1e-3)",
        out.k_opt,
        out.paoi_violation_theory,
        out.paoi_violation_sim.freq,
        out.paoi_violation_sim.ci_low,
        out.paoi_violation_sim.ci_high
    ));
    details.push(format!(
        "state violation {:.3e} over {} steps above {:.3e} (<= 1e-3; reference value 4.7e-4)",
        out.state_violation.freq, out.state_violation.samples, out.state_threshold
    ));
    gate.record(
        "C10",
        "control bridge",
        cov_ok && trace_mono && paoi_ok && state_ok,
        &details,
    );
}

fn c11(gate: &mut Gate) {
    let mut details = Vec::new();
    let cfg = ExperimentConfig::default();
    let mut pass = true;

    let mut sweep = cfg.clone();
    sweep.sweep.pt_dbm = vec![32.0, 35.0];
    sweep.sweep.k = vec![1, 4];
    let same = |f: &dyn Fn() -> Vec<u8>| f() == f();
    let checks: [(&str, bool); 4] = [
        (
            "simulate",
            same(&|| csv_bytes(&commands::simulate(&sweep).unwrap()).unwrap()),
        ),
        ("fig4", same(&|| figure_csv(&cfg, FigureId::Fig4).unwrap())),
        ("fig5", same(&|| figure_csv(&cfg, FigureId::Fig5).unwrap())),
        (
            "control",
            same(&|| {
                let out = commands::control(&cfg).unwrap();
                let mut bytes = out.report.into_bytes();
                bytes.extend(commands::state_trace_csv(&out.trace).unwrap());
                bytes
            }),
        ),
    ];
    for (name, ok) in checks {
        pass &= ok;
        details.push(format!("{name}: identical on re-run: {ok}"));
    }

    let bin = env!("CARGO_BIN_EXE_wncs-aoi");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(bin)
            .args([
                "figures", "--figure", "fig3", "--seed", "11", "--pt-dbm", "30,34", "--out",
            ])
            .arg(d.path())
            .stdout(Stdio::null())
            .status()
            .unwrap();
        pass &= status.success();
    }
    let files: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| std::fs::read(d.path().join("fig3.csv")).unwrap_or_default())
        .collect();
    let cli_ok = !files[0].is_empty() && files[0] == files[1];
    pass &= cli_ok;
    details.push(format!(
        "binary, two runs of fig3 with --seed 11: identical: {cli_ok}"
    ));
    gate.record(
        "C11",
        "determinism of simulation-backed outputs",
        pass,
        &details,
    );
}

fn main() {
    let mut gate = Gate { failed: Vec::new() };
    let criteria: [fn(&mut Gate); 11] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11];
    let start = Instant::now();
    for c in criteria {
        c(&mut gate);
    }
    println!(
        "---- {} of 11 criteria passed in {:.1} s",
        11 - gate.failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !gate.failed.is_empty() {
        println!("failed: {}", gate.failed.join(", "));
        std::process::exit(1);
    }
}
