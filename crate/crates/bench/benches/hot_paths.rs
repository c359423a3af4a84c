use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wncs_aoi::channel::{avg_blep_mrc, avg_blep_quadrature, FblConfig};
use wncs_aoi::control::simulate_closed_loop;
use wncs_aoi::optimizer::{optimize_dinkelbach, optimize_exhaustive};
use wncs_aoi::sim::simulate;
use wncs_aoi_bench::{budget, optimizer_params, plant, sim_config, PT_DBM};

fn blep(c: &mut Criterion) {
    let fbl = FblConfig::reference();
    let mut g = c.benchmark_group("avg_blep");
    for k in [1, 4, 16] {
        let b = budget(k);
        g.bench_with_input(BenchmarkId::new("closed_form", k), &b, |bench, b| {
            bench.iter(|| avg_blep_mrc(black_box(b), &fbl))
        });
        g.bench_with_input(BenchmarkId::new("quadrature", k), &b, |bench, b| {
            bench.iter(|| avg_blep_quadrature(black_box(b), &fbl).unwrap())
        });
    }
    g.finish();
}

fn queue(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for k in [1, 4] {
        let cfg = sim_config(k, 100_000);
        g.bench_with_input(BenchmarkId::new("nr_100k", k), &cfg, |bench, cfg| {
            bench.iter(|| simulate(cfg).unwrap())
        });
    }
    g.finish();
}

fn optimizer(c: &mut Criterion) {
    let p = optimizer_params(PT_DBM);
    c.bench_function("optimize/dinkelbach", |b| {
        b.iter(|| optimize_dinkelbach(black_box(&p)).unwrap())
    });
    c.bench_function("optimize/exhaustive", |b| {
        b.iter(|| optimize_exhaustive(black_box(&p)).unwrap())
    });
}

fn closed_loop(c: &mut Criterion) {
    let plant = plant();
    let steps = vec![3u32; 100_000];
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    g.bench_function("100k_steps", |b| {
        b.iter(|| simulate_closed_loop(&plant, &steps, 7, steps.len()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, blep, queue, optimizer, closed_loop);
criterion_main!(benches);
