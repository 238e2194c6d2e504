use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddc_bench::{model, warm_start};
use ddc_core::harness::ModelFamily;
use ddc_core::linalg::solve_shifted;
use ddc_core::{apply_gamma, apply_lambda, frechet_gamma, frechet_lambda, newton_step_ev, newton_step_w};

const SIZES: [(ModelFamily, &[usize]); 2] = [
    (ModelFamily::Bus, &[10, 100, 200, 300]),
    (ModelFamily::Storable, &[12, 102, 202, 302]),
];

/// Linear solve only, with operator value and derivative precomputed.
fn step(c: &mut Criterion) {
    for (family, sizes) in SIZES {
        let mut group = c.benchmark_group(format!("step/{family}"));
        group.sample_size(10);
        for &n in sizes {
            let spec = model(family, n);
            let (w, ev) = warm_start(&spec);
            let dw = frechet_lambda(&spec, &w).unwrap();
            let rw = w.values() - apply_lambda(&spec, &w).unwrap().values();
            let dev = frechet_gamma(&spec, &ev).unwrap();
            let rev = ev.values() - apply_gamma(&spec, &ev).unwrap().values();
            group.bench_with_input(BenchmarkId::new("W", n), &n, |b, _| {
                b.iter(|| solve_shifted(dw.matrix(), &rw).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("EV", n), &n, |b, _| {
                b.iter(|| solve_shifted(dev.matrix(), &rev).unwrap())
            });
        }
        group.finish();
    }
}

/// Full Newton iteration: operator, derivative and linear solve.
fn total(c: &mut Criterion) {
    for (family, sizes) in SIZES {
        let mut group = c.benchmark_group(format!("total/{family}"));
        group.sample_size(10);
        for &n in sizes {
            let spec = model(family, n);
            let (w, ev) = warm_start(&spec);
            group.bench_with_input(BenchmarkId::new("W", n), &n, |b, _| {
                b.iter(|| newton_step_w(&spec, &w).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("EV", n), &n, |b, _| {
                b.iter(|| newton_step_ev(&spec, &ev).unwrap())
            });
        }
        group.finish();
    }
}

criterion_group!(benches, step, total);
criterion_main!(benches);
