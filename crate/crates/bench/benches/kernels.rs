use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tvde_bench::{angle_pipeline, tica_data};
use tvde_core::cvexpr::{compile, parse};
use tvde_core::metad::run_metad;
use tvde_core::reweight::{mbar_solve, MbarInput, DEFAULT_MAX_ITER, DEFAULT_TOL};
use tvde_core::tica::{self, TicaOptions};
use tvde_core::{MetadConfig, PotentialSpec, Thermostat};

fn cv_evaluation(c: &mut Criterion) {
    let p = angle_pipeline();
    let ast = parse(&compile(&p).unwrap().text).unwrap();
    let x = [-0.55, 1.44];
    c.bench_function("pipeline value+gradient", |b| b.iter(|| p.value_and_gradient(black_box(&x)).unwrap()));
    c.bench_function("compiled expression eval", |b| b.iter(|| ast.eval(black_box(&x))));
    c.bench_function("compiled expression grad", |b| b.iter(|| ast.grad(black_box(&x))));
}

fn tica_fit(c: &mut Criterion) {
    let x = tica_data(20_000, 9);
    let dense = TicaOptions { n_components: 2, ..TicaOptions::default() };
    let sparse = TicaOptions { penalty: 0.05, ..dense };
    c.bench_function("tica dense 20k x 10", |b| b.iter(|| tica::fit(&[&x], 10, &dense).unwrap()));
    c.bench_function("tica sparse 20k x 10", |b| b.iter(|| tica::fit(&[&x], 10, &sparse).unwrap()));
}

fn metad_steps(c: &mut Criterion) {
    let p = PotentialSpec::mueller_brown();
    let cv = angle_pipeline();
    let cfg = MetadConfig::default().with_training_range(-3.0, 3.0).unwrap();
    let th = Thermostat::default();
    c.bench_function("metad 10k steps, neural CV", |b| {
        b.iter(|| run_metad(&p, &th, &cv, &cfg, &[-0.55, 1.44], 10_000, 1).unwrap())
    });
}

fn mbar(c: &mut Criterion) {
    let ks = [1.0, 1.5, 2.0, 3.0, 4.0];
    let n = 2_000;
    // Evenly spaced points over three standard deviations of each state.
    let xs: Vec<f64> = ks
        .iter()
        .flat_map(|k| (0..n).map(move |i| ((i as f64 + 0.5) / n as f64 * 2.0 - 1.0) * 3.0 / f64::sqrt(*k)))
        .collect();
    let u: Vec<Vec<f64>> = ks.iter().map(|k| xs.iter().map(|x| 0.5 * k * x * x).collect()).collect();
    let input = MbarInput { u, counts: vec![n; ks.len()] };
    for accelerate in [false, true] {
        let name = if accelerate { "mbar 5x2000 accelerated" } else { "mbar 5x2000 plain" };
        c.bench_function(name, |b| b.iter(|| mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, accelerate).unwrap()));
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = cv_evaluation, tica_fit, metad_steps, mbar
}
criterion_main!(benches);
