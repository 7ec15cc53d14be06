use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use curvlab::curvature::{curvature_report, Route};
use curvlab::grassmann::{minimize_cm, MinimizeOptions};
use curvlab::models::{build_chart, ModelSpec};
use curvlab::slicing::{build_slicing, demo_perturbed_torus, lemma_sweep, SlicingOptions};
use curvlab::variation::{assemble_stability_operator, first_eigenpair, EigenOptions};
use curvlab_bench::{critical_level, model, random_tensor};

fn curvature(c: &mut Criterion) {
    let chart = model("conformal(product(sphere(3,1.0),torus(2)), [0.1,[0,0,0,1,1],0.2])");
    let x = [0.9, 1.3, 2.0, 0.25, 0.6];
    let mut g = c.benchmark_group("riemann");
    for (name, route) in [("analytic", Route::Analytic), ("finite_difference", Route::FiniteDifference)] {
        g.bench_function(name, |b| b.iter(|| curvature_report(&chart, black_box(&x), route).unwrap()));
    }
    g.finish();
}

fn grassmann(c: &mut Criterion) {
    let mut g = c.benchmark_group("minimize_cm");
    let opts = MinimizeOptions { restarts: 8, ..Default::default() };
    for (n, m) in [(4, 2), (6, 3), (8, 4)] {
        let t = random_tensor(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(format!("n{n}_m{m}")), &t, |b, t| b.iter(|| minimize_cm(t, m, &opts).unwrap()));
    }
    g.finish();
}

fn stability(c: &mut Criterion) {
    let mut g = c.benchmark_group("stability");
    g.sample_size(10);
    for r in [32, 64] {
        let (hs, w) = critical_level(r);
        g.bench_function(BenchmarkId::new("assemble", r), |b| b.iter(|| assemble_stability_operator(&hs, &w).unwrap()));
        let op = assemble_stability_operator(&hs, &w).unwrap();
        g.bench_function(BenchmarkId::new("first_eigenpair", r), |b| b.iter(|| first_eigenpair(&op, &EigenOptions::default()).unwrap()));
    }
    g.finish();
}

fn lemmas(c: &mut Criterion) {
    c.bench_function("lemma_sweep_7_3_x1000", |b| b.iter(|| lemma_sweep(7, 3, 1000, 0, -1e-12).unwrap()));
}

fn slicing(c: &mut Criterion) {
    let chart = build_chart(&demo_perturbed_torus(0.05)).unwrap();
    let flat = build_chart(&ModelSpec::torus(3)).unwrap();
    let opts = SlicingOptions { resolution: 24, ..Default::default() };
    let mut g = c.benchmark_group("build_slicing_r24");
    g.sample_size(10);
    g.bench_function("flat", |b| b.iter(|| build_slicing(&flat, 2, &opts).unwrap()));
    g.bench_function("perturbed", |b| b.iter(|| build_slicing(&chart, 2, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, curvature, grassmann, stability, lemmas, slicing);
criterion_main!(benches);
