use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use walkfield::infer::{fit_gaussian, fit_probit_genetics, simulate_genetics, GaussianModelSpec, GaussianVariant};
use walkfield::io::{columbus_fixture, standardize, synthetic_stream_network, StreamNetworkSpec};
use walkfield::{
    log_pseudo_det, simulate_population, stationary_precision, ConstrainedSolver, DemographyRates,
    PopulationSimConfig, PriorSpec, SamplerConfig,
};
use walkfield_bench::lattice;

fn precision(c: &mut Criterion) {
    let mut g = c.benchmark_group("precision_product");
    for side in [10, 20, 40] {
        let q = lattice(side).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(side * side), &q, |b, q| {
            b.iter(|| stationary_precision(black_box(q)))
        });
    }
    g.finish();
}

fn pseudo_det(c: &mut Criterion) {
    let mut g = c.benchmark_group("log_pseudo_det");
    g.sample_size(20);
    for side in [5, 10, 15] {
        let p = stationary_precision(&lattice(side).unwrap());
        g.bench_with_input(BenchmarkId::from_parameter(side * side), &p, |b, p| {
            b.iter(|| log_pseudo_det(black_box(p)).unwrap())
        });
    }
    g.finish();
}

fn constrained(c: &mut Criterion) {
    let mut g = c.benchmark_group("constrained_solve");
    for side in [5, 10, 15] {
        let q = lattice(side).unwrap();
        let m = side * side;
        let r: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        g.bench_with_input(BenchmarkId::new("factor", m), &q, |b, q| b.iter(|| ConstrainedSolver::new(black_box(q)).unwrap()));
        let solver = ConstrainedSolver::new(&q).unwrap();
        g.bench_with_input(BenchmarkId::new("solve", m), &r, |b, r| b.iter(|| solver.solve(black_box(r)).unwrap()));
    }
    g.finish();
}

fn gillespie(c: &mut Criterion) {
    let mut g = c.benchmark_group("gillespie");
    g.sample_size(10);
    let q = lattice(4).unwrap();
    let demo = DemographyRates::new(vec![0.6; 16], vec![0.6; 16]).unwrap();
    for scale in [100u64, 1_000] {
        let start = vec![scale; 16];
        let cfg = PopulationSimConfig::new(scale, 1.0, 1, 0.1);
        g.bench_with_input(BenchmarkId::from_parameter(scale), &cfg, |b, cfg| {
            b.iter(|| simulate_population(&q, &demo, black_box(&start), cfg).unwrap())
        });
    }
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let mut g = c.benchmark_group("sampler_100_iterations");
    g.sample_size(10);
    let col = columbus_fixture();
    let spec = GaussianModelSpec {
        response: col.crime.clone(),
        covariate: standardize(&col.home_values),
        variant: GaussianVariant::SpatialRandomEffect,
        graph: col.graph.clone(),
        priors: PriorSpec::default(),
    };
    let cfg = SamplerConfig::new(100, 0, 1);
    g.bench_function("gaussian_columbus", |b| b.iter(|| fit_gaussian(black_box(&spec), &cfg).unwrap()));

    let stream = synthetic_stream_network(&StreamNetworkSpec::default(), 1).unwrap();
    let (gspec, _) = simulate_genetics(&stream, &[0.0, 1.0, -1.0], &vec![vec![0.0, 0.3, -0.3]; 3], 10, 2).unwrap();
    g.bench_function("probit_stream", |b| b.iter(|| fit_probit_genetics(black_box(&gspec), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, precision, pseudo_det, constrained, gillespie, sampler);
criterion_main!(benches);
