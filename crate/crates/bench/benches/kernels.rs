use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kerrcat::cat::{build_projectors, fgr_rate, ChaoticClassification};
use kerrcat::classical::{stationary_points, stroboscopic_map, PhasePoint};
use kerrcat::floquet::{exact_evolution, propagate_period, PropagatorOptions};
use kerrcat::fockspace::{build_effective_hamiltonian, eigendecompose};
use kerrcat::phasespace::{husimi_many, GridSpec};
use kerrcat_bench::{drive, params};
use std::hint::black_box;

fn spectrum(c: &mut Criterion) {
    let p = params(1e-3, 50.0, 10.0);
    let mut g = c.benchmark_group("eigendecompose");
    for dim in [120, 250] {
        let h = build_effective_hamiltonian(&p, dim).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(dim), &h, |b, h| b.iter(|| eigendecompose(black_box(h)).unwrap()));
    }
    g.finish();
}

fn propagation(c: &mut Criterion) {
    let p = params(1e-3, 10.0, 0.2);
    let d = drive(&p);
    let mut g = c.benchmark_group("propagate_period");
    g.sample_size(10);
    for dim in [32, 48] {
        g.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, &dim| {
            b.iter(|| propagate_period(black_box(&d), dim, &PropagatorOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn husimi(c: &mut Criterion) {
    let p = params(1e-3, 10.0, 0.2);
    let s = eigendecompose(&build_effective_hamiltonian(&p, 60).unwrap()).unwrap();
    let states: Vec<_> = s.states[..20].iter().collect();
    let grid = GridSpec::square(14.0, 128);
    c.bench_function("husimi_20_states_128", |b| b.iter(|| husimi_many(black_box(&states), &grid).unwrap()));
}

fn leak_rate(c: &mut Criterion) {
    let p = params(1e-3, 10.0, 0.2);
    let dim = 120;
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let s = eigendecompose(&h).unwrap();
    let u = exact_evolution(&h, 4.0 * std::f64::consts::PI).unwrap();
    let c_ = ChaoticClassification {
        regular_indices: (0..20).collect(),
        chaotic_indices: (20..60).collect(),
        ..ChaoticClassification::all_regular(60)
    };
    c.bench_function("projectors_and_rate_120", |b| {
        b.iter(|| {
            let pr = build_projectors(black_box(&c_), &s).unwrap();
            fgr_rate(&pr.chaotic, &u, &s.states[0]).unwrap()
        })
    });
}

fn classical(c: &mut Criterion) {
    let p = params(1e-3, 50.0, 10.0);
    let d = drive(&p);
    let q = PhasePoint::new(0.5 * stationary_points(&p).unwrap().wells[1].x, 0.0);
    c.bench_function("stroboscopic_map", |b| b.iter(|| stroboscopic_map(black_box(&d), q, 1e-12).unwrap()));
}

criterion_group!(benches, spectrum, propagation, husimi, leak_rate, classical);
criterion_main!(benches);
