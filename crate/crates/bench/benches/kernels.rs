use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mode_atlas_bench::{particles, samples};
use mode_atlas_core::attention::{scaled_bessel_i, velocity_direct, velocity_fourier};
use mode_atlas_core::edgeworth::standardized_cumulants;
use mode_atlas_core::gkde::field_grid;
use mode_atlas_core::kacrice::{exact_moments, kr_density};
use mode_atlas_core::find_modes;

fn modes(c: &mut Criterion) {
    let mut g = c.benchmark_group("find_modes");
    g.sample_size(20);
    for &(n, beta) in &[(1_000usize, 100.0), (10_000, 300.0), (100_000, 300.0)] {
        let s = samples(n, beta);
        g.bench_with_input(BenchmarkId::new("n", n), &s, |b, s| b.iter(|| find_modes(black_box(s)).unwrap()));
    }
    g.finish();

    let s = samples(10_000, 300.0);
    let h = s.bandwidth() / 8.0;
    let len = ((s.max() - s.min()) / h) as usize;
    c.bench_function("field_grid/n=10000", |b| b.iter(|| field_grid(black_box(&s), s.min(), h, len).unwrap()));
}

fn kac_rice(c: &mut Criterion) {
    c.bench_function("kr_density", |b| {
        b.iter(|| kr_density(&exact_moments(black_box(2.7), 300.0, 100_000)).unwrap())
    });
    c.bench_function("standardized_cumulants", |b| b.iter(|| standardized_cumulants(black_box(2.7), 100.0).unwrap()));
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("attention_velocity");
    let beta = 81.0;
    let coeffs = scaled_bessel_i(beta);
    for &n in &[200usize, 1000] {
        let p = particles(n, beta);
        g.bench_with_input(BenchmarkId::new("direct", n), &p, |b, p| b.iter(|| velocity_direct(black_box(p.angles()), beta)));
        g.bench_with_input(BenchmarkId::new("fourier", n), &p, |b, p| {
            b.iter(|| velocity_fourier(black_box(p.angles()), beta, &coeffs))
        });
    }
    g.finish();
}

criterion_group!(benches, modes, kac_rice, attention);
criterion_main!(benches);
