use bitemp_core::{lambda_binary_search, lambda_fixed_point, normalize};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn activations(k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect()
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("lambda");
    for &k in &[2usize, 10, 100, 1000] {
        let a = activations(k);
        for &t in &[1.5, 4.0] {
            let id = format!("k{k}_t{t}");
            group.bench_with_input(BenchmarkId::new("fixed_point", &id), &a, |b, a| {
                b.iter(|| lambda_fixed_point(black_box(a), t, 200).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("bisection", &id), &a, |b, a| {
                b.iter(|| lambda_binary_search(black_box(a), t, 1e-10).unwrap())
            });
        }
        group.bench_with_input(BenchmarkId::new("bisection", format!("k{k}_t0.5")), &a, |b, a| {
            b.iter(|| lambda_binary_search(black_box(a), 0.5, 1e-10).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("normalize", format!("k{k}_t1")), &a, |b, a| {
            b.iter(|| normalize(black_box(a), 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
