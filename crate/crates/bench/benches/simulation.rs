//! Cost of the finite-size simulator building blocks.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dsm_curves::sim::linalg::{cholesky_in_place, matmul_nt};
use dsm_curves::sim::rng::Purpose;
use dsm_curves::sim::{self, feature_moments, GapDraw, NoiseAverage};
use dsm_curves::ActivationProfile;

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    let (d, n, p) = (200, 400, 400);
    let w = sim::gaussian_rows(1, Purpose::Features, 0, p, d);
    let x = sim::gaussian_rows(1, Purpose::Latent, 0, n, d);
    let rho = ActivationProfile::relu();
    for noise in [NoiseAverage::Exact { order: 3 }, NoiseAverage::Sampled { draws: 8 }] {
        let label = match noise {
            NoiseAverage::Exact { order } => format!("exact{order}"),
            NoiseAverage::Sampled { draws } => format!("sampled{draws}"),
        };
        g.bench_function(format!("feature_moments/{label}/d={d},n={n},p={p}"), |b| {
            b.iter(|| feature_moments(black_box(&w), &x, 0.1, &rho, noise, 1).unwrap())
        });
    }
    let spd = {
        let mut m = matmul_nt(&w, &w);
        for i in 0..p {
            m.data[i * p + i] += 1.0;
        }
        m
    };
    g.bench_function(format!("cholesky/p={p}"), |b| {
        b.iter_batched(|| spd.clone(), |mut m| cholesky_in_place(&mut m).unwrap(), BatchSize::LargeInput)
    });
    let f = ActivationProfile::parse("hermite:[0,1]").unwrap();
    let sigma = ActivationProfile::parse("hermite:[0.975,0.223]").unwrap();
    let draw = GapDraw::new(200, 100, 1);
    g.bench_function("gap/d=200,n_mc=2000", |b| {
        b.iter(|| sim::gap_for_draw(&f, black_box(&draw), &sigma, 2000, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);
