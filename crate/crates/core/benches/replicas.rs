//! Replica throughput: the rayon data-parallel path against the sequential
//! fallback, on both samplers.
//!
//! Run `cargo bench` for the parallel build and
//! `cargo bench --no-default-features` to measure the sequential-only build
//! (where `replicate` degrades to the sequential loop by construction).

use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gmrf_sampler::coupler::{FlatCoupler, StratifiedCoupler};
use gmrf_sampler::exec::{replica_seed, replicate, replicate_seq};
use gmrf_sampler::marks::MarkStore;
use gmrf_sampler::sampler::{GaussianRun, GaussianSampler, SamplerOptions, TruncatedSampler};
use gmrf_sampler::schedule::LevelSchedule;
use gmrf_sampler::NeighborhoodSpec;

fn truncated_batch(c: &mut Criterion) {
    let coupler = FlatCoupler::new(0.1, 2.0).unwrap();
    let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
    let sampler = TruncatedSampler::new(&coupler, spec, SamplerOptions::default()).unwrap();
    let draw = |i: u32| {
        let mut store = MarkStore::new(replica_seed(42, i), 1);
        sampler
            .sample(&mut store, &mut HashMap::new(), &[0])
            .unwrap()
            .0
    };
    let n = 2000u32;
    let mut group = c.benchmark_group("truncated_2k_samples");
    group.bench_function("replicate", |b| b.iter(|| black_box(replicate(n, draw))));
    group.bench_function("replicate_seq", |b| {
        b.iter(|| black_box(replicate_seq(n, draw)))
    });
    group.finish();
}

fn gaussian_batch(c: &mut Criterion) {
    let schedule = LevelSchedule::new(0.1, 3.5, 0.01, 1).unwrap();
    let coupler = StratifiedCoupler::new(schedule).unwrap();
    let sampler = GaussianSampler::new(&coupler, SamplerOptions::default()).unwrap();
    let draw = |i: u32| {
        let mut store = MarkStore::new(replica_seed(99, i), 1);
        sampler
            .sample(&mut store, &mut GaussianRun::default(), &[0])
            .unwrap()
            .0
    };
    let n = 500u32;
    let mut group = c.benchmark_group("gaussian_500_samples");
    group.bench_function("replicate", |b| b.iter(|| black_box(replicate(n, draw))));
    group.bench_function("replicate_seq", |b| {
        b.iter(|| black_box(replicate_seq(n, draw)))
    });
    group.finish();
}

criterion_group!(benches, truncated_batch, gaussian_batch);
criterion_main!(benches);
