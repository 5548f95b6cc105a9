use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pkmdp::env::{exact_return, EnvName};
use pkmdp::optimizer::{optimize_policy, OptimizerConfig};
use pkmdp::severed::SeveredModel;
use pkmdp_bench::{buffer, spec, uniform_episode};

const CASES: [(EnvName, u8); 4] =
    [(EnvName::LoadUnload, 1), (EnvName::LoadUnload, 3), (EnvName::CloggedPipe, 2), (EnvName::CloggedPipe, 3)];

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward_h100");
    for (env, variant) in CASES {
        let spec = spec(env, variant);
        let episode = uniform_episode(&spec, 100, 1);
        let severed = SeveredModel::new(spec.known());
        let terms = severed.prepare_policy(&spec.uniform_policy()).unwrap();
        group.bench_with_input(BenchmarkId::new(env.as_str(), variant), &episode, |b, ep| {
            b.iter(|| severed.forward_backward(&terms, black_box(&ep.y_seq), black_box(&ep.z_seq)).unwrap())
        });
    }
    group.finish();
}

fn estimate_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_gradient_40x100");
    for (env, variant) in CASES {
        let spec = spec(env, variant);
        let (buffer, policy) = buffer(&spec, 40, 100);
        group.bench_function(BenchmarkId::new(env.as_str(), variant), |b| {
            b.iter(|| buffer.estimate_gradient(black_box(&policy)).unwrap())
        });
    }
    group.finish();
}

fn exact_returns(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_return_h100");
    for (env, variant) in CASES {
        let spec = spec(env, variant);
        let policy = spec.uniform_policy();
        group.bench_function(BenchmarkId::new(env.as_str(), variant), |b| {
            b.iter(|| exact_return(&spec, black_box(&policy), 100).unwrap())
        });
    }
    group.finish();
}

fn greedy_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimize_policy_20x100");
    group.sample_size(10);
    let config = OptimizerConfig { max_iterations: 10, ..OptimizerConfig::default() };
    for (env, variant) in [(EnvName::LoadUnload, 3), (EnvName::CloggedPipe, 3)] {
        let spec = spec(env, variant);
        let (buffer, policy) = buffer(&spec, 20, 100);
        group.bench_function(BenchmarkId::new(env.as_str(), variant), |b| {
            b.iter(|| optimize_policy(&buffer, black_box(&policy), &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, estimate_gradient, exact_returns, greedy_step);
criterion_main!(benches);
