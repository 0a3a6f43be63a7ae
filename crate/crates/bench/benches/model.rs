use bmim_bench::dataset;
use bmim_core::kernels::gram_matrix;
use bmim_core::likelihood::integrated_log_posterior;
use bmim_core::{run_chain, Hyperparameters, IndexSpec, KernelConfig, SamplerSettings, WeightSet};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    for n in [100, 300] {
        let data = dataset(n, 18, 1);
        let spec = IndexSpec::from_sizes(&[8, 2, 8]).unwrap();
        let w = WeightSet::new(spec.sizes().iter().map(|&s| vec![0.2; s]).collect(), &spec).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| gram_matrix(data.x().view(), &spec, &w, KernelConfig::Gaussian).unwrap())
        });
    }
    group.finish();
}

fn log_posterior(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrated_log_posterior");
    for n in [100, 300] {
        let data = dataset(n, 18, 2);
        let spec = IndexSpec::single(18);
        let w = WeightSet::new(vec![vec![0.1; 18]], &spec).unwrap();
        let k = gram_matrix(data.x().view(), &spec, &w, KernelConfig::Gaussian).unwrap();
        let hyper = Hyperparameters::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| integrated_log_posterior(data.y().view(), data.z().view(), k.view(), 2.0, &hyper).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let data = dataset(150, 18, 3);
    let spec = IndexSpec::from_sizes(&[8, 2, 8]).unwrap();
    let settings = SamplerSettings { iterations: 10, burn_in: 5, thin: 1, chains: 1, ..Default::default() };
    let mut group = c.benchmark_group("sampler");
    group.sample_size(10);
    group.bench_function("10 iterations, N=150, P=18", |b| {
        b.iter(|| run_chain(&data, &spec, KernelConfig::Gaussian, &Hyperparameters::default(), &settings).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gram, log_posterior, sweep);
criterion_main!(benches);
