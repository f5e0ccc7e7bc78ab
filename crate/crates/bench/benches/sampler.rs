use criterion::{criterion_group, criterion_main, Criterion};
use rankmargin_bench::season;
use rankmargin_core::sampler::sample;
use rankmargin_core::{HierarchicalPosterior, ModelVariant, SamplerConfig};

fn short_fit(c: &mut Criterion) {
    let (data, spec) = season(ModelVariant::Global, 1400, 2);
    let target = HierarchicalPosterior::new(&spec, &data).unwrap();
    let config = SamplerConfig { chains: 1, warmup: 200, samples: 200, seed: 3, ..Default::default() };
    let mut group = c.benchmark_group("nuts");
    group.sample_size(10);
    group.bench_function("global_1400_matches_400_iterations", |b| b.iter(|| sample(&target, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, short_fit);
criterion_main!(benches);
