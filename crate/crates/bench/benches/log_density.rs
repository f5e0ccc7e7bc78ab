use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rankmargin_bench::season;
use rankmargin_core::{HierarchicalPosterior, LogDensity, ModelVariant};

fn log_density(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_density_gradient");
    for variant in [ModelVariant::Global, ModelVariant::CountryIntercepts] {
        for n in [500, 1400, 5000] {
            let (data, spec) = season(variant, n, 1);
            let target = HierarchicalPosterior::new(&spec, &data).unwrap();
            let x = vec![0.1; target.dim()];
            let mut grad = vec![0.0; target.dim()];
            group.bench_with_input(BenchmarkId::new(format!("{variant:?}"), n), &n, |b, _| {
                b.iter(|| target.log_density_gradient(black_box(&x), &mut grad))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, log_density);
criterion_main!(benches);
