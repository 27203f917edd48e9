use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dmlm_bench::{recurrent, transformer};
use dmlm_core::corpus::BOS;
use dmlm_core::mixture::{inference_step, DecodeState};
use dmlm_core::Flavor;

fn mixture_step(c: &mut Criterion) {
    let prefix: Vec<u32> = (0..32).map(|i| 4 + i % 500).collect();
    let mut group = c.benchmark_group("decode-32-tokens");
    for window in [16, 64] {
        let models = [
            ("recurrent", recurrent(1000, 128, Flavor::Dmlm)),
            ("transformer", transformer(1000, 128, Flavor::Dmlm)),
        ];
        for (name, model) in &models {
            group.bench_with_input(BenchmarkId::new(*name, window), model, |b, m| {
                b.iter(|| {
                    let mut state = DecodeState::new(m, window);
                    for &id in std::iter::once(&BOS).chain(&prefix) {
                        inference_step(m, &mut state, id).unwrap();
                    }
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, mixture_step);
criterion_main!(benches);
