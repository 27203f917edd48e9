use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use dmlm_bench::sentences;
use dmlm_core::corpus::build_vocab;
use dmlm_core::{derive_dependency_targets, prepare, PrepareConfig};

fn targets(c: &mut Criterion) {
    let corpus = sentences(2000, 40, 5000);
    let vocab = build_vocab(&corpus, 1, 50_000).unwrap();
    let mut group = c.benchmark_group("targets");
    group.throughput(Throughput::Elements(corpus.len() as u64));
    group.bench_function("derive", |b| {
        b.iter(|| corpus.iter().map(|s| derive_dependency_targets(s, &vocab)).collect::<Vec<_>>())
    });
    group.bench_function("prepare", |b| b.iter(|| prepare(&corpus, &PrepareConfig::default(), None).unwrap()));
    group.finish();
}

criterion_group!(benches, targets);
criterion_main!(benches);
