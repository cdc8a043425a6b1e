use cen_bench::{encode_once, model, snapshots, Shape};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn encode_all(c: &mut Criterion) {
    let shape = Shape::default();
    let hist = snapshots(shape, 8, 7);
    let mut group = c.benchmark_group("encode_all");
    group.sample_size(10);
    for m in [1usize, 2, 4, 8] {
        let net = model(shape, m, 0);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| encode_once(black_box(&net), black_box(&hist)))
        });
    }
    group.finish();
}

criterion_group!(benches, encode_all);
criterion_main!(benches);
