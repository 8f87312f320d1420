use criterion::{black_box, criterion_group, criterion_main, Criterion};
use interconnect_core::finality::{catch_up_probability, min_confirmations};

fn probability(c: &mut Criterion) {
    c.bench_function("catch_up_probability q=0.3 z=24", |b| {
        b.iter(|| catch_up_probability(black_box(0.3), black_box(24)))
    });
    c.bench_function("catch_up_probability q=0.45 z=340", |b| {
        b.iter(|| catch_up_probability(black_box(0.45), black_box(340)))
    });
}

fn scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("min_confirmations eps=1e-3");
    for q in [0.1, 0.3, 0.45] {
        g.bench_function(format!("q={q}"), |b| b.iter(|| min_confirmations(black_box(q), 1e-3)));
    }
    g.finish();
}

criterion_group!(benches, probability, scan);
criterion_main!(benches);
