//! Side-by-side bench of the data-parallel inner loops and their sequential
//! fallbacks. Placeholder until the numeric modules land.

use criterion::{criterion_group, criterion_main, Criterion};

fn bench_placeholder(c: &mut Criterion) {
    c.bench_function("noop", |b| b.iter(|| 1 + 1));
}

criterion_group!(benches, bench_placeholder);
criterion_main!(benches);
