use criterion::{black_box, criterion_group, criterion_main, Criterion};
use reversal_core::{theoretical_mult_entropy, EntropyTarget};

fn oracle(c: &mut Criterion) {
    for d in [2, 3] {
        c.bench_function(&format!("factor-pair oracle d={d}"), |b| {
            b.iter(|| black_box(theoretical_mult_entropy(d, EntropyTarget::FactorPair).unwrap()))
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = oracle
}
criterion_main!(benches);
