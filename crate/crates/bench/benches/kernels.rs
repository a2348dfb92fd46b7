use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use threathunt_bench::{random_dataset, random_tensor};
use threathunt_core::metrics::{build_report, confusion};
use threathunt_core::model::train;
use threathunt_core::{Classifier, LabelCodec, ModelConfig, SeededRng, Tape};

fn matmul(c: &mut Criterion) {
    let a = random_tensor(95, 64, 1);
    let b = random_tensor(64, 95, 2);
    c.bench_function("matmul_95x64x95", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.constant(a.clone());
            let y = tape.constant(b.clone());
            black_box(tape.matmul(x, y).unwrap());
        })
    });
}

fn forward(c: &mut Criterion) {
    let model = Classifier::new(ModelConfig::default(), &mut SeededRng::new(1)).unwrap();
    let batch = random_tensor(16, 95, 3);
    c.bench_function("forward_default_16_rows", |bench| {
        bench.iter(|| black_box(model.forward(&batch).unwrap()))
    });
}

fn train_step(c: &mut Criterion) {
    let data = random_dataset(64, 95, 4);
    let cfg = ModelConfig {
        epochs: 1,
        batch_size: 64,
        ..ModelConfig::default()
    };
    let model = Classifier::new(cfg, &mut SeededRng::new(5)).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one_batch_of_64", |bench| {
        bench.iter(|| {
            let mut m = model.clone();
            black_box(train(&mut m, &data, None, &mut SeededRng::new(6)).unwrap());
        })
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = SeededRng::new(7);
    let t: Vec<usize> = (0..100_000).map(|_| rng.index(15)).collect();
    let p: Vec<usize> = (0..100_000).map(|_| rng.index(15)).collect();
    let codec = LabelCodec::edge_iiot();
    c.bench_function("report_100k_rows", |bench| {
        bench.iter(|| black_box(build_report(&confusion(&t, &p, 15).unwrap(), &codec)))
    });
}

criterion_group!(benches, matmul, forward, train_step, metrics);
criterion_main!(benches);
