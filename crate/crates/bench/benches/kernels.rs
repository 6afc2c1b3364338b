use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use envrec_core::dataset::{generate_target, GeneratorConfig};
use envrec_core::evaluation::majority_vote;
use envrec_core::model::{build_network, random_batch, train};
use envrec_core::numerics::matmul;
use envrec_core::{ArchConfig, LossMode, SamplerMode, Tensor, TrainConfig};

fn bench_matmul(c: &mut Criterion) {
    let a = Tensor::new(
        vec![64, 192],
        (0..64 * 192).map(|i| (i % 7) as f64 * 0.1).collect(),
    )
    .unwrap();
    let b = Tensor::new(
        vec![192, 64],
        (0..192 * 64).map(|i| (i % 5) as f64 * 0.2).collect(),
    )
    .unwrap();
    c.bench_function("matmul 64x192x64", |bench| {
        bench.iter(|| matmul(&a, &b).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    let arch = ArchConfig::default();
    let names: Vec<String> = GeneratorConfig::target_default().class_names();
    let net = build_network(&arch, &names, 0).unwrap();
    let batch = random_batch(&arch, names.len(), 32, 1).unwrap();
    c.bench_function("loss and gradients, batch 32", |bench| {
        bench.iter(|| net.loss_and_gradients(&batch).unwrap())
    });
}

fn bench_epoch(c: &mut Criterion) {
    let target = generate_target(&GeneratorConfig::target_default(), 0).unwrap();
    let net = build_network(&ArchConfig::default(), target.classes(), 0).unwrap();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 32,
        learning_rate: 0.003,
        momentum: 0.9,
        loss: LossMode::Weighted,
        sampler: SamplerMode::ClassBalanced,
        seed: 0,
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one target epoch", |bench| {
        bench.iter_batched(
            || net.clone(),
            |n| train(n, &target.frame_view(), &config).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn bench_vote(c: &mut Criterion) {
    let frames: Vec<usize> = (0..90).map(|i| (i * 7 + i / 3) % 4).collect();
    c.bench_function("majority vote, 90 frames", |bench| {
        bench.iter(|| majority_vote(&frames, 4).unwrap())
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_backward,
    bench_epoch,
    bench_vote
);
criterion_main!(benches);
