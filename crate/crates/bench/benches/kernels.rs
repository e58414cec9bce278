use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use metaaug::data::{gen_task, TaskSpec};
use metaaug::loss::{compute_loss, LossKind};
use metaaug::meta::{Mode, RunConfig, Trainer};
use metaaug::metrics::hd95;
use metaaug::{SegNet, Tensor};

fn patch_batch(n: usize, size: usize) -> Tensor {
    let data = (0..n * size * size).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect();
    Tensor::new(vec![n, 1, size, size], data).unwrap()
}

fn network(c: &mut Criterion) {
    let net = SegNet::new(SegNet::default_specs(1, 2), 1).unwrap();
    let batch = patch_batch(10, 32);
    let labels: Vec<u8> = (0..10 * 32 * 32).map(|i| (i % 13 == 0) as u8).collect();
    c.bench_function("forward 10x32x32", |b| b.iter(|| net.forward(&batch).unwrap()));
    c.bench_function("forward+backward 10x32x32", |b| {
        b.iter(|| {
            let cache = net.forward_cached(&batch).unwrap();
            let loss = compute_loss(LossKind::SoftDice, cache.logits(), &labels, None).unwrap();
            net.backward_cached(&cache, &loss.grad).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let n = 96;
    let disc = |cx: f64, cy: f64, r: f64| -> Vec<bool> {
        (0..n * n)
            .map(|i| ((i % n) as f64 - cx).hypot((i / n) as f64 - cy) <= r)
            .collect()
    };
    let (a, b) = (disc(40.0, 45.0, 12.0), disc(44.0, 47.0, 10.0));
    c.bench_function("hd95 96x96", |bench| bench.iter(|| hd95(&a, &b, n, n).unwrap()));
}

fn meta_iteration(c: &mut Criterion) {
    let spec = TaskSpec {
        size: 64,
        train_count: 8,
        val_count: 4,
        test_count: 1,
        ..TaskSpec::default()
    };
    let (train, val, _) = gen_task(&spec, 3).unwrap();
    let config = RunConfig {
        mode: Mode::Joint,
        cadence: 1,
        ..RunConfig::default()
    };
    let trainer = Trainer::new(config, &train, &val).unwrap();
    let state = trainer.init_state().unwrap();
    c.bench_function("joint policy iteration", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| trainer.iteration(&mut s).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = network, metrics, meta_iteration
}
criterion_main!(benches);
