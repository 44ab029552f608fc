//! Training-step and inference throughput, sequential vs rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use niqqud::corpus::Vocabulary;
use niqqud::dotter::Dotter;
use niqqud::gradcheck::random_batch;
use niqqud::network::{forward, init_params, loss_and_backward, Mode, ModelConfig};
use niqqud::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn train_step(c: &mut Criterion) {
    let vocab = Vocabulary::default().len();
    let config = ModelConfig::new(vocab).with_dims(64, 64);
    let params = init_params(&config, 0);
    let batch = random_batch(vocab, 16, 80, 1);
    let mut group = c.benchmark_group("train_step");
    group.throughput(Throughput::Elements((batch.size * batch.max_len) as u64));
    for (name, exec) in EXECS {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let (_, cache) = forward(&config, &params, &batch, Mode::Train { seed: 3 }, exec).unwrap();
                loss_and_backward(&config, &params, &cache.unwrap(), &batch, exec).unwrap()
            })
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let vocab = Vocabulary::default();
    let config = ModelConfig::new(vocab.len()).with_dims(64, 64);
    let text = "הילד הלך לבית הספר בבוקר וחזר הביתה בערב, ואז ישב לכתוב שיעורי בית. ".repeat(40);
    let mut group = c.benchmark_group("dot");
    group.throughput(Throughput::Bytes(text.len() as u64));
    for (name, exec) in EXECS {
        let dotter = Dotter::new(init_params(&config, 0), config.clone(), vocab.clone()).with_exec(exec);
        group.bench_function(name, |b| b.iter(|| dotter.dot(&text).unwrap()));
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = train_step, inference
}
criterion_main!(benches);
