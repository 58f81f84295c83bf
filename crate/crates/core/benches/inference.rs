//! Inference and training-step throughput on the rayon pool versus a single
//! worker. Build with `--no-default-features` to time the fully sequential
//! code path instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixer_tts::adaptors::{encode_duration, PitchStats};
use mixer_tts::audio_text::{Example, SymbolVocab};
use mixer_tts::model::{Model, ModelConfig};
use mixer_tts::numerics::par;
use mixer_tts::params::{Ctx, ParamStore};
use mixer_tts::synthetic::random_example;
use mixer_tts::training::group_gradients;
use mixer_tts::Tape;

fn model_with_fixed_durations(cfg: &ModelConfig) -> (Model, ParamStore<f32>) {
    let (model, mut store) = Model::from_config::<f32>(cfg, 1).expect("valid config");
    store.zero(model.duration_predictor.out_w);
    store
        .set(
            model.duration_predictor.out_b,
            mixer_tts::Tensor::full(&[1], encode_duration(3) as f32),
        )
        .expect("bias shape");
    (model, store)
}

fn letters(n: usize, seed: u64) -> Vec<usize> {
    let vocab = SymbolVocab::default();
    let ids: Vec<usize> = ('a'..='z').filter_map(|c| vocab.id(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| ids[rng.random_range(0..ids.len())]).collect()
}

fn infer(model: &Model, store: &ParamStore<f32>, symbols: &[usize]) -> usize {
    let tape = Tape::no_grad();
    let out = model
        .forward_infer(&Ctx::eval(&tape, store), symbols, None, 1.0)
        .expect("inference");
    out.mel_lengths[0]
}

fn inference(c: &mut Criterion) {
    let (model, store) = model_with_fixed_durations(&ModelConfig::reduced(192, 3, 4));
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    for len in [64, 256] {
        let symbols = letters(len, len as u64);
        group.bench_with_input(BenchmarkId::new("parallel", len), &symbols, |b, s| {
            b.iter(|| infer(&model, &store, black_box(s)))
        });
        group.bench_with_input(BenchmarkId::new("single_worker", len), &symbols, |b, s| {
            b.iter(|| par::single_worker(|| infer(&model, &store, black_box(s))))
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = ModelConfig::reduced(128, 2, 2);
    let (model, store) = Model::from_config::<f32>(&cfg, 2).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let examples: Vec<Example> = (0..4)
        .map(|i| random_example(&format!("b{i}"), &mut rng, 20, 80, cfg.n_mels))
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = model.batch::<f32>(&refs).expect("batch");
    let stats = PitchStats::from_contours(examples.iter().map(|e| &e.pitch));
    let step = || group_gradients(&model, &store, std::slice::from_ref(&batch), &stats, None).expect("gradients");

    let mut group = c.benchmark_group("gradients");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| black_box(step())));
    group.bench_function("single_worker", |b| b.iter(|| black_box(par::single_worker(step))));
    group.finish();
}

criterion_group!(benches, inference, training_step);
criterion_main!(benches);
