//! Encoder forward/backward timings at production dimensions.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use relpat::encoders::{backprop, encode, init_params, Arch, ComposeOrder, EncoderModel};
use relpat_bench::{bench_pattern, bench_words};

fn forward(c: &mut Criterion) {
    let d = 100;
    let words = bench_words(64, d, 7);
    let pattern = bench_pattern(&words, 4);
    let mut group = c.benchmark_group("encode_len4_d100");
    for arch in [Arch::Add, Arch::Rnn, Arch::Lstm, Arch::Gru, Arch::Gac] {
        let mut rng = StdRng::seed_from_u64(13);
        let model = EncoderModel {
            order: ComposeOrder::Backward,
            params: init_params(arch, d, &mut rng, None, None).unwrap(),
        };
        group.bench_with_input(BenchmarkId::from_parameter(arch.name()), &model, |b, m| {
            b.iter(|| encode(black_box(m), black_box(&pattern), black_box(&words)).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let d = 100;
    let words = bench_words(64, d, 7);
    let pattern = bench_pattern(&words, 4);
    let mut rng = StdRng::seed_from_u64(13);
    let grad: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("backprop_len4_d100");
    for arch in [Arch::Rnn, Arch::Lstm, Arch::Gru, Arch::Gac] {
        let model = EncoderModel {
            order: ComposeOrder::Backward,
            params: init_params(arch, d, &mut rng, None, None).unwrap(),
        };
        let trace = encode(&model, &pattern, &words).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(arch.name()),
            &(model, trace),
            |b, (m, t)| b.iter(|| backprop(black_box(m), black_box(t), black_box(&grad)).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
