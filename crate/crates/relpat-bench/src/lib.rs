//! Fixture builders shared by the criterion benches.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use relpat::embeddings::WordVectors;
use relpat::math::Mat;
use relpat::patterns::RelationalPattern;

/// A vocabulary of `n` synthetic tokens with uniform random vectors.
pub fn bench_words(n: usize, d: usize, seed: u64) -> WordVectors {
    let mut rng = StdRng::seed_from_u64(seed);
    let tokens: Vec<String> = (0..n).map(|i| format!("tok{i}")).collect();
    let mut mat = Mat::zeros(n, d);
    for v in mat.data.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    WordVectors::new(tokens, mat).unwrap()
}

/// An in-vocabulary pattern over the first `len` tokens.
pub fn bench_pattern(words: &WordVectors, len: usize) -> RelationalPattern {
    let surface: Vec<String> = (0..len).map(|i| format!("tok{i}")).collect();
    RelationalPattern::from_surface(&surface.join(" "), Some(words))
}

/// Sentences of ids over an `n`-token vocabulary, planted so pattern
/// matching has hits.
pub fn bench_sentences(count: usize, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut s: Vec<usize> = (0..12).map(|_| rng.gen_range(0..n)).collect();
            s[4] = 0;
            s[5] = 1;
            s
        })
        .collect()
}
