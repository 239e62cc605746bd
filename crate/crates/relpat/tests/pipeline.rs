//! End-to-end library pipeline: vocabulary, word vectors, encoder training,
//! similarity evaluation, and artifact round-trips, all on an in-memory
//! synthetic corpus.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use relpat::corpus::{TokenLookup, Vocabulary};
use relpat::embeddings::{train_word_sgns, SgnsConfig};
use relpat::encoders::{load_model, save_model, Arch, ComposeOrder};
use relpat::eval::{evaluate_similarity, render_eval_tsv, SimilarityDataset, SimilarityPair};
use relpat::patterns::PatternLexicon;
use relpat::trainer::{train_encoder, TrainConfig};

const PATTERNS: [&str; 4] = ["lead to", "result in", "differ from", "deviate from"];
const CTX_A: [&str; 6] = ["risk", "danger", "harm", "damage", "loss", "injury"];
const CTX_B: [&str; 6] = ["gap", "contrast", "shift", "mismatch", "split", "offset"];

fn synth_corpus(sentences: usize, seed: u64) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(sentences);
    for i in 0..sentences {
        let p = PATTERNS[i % PATTERNS.len()];
        let ctx: &[&str] = if i % PATTERNS.len() < 2 { &CTX_A } else { &CTX_B };
        let pick = |rng: &mut StdRng| ctx[rng.gen_range(0..ctx.len())];
        lines.push(format!(
            "{} {} {} {} {}",
            pick(&mut rng),
            pick(&mut rng),
            p,
            pick(&mut rng),
            pick(&mut rng)
        ));
    }
    lines.join("\n")
}

fn rated_pairs() -> SimilarityDataset {
    let mk = |p1: &str, p2: &str, ratings: [u8; 5]| SimilarityPair {
        pattern1: p1.to_string(),
        pattern2: p2.to_string(),
        ratings,
        mean: ratings.iter().map(|&r| r as f64).sum::<f64>() / 5.0,
    };
    SimilarityDataset {
        pairs: vec![
            mk("lead to", "result in", [7, 6, 7, 6, 7]),
            mk("differ from", "deviate from", [6, 7, 6, 6, 7]),
            mk("lead to", "differ from", [1, 2, 1, 2, 1]),
            mk("result in", "deviate from", [2, 1, 1, 1, 2]),
        ],
    }
}

#[test]
fn corpus_to_report_pipeline() {
    let corpus_text = synth_corpus(160, 5);
    let vocab = Vocabulary::build(corpus_text.as_bytes(), 1).unwrap();
    let sentences: Vec<Vec<usize>> = corpus_text
        .lines()
        .map(|l| vocab.lookup_sentence(l))
        .collect();

    let emb = train_word_sgns(
        &sentences,
        &vocab,
        &SgnsConfig {
            dim: 8,
            subsample: 0.0,
            epochs: 15,
            min_count: 1,
            lr: 0.05,
            seed: 3,
            deterministic: true,
            ..SgnsConfig::default()
        },
    )
    .unwrap();

    let lexicon_text = PATTERNS.join("\n");
    let dir = tempfile::tempdir().unwrap();
    let lex_path = dir.path().join("patterns.txt");
    std::fs::write(&lex_path, &lexicon_text).unwrap();
    let lexicon = PatternLexicon::load(&lex_path, Some(&emb.words)).unwrap();

    let id_corpus: Vec<Vec<usize>> = corpus_text
        .lines()
        .map(|l| emb.words.lookup_sentence(l))
        .collect();
    let (model, report) = train_encoder(
        &id_corpus,
        &lexicon,
        &emb,
        &TrainConfig {
            arch: Arch::Gru,
            subsample: 0.0,
            epochs: 10,
            lr: 0.05,
            seed: 3,
            deterministic: true,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(report.epochs.len(), 10);
    assert_eq!(report.total_occurrences, 160);
    assert!(report.epochs.iter().all(|e| e.mean_lp.unwrap() < 0.0));

    let eval = evaluate_similarity(&model, &emb.words, &rated_pairs(), true).unwrap();
    assert_eq!(eval.n_pairs, 4);
    assert_eq!(eval.uncomputable, 0);
    let rho = eval.overall.expect("defined correlation");
    assert!(rho > 0.5, "synonym pairs should outrank cross pairs, rho {rho}");

    // Round-tripped models evaluate identically, byte for byte.
    let model_path = dir.path().join("model.json");
    save_model(&model, &model_path).unwrap();
    let reloaded = load_model(&model_path).unwrap();
    assert_eq!(model, reloaded);
    let again = evaluate_similarity(&reloaded, &emb.words, &rated_pairs(), true).unwrap();
    assert_eq!(
        render_eval_tsv(&eval, true),
        render_eval_tsv(&again, true)
    );
}

#[test]
fn backward_and_forward_order_models_differ() {
    let corpus_text = synth_corpus(60, 9);
    let vocab = Vocabulary::build(corpus_text.as_bytes(), 1).unwrap();
    let sentences: Vec<Vec<usize>> = corpus_text
        .lines()
        .map(|l| vocab.lookup_sentence(l))
        .collect();
    let emb = train_word_sgns(
        &sentences,
        &vocab,
        &SgnsConfig {
            dim: 6,
            subsample: 0.0,
            epochs: 4,
            min_count: 1,
            seed: 11,
            deterministic: true,
            ..SgnsConfig::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let lex_path = dir.path().join("patterns.txt");
    std::fs::write(&lex_path, PATTERNS.join("\n")).unwrap();
    let lexicon = PatternLexicon::load(&lex_path, Some(&emb.words)).unwrap();
    let id_corpus: Vec<Vec<usize>> = corpus_text
        .lines()
        .map(|l| emb.words.lookup_sentence(l))
        .collect();

    let mut outputs = Vec::new();
    for order in [ComposeOrder::Backward, ComposeOrder::Forward] {
        let (model, _) = train_encoder(
            &id_corpus,
            &lexicon,
            &emb,
            &TrainConfig {
                arch: Arch::Rnn,
                order,
                subsample: 0.0,
                epochs: 3,
                lr: 0.05,
                seed: 11,
                deterministic: true,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(model.order, order);
        outputs.push(model);
    }
    assert_ne!(outputs[0].params.mats, outputs[1].params.mats);
}
