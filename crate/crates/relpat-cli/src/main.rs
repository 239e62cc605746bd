//! Command-line surface for the relational pattern toolkit. Logs go to
//! stderr, data to stdout or --out. Exit codes: 0 success, 1 usage error,
//! 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use relpat::corpus::{read_tagged_sentences, TokenLookup, Vocabulary};
use relpat::embeddings::{EmbeddingTable, SgnsConfig, WordVectors};
use relpat::encoders::{load_model, save_model, Arch, ComposeOrder, EncoderModel};
use relpat::eval::{
    evaluate_similarity, inspect_gates, load_similarity_dataset, nearest_neighbors,
    render_eval_summary, render_eval_tsv, render_gate_tsv,
};
use relpat::patterns::{extract_patterns, PatternLexicon, RelationalPattern};
use relpat::relclass::{
    featurize, label_name, load_predictions, load_relation_dataset, save_bundle,
    score_predictions, train_classifier, ClassifierConfig, LinearClassifier, NUM_LABELS,
};
use relpat::trainer::{train_encoder, TrainConfig};
use relpat::Error;

#[derive(Parser)]
#[command(
    name = "relpat",
    version,
    about = "Distributed representations of multiword relational patterns",
    propagate_version = true
)]
struct Cli {
    /// Seed for all random initialization and sampling.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Force single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train word and context vectors with skip-gram negative sampling.
    TrainWords(TrainWordsArgs),
    /// Extract relational pattern candidates from a POS-tagged corpus.
    ExtractPatterns(ExtractPatternsArgs),
    /// Train a pattern encoder on pattern occurrences in a corpus.
    TrainEncoder(TrainEncoderArgs),
    /// Score a pattern-similarity dataset and report Spearman's rho.
    EvalSim(EvalSimArgs),
    /// Report the extreme gate activations of a gated encoder.
    InspectGates(InspectGatesArgs),
    /// List the lexicon patterns nearest to a query pattern.
    Nn(NnArgs),
    /// Train the relation classifier on entity-marked sentences.
    RelclassTrain(RelclassTrainArgs),
    /// Predict or score relation labels on entity-marked sentences.
    RelclassEval(RelclassEvalArgs),
}

#[derive(Args)]
struct TrainWordsArgs {
    /// Plain-text corpus, one sentence of whitespace-separated tokens per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output path for the word vectors.
    #[arg(long)]
    words: PathBuf,
    /// Output path for the context vectors.
    #[arg(long)]
    ctx: PathBuf,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    /// Context window width per side.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Negative samples per context word.
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    /// Subsampling threshold t; 0 disables.
    #[arg(long, default_value_t = 1e-5)]
    subsample: f64,
    /// Initial learning rate, decayed linearly.
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Drop tokens rarer than this.
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct ExtractPatternsArgs {
    /// Tagged corpus: surface TAB pos TAB lemma lines, blank line between sentences.
    #[arg(long)]
    tagged_corpus: PathBuf,
    /// Drop candidates with corpus frequency below this.
    #[arg(long, default_value_t = 100)]
    min_freq: u64,
    /// Drop candidate spans longer than this.
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    /// Lexicon of patterns to remove, e.g. evaluation patterns.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainEncoderArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Pattern lexicon, one space-separated pattern per line.
    #[arg(long)]
    patterns: PathBuf,
    /// Pre-trained word vectors (frozen during training).
    #[arg(long)]
    words: PathBuf,
    /// Pre-trained context vectors (frozen during training).
    #[arg(long)]
    ctx: PathBuf,
    #[arg(long, value_parser = parse_arch, default_value = "gac")]
    encoder: Arch,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 1e-5)]
    subsample: f64,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output path for the model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalSimArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    words: PathBuf,
    /// Similarity pairs: pattern TAB pattern TAB five ratings in 1..=7.
    #[arg(long)]
    dataset: PathBuf,
    /// Also report rho per pattern-length bucket.
    #[arg(long)]
    by_length: bool,
    /// Use the raw word vector for single-word patterns.
    #[arg(long, num_args = 0..=1, default_value_t = true,
          default_missing_value = "true", action = ArgAction::Set)]
    length1_raw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectGatesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    words: PathBuf,
    #[arg(long)]
    patterns: PathBuf,
    /// Moments reported per gate and direction.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NnArgs {
    /// Query pattern surface, e.g. "lead to".
    query: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    words: PathBuf,
    #[arg(long)]
    patterns: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RelclassTrainArgs {
    /// Training instances: id TAB label TAB sentence with <e1>/<e2> markers [TAB pos].
    #[arg(long)]
    dataset: PathBuf,
    /// Trained encoder model used to compose pattern vectors.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    words: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Output path for the classifier bundle.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelclassEvalArgs {
    /// Gold instances to score against.
    #[arg(long)]
    dataset: PathBuf,
    /// Predictions file (id TAB label) to score. Mutually exclusive with --model.
    #[arg(required_unless_present = "model", conflicts_with = "model")]
    predictions: Option<PathBuf>,
    /// Classifier bundle; predicts labels for the dataset, prints them as data,
    /// and logs the macro-F1 to stderr.
    #[arg(long, requires = "words")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    words: Option<PathBuf>,
    /// Output path for the data; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    Arch::parse(s).ok_or_else(|| format!("expected one of nocomp|add|rnn|lstm|gru|gac, got `{s}`"))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::NoGates(_) => 1,
        _ => 2,
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> relpat::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(Error::from),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Encoder output dimension must equal the word vector dimension.
fn check_dim(model: &EncoderModel, words: &WordVectors) -> relpat::Result<()> {
    if model.params.d != words.d() {
        return Err(Error::DimensionMismatch {
            expected: model.params.d,
            got: words.d(),
        });
    }
    Ok(())
}

fn read_id_corpus(path: &PathBuf, lookup: &dyn TokenLookup) -> relpat::Result<Vec<Vec<usize>>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut sentences = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(lookup.lookup_sentence(&line));
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(sentences)
}

fn run_train_words(a: TrainWordsArgs, seed: u64, deterministic: bool) -> relpat::Result<()> {
    let vocab = Vocabulary::from_file(&a.corpus, a.min_count)?;
    let sentences = read_id_corpus(&a.corpus, &vocab)?;
    let cfg = SgnsConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        subsample: a.subsample,
        lr: a.lr,
        epochs: a.epochs,
        min_count: a.min_count,
        seed,
        threads: a.threads,
        deterministic,
    };
    eprintln!(
        "train-words: {} sentences, vocabulary {}, d={}",
        sentences.len(),
        vocab.len(),
        a.dim
    );
    let table = train_word_sgns_logged(&sentences, &vocab, &cfg)?;
    table.save(&a.words, &a.ctx)?;
    eprintln!(
        "train-words: wrote {} and {}",
        a.words.display(),
        a.ctx.display()
    );
    Ok(())
}

fn train_word_sgns_logged(
    sentences: &[Vec<usize>],
    vocab: &Vocabulary,
    cfg: &SgnsConfig,
) -> relpat::Result<EmbeddingTable> {
    let start = std::time::Instant::now();
    let table = relpat::embeddings::train_word_sgns(sentences, vocab, cfg)?;
    eprintln!(
        "train-words: {} epochs in {:.2}s",
        cfg.epochs,
        start.elapsed().as_secs_f64()
    );
    Ok(table)
}

fn run_extract_patterns(a: ExtractPatternsArgs) -> relpat::Result<()> {
    let tagged = read_tagged_sentences(&a.tagged_corpus)?;
    let exclude = match &a.exclude {
        Some(path) => Some(PatternLexicon::load(path, None)?),
        None => None,
    };
    let lexicon = extract_patterns(&tagged, a.min_freq, a.max_len, exclude.as_ref())?;
    let mut body = String::new();
    for pat in lexicon.patterns() {
        body.push_str(&pat.surface());
        body.push('\n');
    }
    eprintln!(
        "extract-patterns: {} patterns from {} sentences",
        lexicon.len(),
        tagged.len()
    );
    emit(&a.out, &body)
}

fn run_train_encoder(a: TrainEncoderArgs, seed: u64, deterministic: bool) -> relpat::Result<()> {
    let emb = EmbeddingTable::load(&a.words, &a.ctx)?;
    let lexicon = PatternLexicon::load(&a.patterns, Some(&emb.words))?;
    let corpus = read_id_corpus(&a.corpus, &emb.words)?;
    let cfg = TrainConfig {
        arch: a.encoder,
        order: ComposeOrder::Backward,
        window: a.window,
        negatives: a.negatives,
        subsample: a.subsample,
        lr: a.lr,
        epochs: a.epochs,
        seed,
        threads: a.threads,
        deterministic,
        ..TrainConfig::default()
    };
    eprintln!(
        "train-encoder: {} over {} patterns, {} sentences",
        a.encoder.name(),
        lexicon.len(),
        corpus.len()
    );
    let (model, report) = train_encoder(&corpus, &lexicon, &emb, &cfg)?;
    eprintln!("epoch\tmean_lp\toccurrences\tseconds");
    for (i, e) in report.epochs.iter().enumerate() {
        let lp = e
            .mean_lp
            .map_or("NA".to_string(), |v| format!("{v:.6}"));
        eprintln!("{}\t{}\t{}\t{:.2}", i + 1, lp, e.occurrences, e.seconds);
    }
    save_model(&model, &a.out)?;
    eprintln!("train-encoder: wrote {}", a.out.display());
    Ok(())
}

fn run_eval_sim(a: EvalSimArgs) -> relpat::Result<()> {
    let model = load_model(&a.model)?;
    let words = WordVectors::load(&a.words)?;
    check_dim(&model, &words)?;
    let dataset = load_similarity_dataset(&a.dataset)?;
    let report = evaluate_similarity(&model, &words, &dataset, a.length1_raw)?;
    eprintln!("{}", render_eval_summary(&report));
    emit(&a.out, &render_eval_tsv(&report, a.by_length))
}

fn run_inspect_gates(a: InspectGatesArgs) -> relpat::Result<()> {
    let model = load_model(&a.model)?;
    let words = WordVectors::load(&a.words)?;
    check_dim(&model, &words)?;
    let lexicon = PatternLexicon::load(&a.patterns, Some(&words))?;
    let report = inspect_gates(&model, &words, &lexicon, a.top_k)?;
    emit(&a.out, &render_gate_tsv(&report))
}

fn run_nn(a: NnArgs) -> relpat::Result<()> {
    let model = load_model(&a.model)?;
    let words = WordVectors::load(&a.words)?;
    check_dim(&model, &words)?;
    let lexicon = PatternLexicon::load(&a.patterns, Some(&words))?;
    let query = RelationalPattern::from_surface(&a.query, Some(&words));
    let neighbors = nearest_neighbors(&query, &lexicon, &model, &words, a.top_k)?;
    let mut body = String::from("rank\tpattern\tcosine\n");
    for (rank, (surface, sim)) in neighbors.iter().enumerate() {
        body.push_str(&format!("{}\t{}\t{:.6}\n", rank + 1, surface, sim));
    }
    emit(&a.out, &body)
}

fn relclass_features(
    instances: &[relpat::relclass::RelationInstance],
    model: &EncoderModel,
    words: &WordVectors,
) -> (Vec<relpat::relclass::FeatureVector>, Vec<usize>) {
    let features = instances
        .iter()
        .map(|inst| featurize(inst, model, words))
        .collect();
    let labels = instances.iter().map(|inst| inst.label).collect();
    (features, labels)
}

fn run_relclass_train(a: RelclassTrainArgs) -> relpat::Result<()> {
    let model = load_model(&a.model)?;
    let words = WordVectors::load(&a.words)?;
    check_dim(&model, &words)?;
    let instances = load_relation_dataset(&a.dataset)?;
    let (features, labels) = relclass_features(&instances, &model, &words);
    let cfg = ClassifierConfig {
        lr: a.lr,
        epochs: a.epochs,
        ..ClassifierConfig::default()
    };
    let clf = train_classifier(&features, &labels, NUM_LABELS, &cfg)?;
    let preds: Vec<usize> = features.iter().map(|f| clf.predict(f)).collect();
    let train_f1 = relpat::relclass::macro_f1(&labels, &preds)?;
    eprintln!(
        "relclass-train: {} instances, training macro-F1 {:.4}",
        instances.len(),
        train_f1
    );
    save_bundle(&a.out, &clf, &model)?;
    eprintln!("relclass-train: wrote {}", a.out.display());
    Ok(())
}

fn predict_labels(
    clf: &LinearClassifier,
    encoder: &EncoderModel,
    words: &WordVectors,
    instances: &[relpat::relclass::RelationInstance],
) -> Vec<(String, usize)> {
    instances
        .iter()
        .map(|inst| (inst.id.clone(), clf.predict(&featurize(inst, encoder, words))))
        .collect()
}

fn run_relclass_eval(a: RelclassEvalArgs) -> relpat::Result<()> {
    let gold = load_relation_dataset(&a.dataset)?;
    match (&a.predictions, &a.model) {
        (Some(pred_path), None) => {
            let preds = load_predictions(pred_path)?;
            let f1 = score_predictions(&gold, &preds)?;
            eprintln!("relclass-eval: {} gold instances", gold.len());
            emit(&a.out, &format!("macro_f1\t{f1:.6}\n"))
        }
        (None, Some(model_path)) => {
            let (clf, encoder) = relpat::relclass::load_bundle(model_path)?;
            let words = WordVectors::load(a.words.as_ref().expect("clap enforces --words"))?;
            check_dim(&encoder, &words)?;
            if clf.dense_dim != 5 * words.d() {
                return Err(Error::DimensionMismatch {
                    expected: clf.dense_dim,
                    got: 5 * words.d(),
                });
            }
            let preds = predict_labels(&clf, &encoder, &words, &gold);
            let f1 = score_predictions(&gold, &preds)?;
            eprintln!("relclass-eval: macro-F1 {f1:.6} on {} instances", gold.len());
            let mut body = String::new();
            for (id, label) in &preds {
                body.push_str(&format!("{}\t{}\n", id, label_name(*label)));
            }
            emit(&a.out, &body)
        }
        _ => unreachable!("clap enforces exactly one of PREDICTIONS / --model"),
    }
}

fn dispatch(cli: Cli) -> relpat::Result<()> {
    let seed = cli.seed;
    let deterministic = cli.deterministic;
    match cli.command {
        Command::TrainWords(a) => run_train_words(a, seed, deterministic),
        Command::ExtractPatterns(a) => run_extract_patterns(a),
        Command::TrainEncoder(a) => run_train_encoder(a, seed, deterministic),
        Command::EvalSim(a) => run_eval_sim(a),
        Command::InspectGates(a) => run_inspect_gates(a),
        Command::Nn(a) => run_nn(a),
        Command::RelclassTrain(a) => run_relclass_train(a),
        Command::RelclassEval(a) => run_relclass_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relpat: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
