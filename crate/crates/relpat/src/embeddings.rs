//! Word-level skip-gram training with negative sampling, producing the fixed
//! word vectors and context vectors consumed by the pattern encoders, plus
//! the text vector-file format shared by all tools.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::corpus::{
    subsample_keep_prob, NegativeSampler, TokenLookup, Vocabulary, OOV,
};
use crate::hogwild::AtomicGrid;
use crate::math::{axpy, dot, sigmoid, Mat};
use crate::trainer::lr_at;
use crate::{Error, Result};

/// Per-worker seed stride for parallel training.
pub(crate) const WORKER_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// A token-indexed vector table: one d-dimensional row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    pub mat: Mat,
}

impl WordVectors {
    pub fn new(tokens: Vec<String>, mat: Mat) -> Result<Self> {
        if mat.rows != tokens.len() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                got: mat.rows,
            });
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(WordVectors { tokens, ids, mat })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn d(&self) -> usize {
        self.mat.cols
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vec(&self, id: usize) -> &[f64] {
        self.mat.row(id)
    }

    pub fn vec_of(&self, token: &str) -> Option<&[f64]> {
        self.id(token).map(|i| self.mat.row(i))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        save_vectors(path, &self.tokens, &self.mat)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let (tokens, mat) = load_vectors(path)?;
        WordVectors::new(tokens, mat)
    }
}

impl TokenLookup for WordVectors {
    fn token_id(&self, token: &str) -> Option<usize> {
        self.id(token)
    }
}

/// Word vectors x and context vectors x̃ over one token inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub words: WordVectors,
    pub ctx: Mat,
}

impl EmbeddingTable {
    pub fn new(words: WordVectors, ctx: Mat) -> Result<Self> {
        if ctx.rows != words.len() || ctx.cols != words.d() {
            return Err(Error::DimensionMismatch {
                expected: words.len() * words.d(),
                got: ctx.rows * ctx.cols,
            });
        }
        Ok(EmbeddingTable { words, ctx })
    }

    pub fn d(&self) -> usize {
        self.words.d()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn save<P: AsRef<Path>>(&self, words_path: P, ctx_path: P) -> Result<()> {
        self.words.save(words_path)?;
        save_vectors(ctx_path, self.words.tokens(), &self.ctx)
    }

    /// Loads paired vector files; token lists must agree line by line.
    pub fn load<P: AsRef<Path>>(words_path: P, ctx_path: P) -> Result<Self> {
        let words = WordVectors::load(words_path)?;
        let (ctx_tokens, ctx) = load_vectors(ctx_path)?;
        if ctx_tokens != words.tokens {
            return Err(Error::Model(
                "word and context vector files list different tokens".to_string(),
            ));
        }
        EmbeddingTable::new(words, ctx)
    }
}

/// Writes the classic text vector format: header `<count> <d>`, then one
/// line per token with d space-separated values at round-trip precision.
pub fn save_vectors<P: AsRef<Path>>(path: P, tokens: &[String], mat: &Mat) -> Result<()> {
    assert_eq!(tokens.len(), mat.rows);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", mat.rows, mat.cols)?;
    for (i, tok) in tokens.iter().enumerate() {
        write!(w, "{tok}")?;
        for v in mat.row(i) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_vectors<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Mat)> {
    let display = path.as_ref().display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let file = File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".to_string()))??;
    let mut parts = header.split_whitespace();
    let (n, d) = match (parts.next(), parts.next(), parts.next()) {
        (Some(n), Some(d), None) => (
            n.parse::<usize>()
                .map_err(|e| parse_err(1, format!("bad count: {e}")))?,
            d.parse::<usize>()
                .map_err(|e| parse_err(1, format!("bad dimension: {e}")))?,
        ),
        _ => return Err(parse_err(1, format!("bad header `{header}`"))),
    };

    let mut tokens = Vec::with_capacity(n);
    let mut mat = Mat::zeros(n, d);
    let mut row = 0usize;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if row >= n {
            return Err(parse_err(lineno + 2, "more rows than header declares".into()));
        }
        let mut fields = line.split_whitespace();
        let tok = fields
            .next()
            .ok_or_else(|| parse_err(lineno + 2, "empty row".into()))?;
        tokens.push(tok.to_string());
        let dst = mat.row_mut(row);
        let mut j = 0;
        for field in fields {
            if j >= d {
                return Err(parse_err(lineno + 2, "too many values".into()));
            }
            dst[j] = field
                .parse::<f64>()
                .map_err(|e| parse_err(lineno + 2, format!("bad value `{field}`: {e}")))?;
            j += 1;
        }
        if j != d {
            return Err(parse_err(
                lineno + 2,
                format!("expected {d} values, got {j}"),
            ));
        }
        row += 1;
    }
    if row != n {
        return Err(parse_err(
            row + 1,
            format!("header declares {n} rows, found {row}"),
        ));
    }
    Ok((tokens, mat))
}

/// Hyperparameters for word-level skip-gram training.
#[derive(Debug, Clone)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Context window width per side.
    pub window: usize,
    /// Negative samples per context word.
    pub negatives: usize,
    /// Subsampling threshold t; 0 disables subsampling.
    pub subsample: f64,
    pub lr: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            subsample: 1e-5,
            lr: 0.025,
            epochs: 5,
            min_count: 5,
            seed: 1,
            threads: 1,
            deterministic: false,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.subsample < 0.0 {
            return Err(Error::Config("subsample threshold must be >= 0".into()));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }
}

/// Loss and exact gradients of the negative-sampling objective
/// Σ_pos log σ(h·x̃) + Σ_neg log σ(−h·x̃) at a single prediction point.
#[derive(Debug, Clone)]
pub struct SgnsGrad {
    pub loss: f64,
    pub grad_h: Vec<f64>,
    pub grad_pos: Vec<Vec<f64>>,
    pub grad_neg: Vec<Vec<f64>>,
}

pub fn sgns_loss_grad(
    h: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
) -> Result<SgnsGrad> {
    let d = h.len();
    for v in positives.iter().chain(negatives) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    let mut loss = 0.0;
    let mut grad_h = vec![0.0; d];
    let mut grad_pos = Vec::with_capacity(positives.len());
    for c in positives {
        let z = dot(h, c);
        loss += crate::math::log_sigmoid(z);
        let g = 1.0 - sigmoid(z);
        axpy(g, c, &mut grad_h);
        let mut gc = vec![0.0; d];
        axpy(g, h, &mut gc);
        grad_pos.push(gc);
    }
    let mut grad_neg = Vec::with_capacity(negatives.len());
    for c in negatives {
        let z = dot(h, c);
        loss += crate::math::log_sigmoid(-z);
        let g = -sigmoid(z);
        axpy(g, c, &mut grad_h);
        let mut gc = vec![0.0; d];
        axpy(g, h, &mut gc);
        grad_neg.push(gc);
    }
    Ok(SgnsGrad {
        loss,
        grad_h,
        grad_pos,
        grad_neg,
    })
}

/// Uniform(−0.5/d, 0.5/d) initialization used for word vectors and lookup
/// tables.
pub(crate) fn init_lookup_rows(rows: usize, d: usize, rng: &mut StdRng) -> Mat {
    let mut m = Mat::zeros(rows, d);
    let bound = 0.5 / d as f64;
    for v in m.data.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

/// Trains word and context vectors by skip-gram with negative sampling.
///
/// Each retained (in-vocabulary, post-subsampling) center word predicts the
/// words within `window` positions; its word vector and the context vectors
/// of the targets and of `negatives` fresh samples per target are updated by
/// SGD with a linearly decaying learning rate. With more than one worker the
/// shared tables are updated without locks; one worker is deterministic.
pub fn train_word_sgns(
    sentences: &[Vec<usize>],
    vocab: &Vocabulary,
    config: &SgnsConfig,
) -> Result<EmbeddingTable> {
    config.validate()?;
    let d = config.dim;
    let mut init_rng = StdRng::seed_from_u64(config.seed);
    let word = init_lookup_rows(vocab.len(), d, &mut init_rng);
    let ctx = Mat::zeros(vocab.len(), d);

    let total_tokens: u64 = sentences
        .iter()
        .map(|s| s.iter().filter(|&&id| id != OOV).count() as u64)
        .sum();
    let budget = total_tokens * config.epochs as u64;
    if budget == 0 {
        let words = WordVectors::new(vocab.tokens().to_vec(), word)?;
        return EmbeddingTable::new(words, ctx);
    }

    let sampler = NegativeSampler::build(
        vocab,
        crate::corpus::DEFAULT_SAMPLER_POWER,
        sampler_table_size(vocab.len()),
    )?;
    let keep: Vec<f64> = (0..vocab.len())
        .map(|id| {
            if config.subsample > 0.0 {
                subsample_keep_prob(vocab.rel_freq(id), config.subsample).unwrap_or(1.0)
            } else {
                1.0
            }
        })
        .collect();

    let grid_w = AtomicGrid::from_mat(&word);
    let grid_c = AtomicGrid::from_mat(&ctx);
    let progress = AtomicU64::new(0);
    let workers = config.workers();

    std::thread::scope(|scope| {
        for w in 0..workers {
            let grid_w = &grid_w;
            let grid_c = &grid_c;
            let progress = &progress;
            let sampler = &sampler;
            let keep = &keep;
            scope.spawn(move || {
                let mut rng =
                    StdRng::seed_from_u64(config.seed ^ (w as u64).wrapping_mul(WORKER_SEED_STRIDE));
                let mut h = vec![0.0; d];
                let mut cv = vec![0.0; d];
                let mut gh = vec![0.0; d];
                let mut kept: Vec<usize> = Vec::new();
                for _epoch in 0..config.epochs {
                    for (si, sent) in sentences.iter().enumerate() {
                        if si % workers != w {
                            continue;
                        }
                        let in_vocab = sent.iter().filter(|&&id| id != OOV).count() as u64;
                        let done = progress.fetch_add(in_vocab, Ordering::Relaxed);
                        let lr = lr_at(config.lr, done as f64 / budget as f64);
                        kept.clear();
                        for &id in sent {
                            if id == OOV {
                                continue;
                            }
                            if keep[id] >= 1.0 || rng.gen_range(0.0..1.0) < keep[id] {
                                kept.push(id);
                            }
                        }
                        for i in 0..kept.len() {
                            let center = kept[i];
                            let lo = i.saturating_sub(config.window);
                            let hi = (i + config.window).min(kept.len() - 1);
                            for j in lo..=hi {
                                if j == i {
                                    continue;
                                }
                                grid_w.read_row(center, &mut h);
                                gh.iter_mut().for_each(|v| *v = 0.0);
                                for k in 0..=config.negatives {
                                    let (target, label) = if k == 0 {
                                        (kept[j], 1.0)
                                    } else {
                                        (sampler.sample(&mut rng), 0.0)
                                    };
                                    grid_c.read_row(target, &mut cv);
                                    let g = (label - sigmoid(dot(&h, &cv))) * lr;
                                    axpy(g, &cv, &mut gh);
                                    grid_c.axpy_row(target, g, &h);
                                }
                                grid_w.axpy_row(center, 1.0, &gh);
                            }
                        }
                    }
                }
            });
        }
    });

    let words = WordVectors::new(vocab.tokens().to_vec(), grid_w.to_mat())?;
    EmbeddingTable::new(words, grid_c.to_mat())
}

/// Sampling-table size: large enough for low quantization error, never
/// smaller than the vocabulary.
pub(crate) fn sampler_table_size(vocab_size: usize) -> usize {
    crate::corpus::DEFAULT_TABLE_SIZE.max(vocab_size)
}
