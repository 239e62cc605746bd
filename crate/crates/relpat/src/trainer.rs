//! Pattern-level training: streams pattern occurrences through an encoder
//! and maximizes the skip-gram negative-sampling objective
//!
//!   l_p = Σ_τ log σ(h_p·x̃_τ) + Σ_τ Σ_{k=1..K} log σ(−h_p·x̃_k)
//!
//! by SGD ascent on the encoder parameters. Word and context vectors are
//! pre-trained inputs and stay fixed throughout.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::corpus::{
    subsample_keep_prob, NegativeSampler, DEFAULT_SAMPLER_POWER, DEFAULT_TABLE_SIZE, OOV,
};
use crate::embeddings::{EmbeddingTable, WORKER_SEED_STRIDE};
use crate::encoders::{
    backprop_with, encode_with, init_params, Arch, ComposeOrder, EncoderModel, EncoderParams,
};
use crate::hogwild::AtomicGrid;
use crate::math::{axpy, dot, log_sigmoid, sigmoid};
use crate::patterns::{context_indices, PatternLexicon, RelationalPattern};
use crate::{Error, Result};

/// Learning rate after a given fraction of the occurrence budget, decaying
/// linearly to a floor of 1e-4 of the initial rate.
pub fn lr_at(initial: f64, progress: f64) -> f64 {
    initial * (1.0 - progress).max(1e-4)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: Arch,
    pub order: ComposeOrder,
    /// Context window δ on each side of an occurrence.
    pub window: usize,
    /// Negatives K per context word.
    pub negatives: usize,
    /// Subsampling threshold for context words; 0 disables.
    pub subsample: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    /// Shift the right context window one position outward.
    pub right_plus_one: bool,
    /// Parameter init scale; None means 1/sqrt(d).
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Gac,
            order: ComposeOrder::Backward,
            window: 5,
            negatives: 5,
            subsample: 1e-5,
            lr: 0.025,
            epochs: 5,
            seed: 1,
            threads: 1,
            deterministic: false,
            right_plus_one: false,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.negatives < 1 {
            return Err(Error::Config("need at least one negative sample".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("need at least one thread".into()));
        }
        if !(self.subsample >= 0.0) {
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

/// Encoder parameters in lock-free shared storage for concurrent updates.
pub struct GridParams {
    pub arch: Arch,
    pub d: usize,
    pub mats: Vec<AtomicGrid>,
    pub table: Option<AtomicGrid>,
    pub rows: Option<HashMap<String, usize>>,
}

impl GridParams {
    pub fn from_params(p: &EncoderParams) -> Self {
        GridParams {
            arch: p.arch,
            d: p.d,
            mats: p.mats.iter().map(AtomicGrid::from_mat).collect(),
            table: p.table.as_ref().map(AtomicGrid::from_mat),
            rows: p.rows.clone(),
        }
    }

    pub fn to_params(&self) -> EncoderParams {
        EncoderParams {
            arch: self.arch,
            d: self.d,
            mats: self.mats.iter().map(AtomicGrid::to_mat).collect(),
            table: self.table.as_ref().map(AtomicGrid::to_mat),
            rows: self.rows.clone(),
        }
    }
}

/// What a single occurrence update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Parameters updated; carries the occurrence objective l_p.
    Updated(f64),
    /// Every context position fell outside the vocabulary or was subsampled.
    NoContexts,
    /// The pattern had no in-vocabulary words to compose.
    Uncomputable,
}

/// One SGD ascent step for one pattern occurrence against its surviving
/// context words. Draws K fresh negatives per context word. Updates encoder
/// parameters only; the embedding table is read-only.
pub fn pattern_step(
    grid: &GridParams,
    pattern: &RelationalPattern,
    contexts: &[usize],
    emb: &EmbeddingTable,
    sampler: &NegativeSampler,
    order: ComposeOrder,
    negatives: usize,
    lr: f64,
    rng: &mut StdRng,
) -> Result<StepOutcome> {
    if contexts.is_empty() {
        return Ok(StepOutcome::NoContexts);
    }
    let trace = match encode_with(
        grid.arch,
        &grid.mats,
        grid.table.as_ref(),
        grid.rows.as_ref(),
        pattern,
        &emb.words,
        order,
    ) {
        Ok(t) => t,
        Err(Error::UncomputablePattern(_)) => return Ok(StepOutcome::Uncomputable),
        Err(e) => return Err(e),
    };
    let d = emb.d();
    let mut lp = 0.0;
    let mut grad_hp = vec![0.0; d];
    for &c in contexts {
        let xt = emb.ctx.row(c);
        let z = dot(&trace.h_p, xt);
        lp += log_sigmoid(z);
        axpy(1.0 - sigmoid(z), xt, &mut grad_hp);
        for _ in 0..negatives {
            let k = sampler.sample(rng);
            let xk = emb.ctx.row(k);
            let zk = dot(&trace.h_p, xk);
            lp += log_sigmoid(-zk);
            axpy(-sigmoid(zk), xk, &mut grad_hp);
        }
    }
    if lr != 0.0 {
        let grads = backprop_with(grid.arch, &grid.mats, &trace, &grad_hp)?;
        for (am, g) in grid.mats.iter().zip(&grads.mats) {
            for i in 0..g.rows {
                am.axpy_row(i, lr, g.row(i));
            }
        }
        if let Some((row, gvec)) = grads.nocomp_row {
            let table = grid
                .table
                .as_ref()
                .ok_or_else(|| Error::Model("lookup gradient without a table".into()))?;
            table.axpy_row(row, lr, &gvec);
        }
    }
    Ok(StepOutcome::Updated(lp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean l_p over updated occurrences; None if none were updated.
    pub mean_lp: Option<f64>,
    /// Occurrences that produced an update.
    pub occurrences: usize,
    /// Occurrences skipped for lack of contexts or representable words.
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Matched occurrences per pass over the corpus.
    pub total_occurrences: usize,
}

/// Trains an encoder over every lexicon-pattern occurrence in the corpus,
/// one pass per epoch, with the learning rate decaying linearly over the
/// total occurrence budget. Sentences hold token ids under the embedding
/// vocabulary.
pub fn train_encoder(
    corpus: &[Vec<usize>],
    lexicon: &PatternLexicon,
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    cfg.validate()?;
    let occs: Vec<Vec<crate::patterns::PatternOccurrence>> = corpus
        .iter()
        .map(|sent| lexicon.find_occurrences(sent))
        .collect();
    let total: usize = occs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::NoPatternOccurrences);
    }

    let vocab_size = emb.len();
    let mut counts = vec![0u64; vocab_size];
    for sent in corpus {
        for &id in sent {
            if id != OOV && id < vocab_size {
                counts[id] += 1;
            }
        }
    }
    let total_tokens: u64 = counts.iter().sum();
    let keep: Option<Vec<f64>> = if cfg.subsample > 0.0 {
        let mut k = vec![1.0; vocab_size];
        for (id, &c) in counts.iter().enumerate() {
            if c > 0 {
                k[id] = subsample_keep_prob(c as f64 / total_tokens as f64, cfg.subsample)?;
            }
        }
        Some(k)
    } else {
        None
    };
    let sampler = NegativeSampler::from_counts(
        &counts,
        DEFAULT_SAMPLER_POWER,
        DEFAULT_TABLE_SIZE.max(vocab_size),
    )?;

    let mut init_rng = StdRng::seed_from_u64(cfg.seed);
    let init = init_params(cfg.arch, emb.d(), &mut init_rng, cfg.init_scale, Some(lexicon))?;
    if cfg.epochs == 0 {
        return Ok((
            EncoderModel {
                order: cfg.order,
                params: init,
            },
            TrainReport {
                epochs: Vec::new(),
                total_occurrences: total,
            },
        ));
    }

    let grid = GridParams::from_params(&init);
    let workers = cfg.workers();
    let budget = (total * cfg.epochs) as u64;
    let progress = AtomicU64::new(0);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        total_occurrences: total,
    };

    for _epoch in 0..cfg.epochs {
        let start = Instant::now();
        let stats: Vec<Result<(f64, usize, usize)>> = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                let grid = &grid;
                let occs = &occs;
                let keep = &keep;
                let sampler = &sampler;
                let progress = &progress;
                handles.push(scope.spawn(move || {
                    // Seeded per worker, not per epoch: every epoch draws the
                    // same negatives and subsampling decisions, so per-epoch
                    // mean objectives are directly comparable.
                    let mut rng = StdRng::seed_from_u64(
                        cfg.seed ^ ((w + 1) as u64).wrapping_mul(WORKER_SEED_STRIDE),
                    );
                    let mut sum_lp = 0.0;
                    let mut updated = 0usize;
                    let mut skipped = 0usize;
                    let mut sent_idx = w;
                    while sent_idx < corpus.len() {
                        let sent = &corpus[sent_idx];
                        for occ in &occs[sent_idx] {
                            let done = progress.fetch_add(1, Ordering::Relaxed);
                            let lr = lr_at(cfg.lr, done as f64 / budget as f64);
                            let positions = context_indices(
                                occ.s,
                                occ.len,
                                cfg.window,
                                sent.len(),
                                cfg.right_plus_one,
                            );
                            let mut ctxs = Vec::with_capacity(positions.len());
                            for p in positions {
                                let id = sent[p];
                                if id == OOV || id >= vocab_size {
                                    continue;
                                }
                                let kp = keep.as_ref().map_or(1.0, |k| k[id]);
                                if kp >= 1.0 || rng.gen::<f64>() < kp {
                                    ctxs.push(id);
                                }
                            }
                            let pat = &lexicon.patterns()[occ.pattern];
                            match pattern_step(
                                grid,
                                pat,
                                &ctxs,
                                emb,
                                sampler,
                                cfg.order,
                                cfg.negatives,
                                lr,
                                &mut rng,
                            )? {
                                StepOutcome::Updated(lp) => {
                                    sum_lp += lp;
                                    updated += 1;
                                }
                                StepOutcome::NoContexts | StepOutcome::Uncomputable => {
                                    skipped += 1;
                                }
                            }
                        }
                        sent_idx += workers;
                    }
                    Ok((sum_lp, updated, skipped))
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut sum_lp = 0.0;
        let mut updated = 0usize;
        let mut skipped = 0usize;
        for s in stats {
            let (lp, u, sk) = s?;
            sum_lp += lp;
            updated += u;
            skipped += sk;
        }
        report.epochs.push(EpochStats {
            mean_lp: (updated > 0).then(|| sum_lp / updated as f64),
            occurrences: updated,
            skipped,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok((
        EncoderModel {
            order: cfg.order,
            params: grid.to_params(),
        },
        report,
    ))
}
