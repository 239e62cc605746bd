//! Corpus ingestion, vocabulary construction, frequency subsampling, and the
//! unigram^0.75 negative sampler shared by the word and encoder trainers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// Sentinel id for tokens that fall outside the vocabulary.
pub const OOV: usize = usize::MAX;

/// Anything that maps tokens to dense ids: a [`Vocabulary`], or a loaded
/// word-vector table whose row order defines the id space.
pub trait TokenLookup {
    fn token_id(&self, token: &str) -> Option<usize>;

    /// Maps a sentence to ids, keeping positions: unknown tokens become
    /// [`OOV`].
    fn lookup_sentence(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|t| self.token_id(t).unwrap_or(OOV))
            .collect()
    }
}

/// Token inventory with ids assigned in descending count order,
/// lexicographic on ties.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    total: u64,
    discarded: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from a token-line stream: one sentence per line,
    /// whitespace-separated tokens. Tokens with count < `min_count` are
    /// dropped; their mass is tracked in `discarded`.
    pub fn build<R: Read>(reader: R, min_count: u64) -> Result<Self> {
        let mut raw: HashMap<String, u64> = HashMap::new();
        let mut seen = 0u64;
        for line in BufReader::new(reader).lines() {
            let line = line?;
            for tok in line.split_whitespace() {
                *raw.entry(tok.to_string()).or_insert(0) += 1;
                seen += 1;
            }
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }

        let mut entries: Vec<(String, u64)> =
            raw.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        let mut total = 0u64;
        for (i, (tok, c)) in entries.into_iter().enumerate() {
            ids.insert(tok.clone(), i);
            tokens.push(tok);
            counts.push(c);
            total += c;
        }
        Ok(Vocabulary {
            tokens,
            ids,
            counts,
            total,
            discarded: seen - total,
        })
    }

    pub fn from_file<P: AsRef<Path>>(path: P, min_count: u64) -> Result<Self> {
        Self::build(File::open(path)?, min_count)
    }

    /// Builds a vocabulary directly from token/count pairs, applying the same
    /// ordering rule as a corpus build. Used when the original corpus is no
    /// longer available but counts are.
    pub fn from_counts<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries: Vec<(String, u64)> =
            pairs.into_iter().map(|(t, c)| (t.into(), c)).collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        let mut total = 0u64;
        for (i, (tok, c)) in entries.into_iter().enumerate() {
            ids.insert(tok.clone(), i);
            tokens.push(tok);
            counts.push(c);
            total += c;
        }
        Ok(Vocabulary {
            tokens,
            ids,
            counts,
            total,
            discarded: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
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

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total count over retained tokens.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Token mass dropped by the min_count filter.
    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// Relative frequency of a retained token.
    pub fn rel_freq(&self, id: usize) -> f64 {
        self.counts[id] as f64 / self.total as f64
    }

    /// Maps a sentence to ids, keeping positions: out-of-vocabulary tokens
    /// become [`OOV`].
    pub fn encode_sentence(&self, line: &str) -> Vec<usize> {
        self.lookup_sentence(line)
    }
}

impl TokenLookup for Vocabulary {
    fn token_id(&self, token: &str) -> Option<usize> {
        self.id(token)
    }
}

/// Keep probability for a token with relative frequency `rel_freq` under the
/// subsampling threshold `t`: min(1, sqrt(t/f) + t/f).
pub fn subsample_keep_prob(rel_freq: f64, t: f64) -> Result<f64> {
    if !(rel_freq > 0.0 && rel_freq <= 1.0) {
        return Err(Error::FrequencyOutOfRange(rel_freq));
    }
    let ratio = t / rel_freq;
    Ok((ratio.sqrt() + ratio).min(1.0))
}

/// Draws token ids proportionally to count^power via a precomputed table,
/// as in the classic word2vec unigram table. Quantization error of the
/// per-token probability is at most 1/table_size.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: Vec<u32>,
}

pub const DEFAULT_SAMPLER_POWER: f64 = 0.75;
pub const DEFAULT_TABLE_SIZE: usize = 10_000_000;

impl NegativeSampler {
    pub fn build(vocab: &Vocabulary, power: f64, table_size: usize) -> Result<Self> {
        Self::from_counts(vocab.counts(), power, table_size)
    }

    /// Builds the sampling table from raw counts indexed by token id.
    pub fn from_counts(counts: &[u64], power: f64, table_size: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if table_size < counts.len() {
            return Err(Error::TableTooSmall {
                table_size,
                vocab_size: counts.len(),
            });
        }
        let powered: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(power)).collect();
        let total: f64 = powered.iter().sum();

        let mut table = vec![0u32; table_size];
        let mut id = 0usize;
        let mut cum = powered[0] / total;
        for (slot, cell) in table.iter_mut().enumerate() {
            if slot as f64 / table_size as f64 >= cum && id + 1 < counts.len() {
                id += 1;
                cum += powered[id] / total;
            }
            *cell = id as u32;
        }
        Ok(NegativeSampler { table })
    }

    pub fn table_size(&self) -> usize {
        self.table.len()
    }

    /// Draws one token id. Deterministic given the generator state.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.table[rng.gen_range(0..self.table.len())] as usize
    }
}

/// Reads plain corpus sentences: one per line, whitespace-tokenized.
pub fn read_sentences<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<String>>> {
    let file = File::open(path)?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !toks.is_empty() {
            sentences.push(toks);
        }
    }
    Ok(sentences)
}

/// One token of a tagged corpus: `surface<TAB>pos<TAB>lemma`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: String,
    pub lemma: String,
}

/// Reads a three-column tagged corpus; blank lines separate sentences.
pub fn read_tagged_sentences<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<TaggedToken>>> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    let mut sentences = Vec::new();
    let mut current: Vec<TaggedToken> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(surface), Some(pos), Some(lemma)) => current.push(TaggedToken {
                surface: surface.to_string(),
                pos: pos.to_string(),
                lemma: lemma.to_string(),
            }),
            _ => {
                return Err(Error::Parse {
                    path: display,
                    line: lineno + 1,
                    msg: format!("expected `surface<TAB>pos<TAB>lemma`, got `{line}`"),
                })
            }
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}
