//! Evaluation: pattern-similarity Spearman correlation against human
//! ratings (overall and per pattern length), gate-moment reports for gated
//! encoders, and nearest-neighbor queries over a pattern lexicon.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::OOV;
use crate::embeddings::WordVectors;
use crate::encoders::{encode, gate_activations, Arch, EncoderModel};
use crate::math::cosine;
use crate::patterns::{PatternLexicon, RelationalPattern};
use crate::{Error, Result};

/// One rated pattern pair: five integer judgments in 1..=7 and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub pattern1: String,
    pub pattern2: String,
    pub ratings: [u8; 5],
    pub mean: f64,
}

impl SimilarityPair {
    /// Bucket key: max of the two pattern lengths, capped at 5.
    pub fn length_bucket(&self) -> usize {
        let len = |s: &str| s.split_whitespace().count();
        len(&self.pattern1).max(len(&self.pattern2)).min(5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub pairs: Vec<SimilarityPair>,
}

/// Loads the rating TSV: `pattern1 TAB pattern2 TAB r1..r5`, ratings integer
/// 1..=7, extra trailing columns ignored, blank lines skipped.
pub fn load_similarity_dataset<P: AsRef<Path>>(path: P) -> Result<SimilarityDataset> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 7 {
            return Err(parse_err(
                lineno,
                format!("expected 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        let pattern1 = fields[0].trim().to_string();
        let pattern2 = fields[1].trim().to_string();
        if pattern1.is_empty() || pattern2.is_empty() {
            return Err(parse_err(lineno, "empty pattern".into()));
        }
        let mut ratings = [0u8; 5];
        for (i, f) in fields[2..7].iter().enumerate() {
            let r: u8 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("rating `{f}` is not an integer")))?;
            if !(1..=7).contains(&r) {
                return Err(parse_err(lineno, format!("rating {r} outside 1..7")));
            }
            ratings[i] = r;
        }
        let mean = ratings.iter().map(|&r| r as f64).sum::<f64>() / 5.0;
        pairs.push(SimilarityPair {
            pattern1,
            pattern2,
            ratings,
            mean,
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(SimilarityDataset { pairs })
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Tie-aware Spearman rank correlation: average ranks, then Pearson.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Composes a pattern vector for evaluation. With `length1_raw`, single-word
/// patterns use the raw word vector under every encoder, so all encoders
/// agree on length-1 pairs.
pub fn pattern_vector(
    model: &EncoderModel,
    words: &WordVectors,
    pattern: &RelationalPattern,
    length1_raw: bool,
) -> Result<Vec<f64>> {
    if length1_raw && pattern.len() == 1 {
        let id = pattern.ids[0];
        if id == OOV {
            return Err(Error::UncomputablePattern(pattern.surface()));
        }
        return Ok(words.vec(id).to_vec());
    }
    Ok(encode(model, pattern, words)?.h_p)
}

/// Similarity of one dataset pair; Ok(None) when either side has no vector
/// (or a vector with zero norm, which leaves the cosine undefined).
pub fn pair_similarity(
    model: &EncoderModel,
    words: &WordVectors,
    pair: &SimilarityPair,
    length1_raw: bool,
) -> Result<Option<f64>> {
    let vec_of = |surface: &str| -> Result<Option<Vec<f64>>> {
        let pat = RelationalPattern::from_surface(surface, Some(words));
        match pattern_vector(model, words, &pat, length1_raw) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UncomputablePattern(_)) | Err(Error::NoRepresentation(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let (Some(u), Some(v)) = (vec_of(&pair.pattern1)?, vec_of(&pair.pattern2)?) else {
        return Ok(None);
    };
    Ok(cosine(&u, &v).map(|c| c.clamp(-1.0, 1.0)))
}

pub const BUCKET_NAMES: [&str; 5] = ["1", "2", "3", "4", ">=5"];

#[derive(Debug, Clone, PartialEq)]
pub struct BucketStat {
    pub name: &'static str,
    pub n_pairs: usize,
    /// None when the correlation is undefined on this bucket.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub encoder: String,
    pub n_pairs: usize,
    /// Pairs scored 0 because a vector could not be computed.
    pub uncomputable: usize,
    pub overall: Option<f64>,
    pub buckets: Vec<BucketStat>,
}

/// Scores every dataset pair with the model and correlates against the mean
/// ratings, overall and per length bucket. Uncomputable pairs receive
/// similarity 0 and are counted rather than dropped.
pub fn evaluate_similarity(
    model: &EncoderModel,
    words: &WordVectors,
    dataset: &SimilarityDataset,
    length1_raw: bool,
) -> Result<EvalReport> {
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sims = Vec::with_capacity(dataset.pairs.len());
    let mut golds = Vec::with_capacity(dataset.pairs.len());
    let mut buckets_sims: [(Vec<f64>, Vec<f64>); 5] = Default::default();
    let mut uncomputable = 0usize;
    for pair in &dataset.pairs {
        let sim = match pair_similarity(model, words, pair, length1_raw)? {
            Some(s) => s,
            None => {
                uncomputable += 1;
                0.0
            }
        };
        sims.push(sim);
        golds.push(pair.mean);
        let b = pair.length_bucket() - 1;
        buckets_sims[b].0.push(sim);
        buckets_sims[b].1.push(pair.mean);
    }
    let overall = spearman(&sims, &golds).ok();
    let buckets = BUCKET_NAMES
        .iter()
        .zip(&buckets_sims)
        .map(|(&name, (s, g))| BucketStat {
            name,
            n_pairs: s.len(),
            rho: spearman(s, g).ok(),
        })
        .collect();
    Ok(EvalReport {
        encoder: model.id(),
        n_pairs: dataset.pairs.len(),
        uncomputable,
        overall,
        buckets,
    })
}

fn fmt_rho(rho: Option<f64>) -> String {
    match rho {
        Some(r) => format!("{r:.6}"),
        None => "NA".to_string(),
    }
}

/// TSV rendering: `bucket TAB n_pairs TAB rho`, one row per length bucket
/// when requested, then `all` and `uncomputable` rows. Contains no encoder
/// identity, so encoders that score identically render identically.
pub fn render_eval_tsv(report: &EvalReport, by_length: bool) -> String {
    let mut out = String::from("bucket\tn_pairs\trho\n");
    if by_length {
        for b in &report.buckets {
            out.push_str(&format!("{}\t{}\t{}\n", b.name, b.n_pairs, fmt_rho(b.rho)));
        }
    }
    out.push_str(&format!(
        "all\t{}\t{}\n",
        report.n_pairs,
        fmt_rho(report.overall)
    ));
    out.push_str(&format!("uncomputable\t{}\tNA\n", report.uncomputable));
    out
}

/// Human-readable summary for logs.
pub fn render_eval_summary(report: &EvalReport) -> String {
    format!(
        "encoder {}: rho {} over {} pairs ({} uncomputable scored 0)",
        report.encoder,
        fmt_rho(report.overall),
        report.n_pairs,
        report.uncomputable
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateRow {
    pub rank: usize,
    pub gate: &'static str,
    pub direction: &'static str,
    pub word: String,
    pub scanned: String,
    pub stat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub arch: Arch,
    pub rows: Vec<GateRow>,
    /// Gates whose statistics show no spread across all moments.
    pub degenerate: Vec<&'static str>,
}

/// Ranks the gate moments of every computable lexicon pattern: for each gate,
/// the `top_k` largest and smallest mean activations, with the word consumed
/// at that step and the words already scanned.
pub fn inspect_gates(
    model: &EncoderModel,
    words: &WordVectors,
    lexicon: &PatternLexicon,
    top_k: usize,
) -> Result<GateReport> {
    if !model.params.arch.is_gated() {
        return Err(Error::NoGates(model.params.arch.name()));
    }
    // gate name -> (stat, word, scanned)
    let mut per_gate: Vec<(&'static str, Vec<(f64, String, String)>)> = Vec::new();
    for pattern in lexicon.patterns() {
        let trace = match encode(model, pattern, words) {
            Ok(t) => t,
            Err(Error::UncomputablePattern(_)) => continue,
            Err(e) => return Err(e),
        };
        for moment in gate_activations(&trace)? {
            for (gate, stat) in moment.gates {
                let pos = match per_gate.iter().position(|(g, _)| *g == gate) {
                    Some(p) => p,
                    None => {
                        per_gate.push((gate, Vec::new()));
                        per_gate.len() - 1
                    }
                };
                per_gate[pos]
                    .1
                    .push((stat, moment.word.clone(), moment.scanned.clone()));
            }
        }
    }
    if per_gate.iter().all(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::new();
    let mut degenerate = Vec::new();
    for (gate, moments) in &per_gate {
        let min = moments.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
        let max = moments.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
        if max - min < 1e-12 {
            degenerate.push(*gate);
        }
        for direction in ["largest", "smallest"] {
            let mut sorted = moments.clone();
            sorted.sort_by(|a, b| {
                let ord = a.0.total_cmp(&b.0);
                let ord = if direction == "largest" { ord.reverse() } else { ord };
                ord.then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2))
            });
            for (i, (stat, word, scanned)) in sorted.into_iter().take(top_k).enumerate() {
                rows.push(GateRow {
                    rank: i + 1,
                    gate: *gate,
                    direction,
                    word,
                    scanned,
                    stat,
                });
            }
        }
    }
    Ok(GateReport {
        arch: model.params.arch,
        rows,
        degenerate,
    })
}

/// TSV rendering: `rank TAB gate TAB direction TAB word TAB scanned TAB stat`.
pub fn render_gate_tsv(report: &GateReport) -> String {
    let mut out = String::from("rank\tgate\tdirection\tword\tscanned\tstat\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\n",
            r.rank, r.gate, r.direction, r.word, r.scanned, r.stat
        ));
    }
    for gate in &report.degenerate {
        out.push_str(&format!("# gate {gate}: no spread across moments\n"));
    }
    out
}

/// Top-k lexicon patterns by cosine to the query, descending, ties broken by
/// surface. Lexicon patterns without a vector are skipped; a query without
/// one is an error.
pub fn nearest_neighbors(
    query: &RelationalPattern,
    lexicon: &PatternLexicon,
    model: &EncoderModel,
    words: &WordVectors,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let q = encode(model, query, words)?.h_p;
    let mut scored: Vec<(String, f64)> = Vec::new();
    for pattern in lexicon.patterns() {
        let h = match encode(model, pattern, words) {
            Ok(t) => t.h_p,
            Err(Error::UncomputablePattern(_)) | Err(Error::NoRepresentation(_)) => continue,
            Err(e) => return Err(e),
        };
        if let Some(c) = cosine(&q, &h) {
            scored.push((pattern.surface(), c.clamp(-1.0, 1.0)));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
