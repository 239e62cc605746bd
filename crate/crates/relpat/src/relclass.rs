//! Relation classification harness: entity-marked sentences, sparse lexical
//! features hashed to 2^20 buckets plus a dense block of composed pattern,
//! entity, and boundary-word vectors, a multinomial logistic classifier, and
//! the direction-sensitive macro-F1 scorer.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::WordVectors;
use crate::encoders::{encode, EncoderModel};
use crate::math::Mat;
use crate::patterns::RelationalPattern;
use crate::{Error, Result};

pub const RELATION_TYPES: [&str; 9] = [
    "Cause-Effect",
    "Component-Whole",
    "Content-Container",
    "Entity-Destination",
    "Entity-Origin",
    "Instrument-Agency",
    "Member-Collection",
    "Message-Topic",
    "Product-Producer",
];

/// 9 types x 2 directions, then the undirected Other class.
pub const NUM_LABELS: usize = 19;
pub const OTHER_LABEL: usize = 18;

pub fn label_name(id: usize) -> String {
    if id == OTHER_LABEL {
        "Other".to_string()
    } else {
        let dir = if id % 2 == 0 { "(e1,e2)" } else { "(e2,e1)" };
        format!("{}{}", RELATION_TYPES[id / 2], dir)
    }
}

pub fn label_id(name: &str) -> Option<usize> {
    let name = name.trim();
    if name == "Other" {
        return Some(OTHER_LABEL);
    }
    for (i, ty) in RELATION_TYPES.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(ty) {
            match rest {
                "(e1,e2)" => return Some(2 * i),
                "(e2,e1)" => return Some(2 * i + 1),
                _ => return None,
            }
        }
    }
    None
}

/// The directed-type id with direction stripped, or None for Other.
pub fn label_type(id: usize) -> Option<usize> {
    (id != OTHER_LABEL).then_some(id / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationInstance {
    pub id: String,
    pub label: usize,
    /// Sentence tokens, lowercased, markers removed.
    pub tokens: Vec<String>,
    /// Half-open token span of the first entity.
    pub e1: (usize, usize),
    pub e2: (usize, usize),
    /// Optional POS tags aligned with `tokens`.
    pub pos: Option<Vec<String>>,
}

impl RelationInstance {
    /// The relational pattern: words between the entity pair.
    pub fn pattern_words(&self) -> &[String] {
        &self.tokens[self.e1.1..self.e2.0]
    }

    pub fn e1_words(&self) -> &[String] {
        &self.tokens[self.e1.0..self.e1.1]
    }

    pub fn e2_words(&self) -> &[String] {
        &self.tokens[self.e2.0..self.e2.1]
    }
}

fn parse_sentence(
    sentence: &str,
) -> std::result::Result<(Vec<String>, (usize, usize), (usize, usize)), String> {
    let spaced = sentence
        .replace("<e1>", " <e1> ")
        .replace("</e1>", " </e1> ")
        .replace("<e2>", " <e2> ")
        .replace("</e2>", " </e2> ");
    let mut tokens = Vec::new();
    let mut marks: HashMap<&str, usize> = HashMap::new();
    for raw in spaced.split_whitespace() {
        match raw {
            "<e1>" | "</e1>" | "<e2>" | "</e2>" => {
                if marks.insert(raw, tokens.len()).is_some() {
                    return Err(format!("duplicate marker {raw}"));
                }
            }
            _ => tokens.push(raw.to_lowercase()),
        }
    }
    let at = |m: &str| marks.get(m).copied().ok_or(format!("missing marker {m}"));
    let e1 = (at("<e1>")?, at("</e1>")?);
    let e2 = (at("<e2>")?, at("</e2>")?);
    if e1.0 >= e1.1 || e2.0 >= e2.1 {
        return Err("empty entity span".to_string());
    }
    if e1.1 > e2.0 {
        return Err("entity e1 must close before e2 opens".to_string());
    }
    Ok((tokens, e1, e2))
}

/// Loads `id TAB label TAB sentence [TAB pos-tags]` with inline `<e1>`/`<e2>`
/// entity markers. POS tags, when present, are space-separated and aligned
/// with the marker-free tokens.
pub fn load_relation_dataset<P: AsRef<Path>>(path: P) -> Result<Vec<RelationInstance>> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    let mut instances = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |msg: String| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg,
        };
        if fields.len() < 3 {
            return Err(fail("expected id, label, sentence".to_string()));
        }
        let id = fields[0].trim().to_string();
        let label = label_id(fields[1])
            .ok_or_else(|| fail(format!("instance {id}: unknown label `{}`", fields[1])))?;
        let (tokens, e1, e2) =
            parse_sentence(fields[2]).map_err(|m| fail(format!("instance {id}: {m}")))?;
        let pos = if fields.len() > 3 && !fields[3].trim().is_empty() {
            let tags: Vec<String> = fields[3].split_whitespace().map(str::to_string).collect();
            if tags.len() != tokens.len() {
                return Err(fail(format!(
                    "instance {id}: {} pos tags for {} tokens",
                    tags.len(),
                    tokens.len()
                )));
            }
            Some(tags)
        } else {
            None
        };
        instances.push(RelationInstance {
            id,
            label,
            tokens,
            e1,
            e2,
            pos,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(instances)
}

pub const SPARSE_BUCKETS: usize = 1 << 20;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_feature(feature: &str) -> u32 {
    (fnv1a(feature.as_bytes()) & (SPARSE_BUCKETS as u64 - 1)) as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Sorted, deduplicated hashed indicator features.
    pub sparse: Vec<u32>,
    /// [h_p | mean e1 | mean e2 | word before e1 | word after e2], 5·d.
    pub dense: Vec<f64>,
}

fn mean_vec_into(words: &WordVectors, span: &[String], out: &mut [f64]) {
    let mut n = 0usize;
    for w in span {
        if let Some(v) = words.vec_of(w) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
            n += 1;
        }
    }
    if n > 1 {
        for o in out.iter_mut() {
            *o /= n as f64;
        }
    }
}

/// Builds the feature vector: hashed bag-of-words, entity, and optional POS
/// indicators, plus the dense block. Degenerate slots (OOV words, empty or
/// uncomputable pattern, missing boundary word) stay zero.
pub fn featurize(
    inst: &RelationInstance,
    model: &EncoderModel,
    words: &WordVectors,
) -> FeatureVector {
    let mut feats: Vec<u32> = Vec::new();
    for w in inst.pattern_words() {
        feats.push(hash_feature(&format!("bow={w}")));
    }
    for w in inst.e1_words() {
        feats.push(hash_feature(&format!("e1={w}")));
    }
    for w in inst.e2_words() {
        feats.push(hash_feature(&format!("e2={w}")));
    }
    if let Some(pos) = &inst.pos {
        for tag in &pos[inst.e1.1..inst.e2.0] {
            feats.push(hash_feature(&format!("pos={tag}")));
        }
    }
    feats.sort_unstable();
    feats.dedup();

    let d = words.d();
    let mut dense = vec![0.0; 5 * d];
    if !inst.pattern_words().is_empty() {
        let pattern = RelationalPattern::new(inst.pattern_words().to_vec(), Some(words));
        if let Ok(trace) = encode(model, &pattern, words) {
            dense[..d].copy_from_slice(&trace.h_p);
        }
    }
    mean_vec_into(words, inst.e1_words(), &mut dense[d..2 * d]);
    mean_vec_into(words, inst.e2_words(), &mut dense[2 * d..3 * d]);
    if inst.e1.0 > 0 {
        if let Some(v) = words.vec_of(&inst.tokens[inst.e1.0 - 1]) {
            dense[3 * d..4 * d].copy_from_slice(v);
        }
    }
    if inst.e2.1 < inst.tokens.len() {
        if let Some(v) = words.vec_of(&inst.tokens[inst.e2.1]) {
            dense[4 * d..5 * d].copy_from_slice(v);
        }
    }
    FeatureVector {
        sparse: feats,
        dense,
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            lr: 0.1,
            l2: 1e-5,
            epochs: 10,
        }
    }
}

/// Multinomial logistic classifier. Sparse weights live in a map keyed by
/// hashed column, so only columns seen in training occupy memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub classes: usize,
    pub dense_dim: usize,
    pub sparse: HashMap<u32, Vec<f64>>,
    /// classes × dense_dim.
    pub dense: Mat,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dense_dim: usize) -> Self {
        LinearClassifier {
            classes,
            dense_dim,
            sparse: HashMap::new(),
            dense: Mat::zeros(classes, dense_dim),
        }
    }

    pub fn scores(&self, fv: &FeatureVector) -> Vec<f64> {
        let mut s = vec![0.0; self.classes];
        for col in &fv.sparse {
            if let Some(w) = self.sparse.get(col) {
                for (si, wi) in s.iter_mut().zip(w) {
                    *si += wi;
                }
            }
        }
        for (c, si) in s.iter_mut().enumerate() {
            *si += crate::math::dot(self.dense.row(c), &fv.dense);
        }
        s
    }

    /// Highest-scoring class; ties break toward the lowest id.
    pub fn predict(&self, fv: &FeatureVector) -> usize {
        let s = self.scores(fv);
        let mut best = 0;
        for (c, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

/// SGD on the multinomial log-loss, constant learning rate, instances in
/// the given order every epoch. L2 decay touches only the columns active in
/// the current instance (the dense block counts as always active), so the
/// update sequence depends only on the instance sequence.
pub fn train_classifier(
    features: &[FeatureVector],
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<LinearClassifier> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {bad} outside 0..{classes}"
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    if cfg.lr <= 0.0 || cfg.l2 < 0.0 {
        return Err(Error::Config(
            "classifier needs lr > 0 and l2 >= 0".to_string(),
        ));
    }
    let dense_dim = features[0].dense.len();
    if features.iter().any(|f| f.dense.len() != dense_dim) {
        return Err(Error::Config("uneven dense feature widths".to_string()));
    }

    let mut clf = LinearClassifier::zeros(classes, dense_dim);
    let decay = 1.0 - cfg.lr * cfg.l2;
    for _epoch in 0..cfg.epochs {
        for (fv, &y) in features.iter().zip(labels) {
            let mut p = clf.scores(fv);
            softmax_in_place(&mut p);
            for col in &fv.sparse {
                let w = clf
                    .sparse
                    .entry(*col)
                    .or_insert_with(|| vec![0.0; classes]);
                for (c, wc) in w.iter_mut().enumerate() {
                    let g = p[c] - f64::from(c == y);
                    *wc = *wc * decay - cfg.lr * g;
                }
            }
            for (c, pc) in p.iter().enumerate() {
                let g = pc - f64::from(c == y);
                let row = clf.dense.row_mut(c);
                for (wj, xj) in row.iter_mut().zip(&fv.dense) {
                    *wj = *wj * decay - cfg.lr * g * xj;
                }
            }
        }
    }
    Ok(clf)
}

/// Contiguous k-fold cross-validation over an (lr, l2) grid; returns the
/// config with the best mean macro-F1 (earliest grid entry on ties).
pub fn grid_search(
    features: &[FeatureVector],
    labels: &[usize],
    classes: usize,
    lrs: &[f64],
    l2s: &[f64],
    epochs: usize,
    k: usize,
) -> Result<(ClassifierConfig, f64)> {
    if k < 2 || features.len() < k {
        return Err(Error::Config(
            "cross-validation needs k >= 2 and at least k instances".to_string(),
        ));
    }
    let n = features.len();
    let mut best: Option<(ClassifierConfig, f64)> = None;
    for &lr in lrs {
        for &l2 in l2s {
            let cfg = ClassifierConfig { lr, l2, epochs };
            let mut scores = Vec::with_capacity(k);
            for fold in 0..k {
                let lo = fold * n / k;
                let hi = (fold + 1) * n / k;
                let mut tr_f = Vec::new();
                let mut tr_y = Vec::new();
                for i in (0..lo).chain(hi..n) {
                    tr_f.push(features[i].clone());
                    tr_y.push(labels[i]);
                }
                let clf = match train_classifier(&tr_f, &tr_y, classes, &cfg) {
                    Ok(c) => c,
                    Err(Error::SingleClass) => continue,
                    Err(e) => return Err(e),
                };
                let pred: Vec<usize> =
                    features[lo..hi].iter().map(|f| clf.predict(f)).collect();
                if let Ok(f1) = macro_f1(&labels[lo..hi], &pred) {
                    scores.push(f1);
                }
            }
            if scores.is_empty() {
                continue;
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            if best.as_ref().is_none_or(|(_, b)| mean > *b) {
                best = Some((cfg, mean));
            }
        }
    }
    best.ok_or_else(|| Error::Config("no grid point could be evaluated".to_string()))
}

/// Macro-averaged F1 in the official-scorer convention: per relation type,
/// precision and recall pool both directions in the denominators while a
/// prediction counts as correct only with the direction right; Other is
/// excluded; types absent from both gold and predictions are skipped.
pub fn macro_f1(gold: &[usize], pred: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyInput);
    }
    if gold.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    let mut gold_n = [0usize; 9];
    let mut pred_n = [0usize; 9];
    let mut correct = [0usize; 9];
    for (&g, &p) in gold.iter().zip(pred) {
        if let Some(t) = label_type(g) {
            gold_n[t] += 1;
            if g == p {
                correct[t] += 1;
            }
        }
        if let Some(t) = label_type(p) {
            pred_n[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut n_types = 0usize;
    for t in 0..9 {
        if gold_n[t] == 0 && pred_n[t] == 0 {
            continue;
        }
        n_types += 1;
        let p = if pred_n[t] > 0 {
            correct[t] as f64 / pred_n[t] as f64
        } else {
            0.0
        };
        let r = if gold_n[t] > 0 {
            correct[t] as f64 / gold_n[t] as f64
        } else {
            0.0
        };
        if p + r > 0.0 {
            sum += 2.0 * p * r / (p + r);
        }
    }
    if n_types == 0 {
        return Ok(0.0);
    }
    Ok(sum / n_types as f64)
}

/// Predictions TSV: `id TAB label`.
pub fn save_predictions<P: AsRef<Path>>(path: P, preds: &[(String, usize)]) -> Result<()> {
    use std::io::Write;
    let mut f = BufWriter::new(File::create(path)?);
    for (id, label) in preds {
        writeln!(f, "{id}\t{}", label_name(*label))?;
    }
    Ok(())
}

pub fn load_predictions<P: AsRef<Path>>(path: P) -> Result<Vec<(String, usize)>> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    let mut preds = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg,
        };
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| fail("expected `id TAB label`".to_string()))?;
        let label =
            label_id(label).ok_or_else(|| fail(format!("unknown label `{label}`")))?;
        preds.push((id.trim().to_string(), label));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(preds)
}

/// Scores predictions against gold instances, matching on instance id.
pub fn score_predictions(
    gold: &[RelationInstance],
    preds: &[(String, usize)],
) -> Result<f64> {
    let by_id: HashMap<&str, usize> = preds
        .iter()
        .map(|(id, label)| (id.as_str(), *label))
        .collect();
    let mut g = Vec::with_capacity(gold.len());
    let mut p = Vec::with_capacity(gold.len());
    for inst in gold {
        let pred = by_id.get(inst.id.as_str()).copied().ok_or_else(|| {
            Error::Config(format!("no prediction for instance {}", inst.id))
        })?;
        g.push(inst.label);
        p.push(pred);
    }
    macro_f1(&g, &p)
}

const BUNDLE_FORMAT: &str = "relpat-relclass/1";

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format: String,
    encoder: crate::encoders::ModelFile,
    classes: usize,
    dense_dim: usize,
    sparse: BTreeMap<u32, Vec<f64>>,
    dense: Vec<Vec<f64>>,
}

/// Persists the classifier together with the encoder it was trained with.
pub fn save_bundle<P: AsRef<Path>>(
    path: P,
    clf: &LinearClassifier,
    encoder: &EncoderModel,
) -> Result<()> {
    let file = BundleFile {
        format: BUNDLE_FORMAT.to_string(),
        encoder: crate::encoders::model_to_file(encoder),
        classes: clf.classes,
        dense_dim: clf.dense_dim,
        sparse: clf.sparse.iter().map(|(k, v)| (*k, v.clone())).collect(),
        dense: (0..clf.dense.rows).map(|i| clf.dense.row(i).to_vec()).collect(),
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &file)
        .map_err(|e| Error::Model(format!("cannot write classifier: {e}")))?;
    Ok(())
}

pub fn load_bundle<P: AsRef<Path>>(path: P) -> Result<(LinearClassifier, EncoderModel)> {
    let reader = BufReader::new(File::open(path)?);
    let file: BundleFile = serde_json::from_reader(reader)
        .map_err(|e| Error::Model(format!("cannot parse classifier: {e}")))?;
    if file.format != BUNDLE_FORMAT {
        return Err(Error::Model(format!(
            "unsupported classifier format `{}`",
            file.format
        )));
    }
    let encoder = crate::encoders::model_from_file(file.encoder)?;
    if file.dense.len() != file.classes {
        return Err(Error::Model(format!(
            "dense block has {} rows for {} classes",
            file.dense.len(),
            file.classes
        )));
    }
    let mut dense = Mat::zeros(file.classes, file.dense_dim);
    for (i, row) in file.dense.iter().enumerate() {
        if row.len() != file.dense_dim {
            return Err(Error::Model(format!(
                "dense row {i} has width {}, expected {}",
                row.len(),
                file.dense_dim
            )));
        }
        dense.row_mut(i).copy_from_slice(row);
    }
    let mut sparse = HashMap::with_capacity(file.sparse.len());
    for (col, w) in file.sparse {
        if w.len() != file.classes {
            return Err(Error::Model(format!(
                "sparse column {col} has {} weights for {} classes",
                w.len(),
                file.classes
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite weight in column {col}")));
        }
        sparse.insert(col, w);
    }
    Ok((
        LinearClassifier {
            classes: file.classes,
            dense_dim: file.dense_dim,
            sparse,
            dense,
        },
        encoder,
    ))
}
