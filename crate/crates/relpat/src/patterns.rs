//! Pattern lexicon management, verb-pattern extraction from tagged text, and
//! enumeration of pattern occurrences with their context-word indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::{TaggedToken, TokenLookup, OOV};
use crate::{Error, Result};

/// A multiword relational pattern: its surface lemmas plus their vocabulary
/// ids ([`OOV`] where a lemma is out of vocabulary).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalPattern {
    pub words: Vec<String>,
    pub ids: Vec<usize>,
}

impl RelationalPattern {
    pub fn new(words: Vec<String>, vocab: Option<&dyn TokenLookup>) -> Self {
        let ids = words
            .iter()
            .map(|w| vocab.and_then(|v| v.token_id(w)).unwrap_or(OOV))
            .collect();
        RelationalPattern { words, ids }
    }

    pub fn from_surface(surface: &str, vocab: Option<&dyn TokenLookup>) -> Self {
        Self::new(
            surface.split_whitespace().map(str::to_string).collect(),
            vocab,
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn surface(&self) -> String {
        self.words.join(" ")
    }

    pub fn has_oov(&self) -> bool {
        self.ids.iter().any(|&id| id == OOV)
    }

    /// Ids with out-of-vocabulary entries removed.
    pub fn known_ids(&self) -> Vec<usize> {
        self.ids.iter().copied().filter(|&id| id != OOV).collect()
    }
}

/// One match of a lexicon pattern inside a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternOccurrence {
    /// Index of the matched pattern in the lexicon.
    pub pattern: usize,
    /// Start position in the sentence (0-based).
    pub s: usize,
    /// Length of the match in tokens.
    pub len: usize,
}

/// Indices of the context words around a span `[s, s+len)`: `delta` positions
/// on the left and on the right, clipped to the sentence. With
/// `right_plus_one` the right window is widened to `delta + 1` positions.
pub fn context_indices(
    s: usize,
    len: usize,
    delta: usize,
    sent_len: usize,
    right_plus_one: bool,
) -> Vec<usize> {
    debug_assert!(s + len <= sent_len);
    let left = s.saturating_sub(delta);
    let right_width = if right_plus_one { delta + 1 } else { delta };
    let mut out = Vec::with_capacity(2 * delta + 1);
    out.extend(left..s);
    out.extend((s + len..s + len + right_width).take_while(|&i| i < sent_len));
    out
}

/// Ordered collection of unique patterns with optional corpus frequencies.
///
/// Patterns whose every word resolved against a vocabulary participate in
/// occurrence matching; patterns with out-of-vocabulary words are retained
/// for file round-trips but never matched.
#[derive(Debug, Clone)]
pub struct PatternLexicon {
    patterns: Vec<RelationalPattern>,
    freqs: Vec<u64>,
    by_surface: HashMap<String, usize>,
    match_index: HashMap<Vec<usize>, usize>,
    max_match_len: usize,
}

impl PatternLexicon {
    fn from_entries(entries: Vec<(RelationalPattern, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut patterns = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        let mut by_surface = HashMap::new();
        let mut match_index = HashMap::new();
        let mut max_match_len = 0;
        for (pat, freq) in entries {
            let surface = pat.surface();
            if let Some(&idx) = by_surface.get(&surface) {
                freqs[idx] += freq;
                continue;
            }
            let idx = patterns.len();
            by_surface.insert(surface, idx);
            if !pat.has_oov() {
                max_match_len = max_match_len.max(pat.ids.len());
                match_index.insert(pat.ids.clone(), idx);
            }
            patterns.push(pat);
            freqs.push(freq);
        }
        Ok(PatternLexicon {
            patterns,
            freqs,
            by_surface,
            match_index,
            max_match_len,
        })
    }

    /// Loads a lexicon file: one pattern per line, space-separated lemmas;
    /// blank lines skipped, duplicate lines collapsed.
    pub fn load<P: AsRef<Path>>(path: P, vocab: Option<&dyn TokenLookup>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push((RelationalPattern::from_surface(&line, vocab), 0));
        }
        Self::from_entries(entries)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = File::create(path)?;
        for pat in &self.patterns {
            writeln!(f, "{}", pat.surface())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn pattern(&self, idx: usize) -> &RelationalPattern {
        &self.patterns[idx]
    }

    pub fn patterns(&self) -> &[RelationalPattern] {
        &self.patterns
    }

    pub fn freq(&self, idx: usize) -> u64 {
        self.freqs[idx]
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.by_surface.get(surface).copied()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.by_surface.contains_key(surface)
    }

    /// Number of patterns containing out-of-vocabulary words.
    pub fn oov_count(&self) -> usize {
        self.patterns.iter().filter(|p| p.has_oov()).count()
    }

    /// Finds all non-overlapping pattern matches in a sentence of vocabulary
    /// ids. Overlaps are resolved longest-match-first, then leftmost; the
    /// result is sorted by start position.
    pub fn find_occurrences(&self, sentence: &[usize]) -> Vec<PatternOccurrence> {
        let mut candidates = Vec::new();
        for s in 0..sentence.len() {
            let longest = self.max_match_len.min(sentence.len() - s);
            for len in 1..=longest {
                if let Some(&pattern) = self.match_index.get(&sentence[s..s + len]) {
                    candidates.push(PatternOccurrence { pattern, s, len });
                }
            }
        }
        resolve_overlaps(candidates)
    }
}

/// Longest-match-first, then leftmost, greedy non-overlapping selection.
fn resolve_overlaps(mut candidates: Vec<PatternOccurrence>) -> Vec<PatternOccurrence> {
    candidates.sort_by(|a, b| b.len.cmp(&a.len).then(a.s.cmp(&b.s)));
    let mut accepted: Vec<PatternOccurrence> = Vec::new();
    for c in candidates {
        let overlaps = accepted
            .iter()
            .any(|a| c.s < a.s + a.len && a.s < c.s + c.len);
        if !overlaps {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|o| o.s);
    accepted
}

/// Coarse part-of-speech classes for pattern extraction. Accepts both
/// simplified tags (V, N, DET, P, ADJ, ADV, PRON) and Penn/TreeTagger tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosClass {
    /// Verbs, including modals.
    Verb,
    /// Nouns, adjectives, adverbs, pronouns, determiners.
    Mid,
    /// Prepositions, particles, the infinitive marker.
    Prep,
    Other,
}

pub fn pos_class(tag: &str) -> PosClass {
    let t = tag.to_ascii_uppercase();
    if t == "MD" || t.starts_with('V') {
        return PosClass::Verb;
    }
    match t.as_str() {
        "P" | "IN" | "TO" | "RP" | "PRT" => PosClass::Prep,
        "DET" | "DT" | "WDT" | "PDT" => PosClass::Mid,
        "PRON" | "PRP" | "PRP$" | "WP" | "WP$" | "PP" | "PP$" => PosClass::Mid,
        "ADJ" | "ADV" => PosClass::Mid,
        _ => {
            if t.starts_with('N') || t.starts_with("JJ") || t.starts_with("RB") || t == "WRB" {
                PosClass::Mid
            } else {
                PosClass::Other
            }
        }
    }
}

/// Longest span starting at `i` that matches `V (W* P)?` over POS classes,
/// or `None` if position `i` is not a verb.
fn longest_candidate(classes: &[PosClass], i: usize) -> Option<usize> {
    if classes[i] != PosClass::Verb {
        return None;
    }
    let mut best = 1;
    let mut j = i + 1;
    while j < classes.len() {
        match classes[j] {
            PosClass::Prep => {
                best = j - i + 1;
                j += 1;
            }
            PosClass::Mid => j += 1,
            _ => break,
        }
    }
    Some(best)
}

/// Extracts verb-headed patterns from a tagged corpus.
///
/// Candidate spans match `V | V P | V W* P` over coarse POS classes, taking
/// the longest span at each verb. The candidate key is the lowercased lemma
/// sequence. Spans longer than `max_len` are dropped, candidates with corpus
/// frequency below `min_freq` are dropped, and lemma sequences present in
/// `exclude` are removed. Output is ordered by frequency (descending), ties
/// lexicographic.
pub fn extract_patterns(
    sentences: &[Vec<TaggedToken>],
    min_freq: u64,
    max_len: usize,
    exclude: Option<&PatternLexicon>,
) -> Result<PatternLexicon> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sent in sentences {
        let classes: Vec<PosClass> = sent.iter().map(|t| pos_class(&t.pos)).collect();
        for i in 0..sent.len() {
            if let Some(len) = longest_candidate(&classes, i) {
                if len > max_len {
                    continue;
                }
                let key = sent[i..i + len]
                    .iter()
                    .map(|t| t.lemma.to_lowercase())
                    .collect::<Vec<_>>()
                    .join(" ");
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }

    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(surface, c)| {
            *c >= min_freq && !exclude.is_some_and(|ex| ex.contains(surface))
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let entries = kept
        .into_iter()
        .map(|(surface, c)| (RelationalPattern::from_surface(&surface, None), c))
        .collect();
    PatternLexicon::from_entries(entries)
}
