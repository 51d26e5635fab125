//! Answering questions against the triple store: pick candidate triples,
//! score them all, sort.
//!
//! Candidate selection works without a POS tagger. Rare question substrings
//! that match a symbol's rendered name stand in for noun phrases; "rare"
//! means fewer KB occurrences than a configurable threshold. Scoring a
//! filtered set and scoring the whole KB go through the same path, so the
//! filter can only restrict, never reorder.

use std::collections::{BTreeSet, HashSet};

use crate::datagen::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{dot, encode_question, encode_triple, EmbeddingModel, SimilarityMatrix};

/// Surface strings at or above this many KB occurrences are considered too
/// common to identify an answer.
pub const DEFAULT_FREQ_THRESHOLD: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Every triple in the KB.
    Full,
    /// Result of string-matching candidate selection.
    Filtered,
    /// Caller-supplied pool, e.g. from a labeled evaluation file.
    Provided,
}

/// A question plus the triple indices under consideration for it.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub question: Vec<String>,
    pub triples: Vec<u32>,
    pub provenance: Provenance,
}

impl CandidateSet {
    pub fn full(question: Vec<String>, kb: &KnowledgeBase) -> Self {
        CandidateSet {
            question,
            triples: (0..kb.len() as u32).collect(),
            provenance: Provenance::Full,
        }
    }

    /// Wraps a caller-supplied pool. Rejects out-of-range indices and drops
    /// repeats, keeping first occurrences in order.
    pub fn provided(question: Vec<String>, triples: Vec<u32>, kb: &KnowledgeBase) -> Result<Self> {
        let n = kb.len() as u32;
        let mut seen = HashSet::with_capacity(triples.len());
        let mut kept = Vec::with_capacity(triples.len());
        for idx in triples {
            if idx >= n {
                return Err(Error::ShapeMismatch(format!(
                    "candidate index {} out of range for {} triples",
                    idx, n
                )));
            }
            if seen.insert(idx) {
                kept.push(idx);
            }
        }
        Ok(CandidateSet { question, triples: kept, provenance: Provenance::Provided })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    Plain,
    Finetuned,
}

/// Candidates sorted by score, best first. Ties break toward the lower
/// triple index so identical inputs always produce identical output.
#[derive(Debug, Clone)]
pub struct RankedAnswerList {
    pub question: Vec<String>,
    pub entries: Vec<(u32, f32)>,
    pub scorer: Scorer,
}

fn singular(s: &str) -> Option<&str> {
    s.strip_suffix('s').filter(|r| !r.is_empty())
}

/// A question n-gram found in the KB lexicon, directly or through its
/// singular form.
#[derive(Debug)]
struct SurfaceMatch {
    start: usize,
    len: usize,
    surface: String,
    freq: u32,
}

impl SurfaceMatch {
    fn contains(&self, other: &SurfaceMatch) -> bool {
        self.start <= other.start
            && self.start + self.len >= other.start + other.len
            && self.len > other.len
    }
}

fn lexicon_freq(kb: &KnowledgeBase, surface: &str) -> Option<u32> {
    kb.surface_occurrences(surface)
        .or_else(|| singular(surface).and_then(|sg| kb.surface_occurrences(sg)))
}

/// Question substrings worth filtering on: maximal token n-grams that match
/// a rendered symbol name and occur fewer than `freq_threshold` times in the
/// KB. If nothing clears the threshold the least frequent match is used
/// anyway. Matched strings are joined by singular forms (one trailing "s"
/// stripped) that the lexicon also knows.
pub fn extract_candidate_strings(
    question: &[String],
    kb: &KnowledgeBase,
    freq_threshold: u32,
) -> Vec<String> {
    let n = question.len();
    let cap = kb.max_surface_tokens().min(n);
    let mut matches = Vec::new();
    for start in 0..n {
        for len in 1..=cap.min(n - start) {
            let surface = question[start..start + len].join(" ");
            if let Some(freq) = lexicon_freq(kb, &surface) {
                matches.push(SurfaceMatch { start, len, surface, freq });
            }
        }
    }
    if matches.is_empty() {
        return Vec::new();
    }

    let rare: Vec<&SurfaceMatch> = matches.iter().filter(|m| m.freq < freq_threshold).collect();
    let mut picked: Vec<&SurfaceMatch> = if rare.is_empty() {
        // Nothing is rare enough; fall back to the single least frequent
        // match, preferring longer spans and then earlier ones.
        let best = matches
            .iter()
            .min_by(|a, b| {
                a.freq
                    .cmp(&b.freq)
                    .then(b.len.cmp(&a.len))
                    .then(a.start.cmp(&b.start))
            })
            .expect("nonempty matches");
        vec![best]
    } else {
        // A sub-span is dropped only when a containing span also cleared
        // the threshold.
        rare.iter()
            .filter(|m| !rare.iter().any(|o| o.contains(m)))
            .copied()
            .collect()
    };
    picked.sort_by(|a, b| a.start.cmp(&b.start).then(b.len.cmp(&a.len)));

    let mut out: Vec<String> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for m in &picked {
        if seen.insert(m.surface.as_str()) {
            out.push(m.surface.clone());
        }
    }
    let singulars: Vec<String> = out
        .iter()
        .filter_map(|s| singular(s))
        .filter(|sg| kb.surface_occurrences(sg).is_some() && !seen.contains(sg))
        .map(str::to_owned)
        .collect();
    out.extend(singulars);
    out
}

/// Restricts the KB to triples containing at least one extracted string.
/// No extraction means no candidates: the system abstains rather than
/// guess over everything.
pub fn filter_candidates(
    question: &[String],
    kb: &KnowledgeBase,
    freq_threshold: u32,
) -> CandidateSet {
    let strings = extract_candidate_strings(question, kb, freq_threshold);
    let mut set: BTreeSet<u32> = BTreeSet::new();
    for s in &strings {
        set.extend(kb.triples_containing_string(s).iter().copied());
    }
    CandidateSet {
        question: question.to_vec(),
        triples: set.into_iter().collect(),
        provenance: Provenance::Filtered,
    }
}

/// Scores every candidate and sorts. With a similarity matrix the question
/// embedding is transformed once up front; the identity matrix short-circuits
/// to the plain path, which computes the same numbers.
pub fn rank(
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    matrix: Option<&SimilarityMatrix>,
) -> Result<RankedAnswerList> {
    model.check_compat(vocab.len(), kb.slot_count())?;
    if let Some(m) = matrix {
        if m.k() != model.k() {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {0}x{0} but embeddings have width {1}",
                m.k(),
                model.k()
            )));
        }
    }
    let enc = encode_question(&candidates.question, vocab);
    let f = model.question_embedding(&enc);
    let u = match matrix {
        Some(m) if !m.is_identity() => m.transform(&f),
        _ => f,
    };
    let mut entries: Vec<(u32, f32)> = candidates
        .triples
        .iter()
        .map(|&ti| {
            let g = model.triple_embedding(&encode_triple(kb, kb.triple(ti)));
            (ti, dot(&u, &g))
        })
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(RankedAnswerList {
        question: candidates.question.clone(),
        entries,
        scorer: if matrix.is_some() { Scorer::Finetuned } else { Scorer::Plain },
    })
}

/// [`rank`] over the whole KB.
pub fn full_ranking(
    question: &[String],
    kb: &KnowledgeBase,
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    matrix: Option<&SimilarityMatrix>,
) -> Result<RankedAnswerList> {
    rank(&CandidateSet::full(question.to_vec(), kb), kb, model, vocab, matrix)
}

#[derive(Debug, Clone)]
pub struct AnswerOptions {
    pub use_filter: bool,
    pub freq_threshold: u32,
    /// Entries kept after ranking.
    pub topn: usize,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        AnswerOptions { use_filter: true, freq_threshold: DEFAULT_FREQ_THRESHOLD, topn: 5 }
    }
}

/// End-to-end answering: optional candidate filtering, ranking, truncation.
pub fn answer(
    question: &[String],
    kb: &KnowledgeBase,
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    matrix: Option<&SimilarityMatrix>,
    opts: &AnswerOptions,
) -> Result<RankedAnswerList> {
    let candidates = if opts.use_filter {
        filter_candidates(question, kb, opts.freq_threshold)
    } else {
        CandidateSet::full(question.to_vec(), kb)
    };
    let mut ranked = rank(&candidates, kb, model, vocab, matrix)?;
    ranked.entries.truncate(opts.topn);
    Ok(ranked)
}
