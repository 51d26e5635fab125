//! Joint word/symbol embedding model.
//!
//! Questions and triples live in the same k-dimensional space. A question
//! embeds as the sum of its word vectors, a triple as the sum of its three
//! slot vectors, and relevance is the dot product of the two. A fitted
//! square matrix can be interposed to rescore without touching the
//! embeddings.

pub mod io;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datagen::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triple};

/// Binary sparse vector: the set of active dimensions out of `dimension`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseEncoding {
    indices: Vec<u32>,
    dimension: usize,
}

impl SparseEncoding {
    /// Indices are sorted and deduplicated; out-of-range indices are
    /// rejected.
    pub fn new(mut indices: Vec<u32>, dimension: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&max) = indices.last() {
            if max as usize >= dimension {
                return Err(Error::ShapeMismatch(format!(
                    "index {} out of range for dimension {}",
                    max, dimension
                )));
            }
        }
        Ok(SparseEncoding { indices, dimension })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Encodes a question as the set of its in-vocabulary words. Unknown words
/// are dropped silently; use [`encode_question_counting`] to observe them.
pub fn encode_question(tokens: &[String], vocab: &Vocabulary) -> SparseEncoding {
    let indices: Vec<u32> = tokens.iter().filter_map(|t| vocab.lookup(t)).collect();
    SparseEncoding::new(indices, vocab.len()).expect("vocabulary indices in range")
}

/// Same as [`encode_question`], adding the number of dropped tokens to
/// `dropped`. Shared counter so parallel training can aggregate.
pub fn encode_question_counting(
    tokens: &[String],
    vocab: &Vocabulary,
    dropped: &AtomicU64,
) -> SparseEncoding {
    let mut miss = 0u64;
    let indices: Vec<u32> = tokens
        .iter()
        .filter_map(|t| {
            let hit = vocab.lookup(t);
            if hit.is_none() {
                miss += 1;
            }
            hit
        })
        .collect();
    if miss > 0 {
        dropped.fetch_add(miss, Ordering::Relaxed);
    }
    SparseEncoding::new(indices, vocab.len()).expect("vocabulary indices in range")
}

/// Encodes a triple as its three embedding slots: side-specific slots for
/// the two entities plus the relationship slot. Always exactly three
/// indices; slots never collide, even for `(a, r, a)`.
pub fn encode_triple(kb: &KnowledgeBase, t: &Triple) -> SparseEncoding {
    let slots = kb.triple_slots(t);
    let enc = SparseEncoding::new(slots.to_vec(), kb.slot_count()).expect("slots in range");
    debug_assert_eq!(enc.len(), 3);
    enc
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales a row down to unit Euclidean norm when it exceeds it. Rows at or
/// under the unit ball are left untouched bit for bit.
pub(crate) fn project_unit(row: &mut [f32]) {
    let norm_sq: f32 = row.iter().map(|x| x * x).sum();
    if norm_sq > 1.0 {
        let inv = 1.0 / norm_sq.sqrt();
        for x in row {
            *x *= inv;
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    k: usize,
    n_v: usize,
    n_e: usize,
    /// n_v rows of k floats, row-major.
    word_vecs: Vec<f32>,
    /// n_e rows of k floats, row-major.
    sym_vecs: Vec<f32>,
}

impl EmbeddingModel {
    /// Fresh model with every row drawn from a zero-mean normal with
    /// variance 1/k, then projected into the unit ball. Deterministic given
    /// the RNG state.
    pub fn init(n_v: usize, n_e: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_v == 0 || n_e == 0 || k == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive, got n_v={} n_e={} k={}",
                n_v, n_e, k
            )));
        }
        let normal = Normal::new(0.0f64, (1.0 / k as f64).sqrt())
            .expect("valid normal parameters");
        let mut draw = |n: usize| -> Vec<f32> {
            let mut v = Vec::with_capacity(n * k);
            for _ in 0..n * k {
                v.push(normal.sample(rng) as f32);
            }
            for row in v.chunks_mut(k) {
                project_unit(row);
            }
            v
        };
        let word_vecs = draw(n_v);
        let sym_vecs = draw(n_e);
        Ok(EmbeddingModel { k, n_v, n_e, word_vecs, sym_vecs })
    }

    /// Assembles a model from raw row-major weight tables.
    pub fn from_parts(
        n_v: usize,
        n_e: usize,
        k: usize,
        word_vecs: Vec<f32>,
        sym_vecs: Vec<f32>,
    ) -> Result<Self> {
        if n_v == 0 || n_e == 0 || k == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive, got n_v={} n_e={} k={}",
                n_v, n_e, k
            )));
        }
        if word_vecs.len() != n_v * k || sym_vecs.len() != n_e * k {
            return Err(Error::ShapeMismatch(format!(
                "weight lengths {}/{} do not match n_v={} n_e={} k={}",
                word_vecs.len(),
                sym_vecs.len(),
                n_v,
                n_e,
                k
            )));
        }
        Ok(EmbeddingModel { k, n_v, n_e, word_vecs, sym_vecs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn word_row(&self, i: u32) -> &[f32] {
        let i = i as usize;
        &self.word_vecs[i * self.k..(i + 1) * self.k]
    }

    pub fn symbol_row(&self, j: u32) -> &[f32] {
        let j = j as usize;
        &self.sym_vecs[j * self.k..(j + 1) * self.k]
    }

    pub(crate) fn word_row_mut(&mut self, i: u32) -> &mut [f32] {
        let i = i as usize;
        let k = self.k;
        &mut self.word_vecs[i * k..(i + 1) * k]
    }

    pub(crate) fn symbol_row_mut(&mut self, j: u32) -> &mut [f32] {
        let j = j as usize;
        let k = self.k;
        &mut self.sym_vecs[j * k..(j + 1) * k]
    }

    pub fn words_flat(&self) -> &[f32] {
        &self.word_vecs
    }

    pub fn syms_flat(&self) -> &[f32] {
        &self.sym_vecs
    }

    pub(crate) fn words_flat_mut(&mut self) -> &mut [f32] {
        &mut self.word_vecs
    }

    pub(crate) fn syms_flat_mut(&mut self) -> &mut [f32] {
        &mut self.sym_vecs
    }

    /// Errors unless the model was built for these vocabulary and slot
    /// counts.
    pub fn check_compat(&self, n_v: usize, n_e: usize) -> Result<()> {
        if self.n_v != n_v || self.n_e != n_e {
            return Err(Error::ShapeMismatch(format!(
                "model built for n_v={} n_e={}, got n_v={} n_e={}",
                self.n_v, self.n_e, n_v, n_e
            )));
        }
        Ok(())
    }

    fn sum_rows(&self, flat: &[f32], enc: &SparseEncoding) -> Vec<f32> {
        let mut out = vec![0.0f32; self.k];
        for &i in enc.indices() {
            let row = &flat[i as usize * self.k..(i as usize + 1) * self.k];
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        out
    }

    /// Question embedding: sum of active word rows.
    pub fn question_embedding(&self, enc: &SparseEncoding) -> Vec<f32> {
        assert_eq!(enc.dimension(), self.n_v, "question encoding dimension");
        self.sum_rows(&self.word_vecs, enc)
    }

    /// Triple embedding: sum of active slot rows.
    pub fn triple_embedding(&self, enc: &SparseEncoding) -> Vec<f32> {
        assert_eq!(enc.dimension(), self.n_e, "triple encoding dimension");
        self.sum_rows(&self.sym_vecs, enc)
    }

    /// Relevance of a triple to a question: dot of the two embeddings.
    pub fn score(&self, q: &SparseEncoding, t: &SparseEncoding) -> f32 {
        dot(&self.question_embedding(q), &self.triple_embedding(t))
    }

    /// Similarity of two questions in the same space.
    pub fn score_paraphrase(&self, a: &SparseEncoding, b: &SparseEncoding) -> f32 {
        dot(&self.question_embedding(a), &self.question_embedding(b))
    }

    /// Relevance after passing the question embedding through `m`.
    pub fn score_finetuned(
        &self,
        q: &SparseEncoding,
        t: &SparseEncoding,
        m: &SimilarityMatrix,
    ) -> Result<f32> {
        if m.k() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix is {}x{} but embeddings have k={}",
                m.k(),
                m.k(),
                self.k
            )));
        }
        let f = self.question_embedding(q);
        let g = self.triple_embedding(t);
        Ok(dot(&m.transform(&f), &g))
    }

    /// Embedding slots most similar to a word's vector, best first, ties by
    /// ascending slot. `topn` is clipped to the slot count.
    pub fn nearest_symbols(
        &self,
        word: &str,
        vocab: &Vocabulary,
        topn: usize,
    ) -> Result<Vec<(u32, f32)>> {
        let Some(idx) = vocab.lookup(word) else {
            return Err(Error::UnknownWord(word.to_string()));
        };
        let w = self.word_row(idx);
        let mut sims: Vec<(u32, f32)> = (0..self.n_e as u32)
            .map(|j| (j, dot(w, self.symbol_row(j))))
            .collect();
        sims.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite similarity")
                .then(a.0.cmp(&b.0))
        });
        sims.truncate(topn);
        Ok(sims)
    }
}

/// Square rescoring matrix applied between question and triple embeddings,
/// with the regularization strength it was fitted at.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    k: usize,
    /// k x k, row-major.
    values: Vec<f32>,
    lambda: f32,
}

impl SimilarityMatrix {
    pub fn new(k: usize, values: Vec<f32>, lambda: f32) -> Result<Self> {
        if k == 0 || values.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix length {} does not match k={}",
                values.len(),
                k
            )));
        }
        Ok(SimilarityMatrix { k, values, lambda })
    }

    pub fn identity(k: usize) -> Self {
        let mut values = vec![0.0f32; k * k];
        for i in 0..k {
            values[i * k + i] = 1.0;
        }
        SimilarityMatrix { k, values, lambda: 0.0 }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn lambda(&self) -> f32 {
        self.lambda
    }

    pub fn is_identity(&self) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(i, &v)| v == if i / self.k == i % self.k { 1.0 } else { 0.0 })
    }

    /// Left-multiplies a question embedding: `out[b] = sum_a f[a] * M[a][b]`.
    /// Scoring a triple embedding against the result equals the full
    /// bilinear form.
    pub fn transform(&self, f: &[f32]) -> Vec<f32> {
        assert_eq!(f.len(), self.k, "embedding length");
        let mut out = vec![0.0f32; self.k];
        for (a, &fa) in f.iter().enumerate() {
            let row = &self.values[a * self.k..(a + 1) * self.k];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += fa * m;
            }
        }
        out
    }
}
