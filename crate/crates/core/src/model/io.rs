//! On-disk model directory.
//!
//! ```text
//! dir/
//!   meta         "QAEMB1" then "n_v n_e k" on the second line
//!   vocab.txt    one word per line, index order
//!   symbols.txt  one raw symbol name per line, id order
//!   V.bin        n_v * k little-endian f32, row-major
//!   W.bin        n_e * k little-endian f32, row-major
//!   M.bin        k * k little-endian f32, only when a rescoring matrix exists
//!   lambda       its regularization strength, text; present iff M.bin is
//! ```
//!
//! Weights round-trip bit for bit; nothing is quantized or reordered.

use std::path::Path;

use crate::datagen::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{EmbeddingModel, SimilarityMatrix};

const MAGIC: &str = "QAEMB1";

/// Everything needed to answer questions: weights, the word table, and the
/// symbol table the slot layout was built from. The rescoring matrix is
/// optional.
pub struct ModelBundle {
    pub model: EmbeddingModel,
    pub vocab: Vocabulary,
    pub symbols: Vec<String>,
    pub similarity: Option<SimilarityMatrix>,
}

fn write_floats(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_floats(path: &Path, expect: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expect * 4 {
        return Err(Error::ModelFormat(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expect * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Slot count implied by a symbol name list: two slots per entity, one per
/// relationship.
fn slot_count_of(symbols: &[String]) -> Result<usize> {
    let mut slots = 0usize;
    for s in symbols {
        if s.ends_with(".e") {
            slots += 2;
        } else if s.ends_with(".r") {
            slots += 1;
        } else {
            return Err(Error::ModelFormat(format!("symbol {s:?} lacks a kind suffix")));
        }
    }
    Ok(slots)
}

pub fn save(
    dir: impl AsRef<Path>,
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    symbols: &[String],
    similarity: Option<&SimilarityMatrix>,
) -> Result<()> {
    let dir = dir.as_ref();
    if vocab.len() != model.n_v() {
        return Err(Error::ShapeMismatch(format!(
            "vocabulary has {} words, model expects {}",
            vocab.len(),
            model.n_v()
        )));
    }
    if slot_count_of(symbols)? != model.n_e() {
        return Err(Error::ShapeMismatch(format!(
            "symbol table implies {} slots, model expects {}",
            slot_count_of(symbols)?,
            model.n_e()
        )));
    }
    if let Some(m) = similarity {
        if m.k() != model.k() {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix k={} does not match model k={}",
                m.k(),
                model.k()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = format!("{}\n{} {} {}\n", MAGIC, model.n_v(), model.n_e(), model.k());
    std::fs::write(dir.join("meta"), meta).map_err(|e| Error::io(dir.join("meta"), e))?;
    write_lines(&dir.join("vocab.txt"), vocab.words().iter())?;
    write_lines(&dir.join("symbols.txt"), symbols.iter())?;
    write_floats(&dir.join("V.bin"), model.words_flat())?;
    write_floats(&dir.join("W.bin"), model.syms_flat())?;
    if let Some(m) = similarity {
        save_similarity(dir, m)?;
    }
    Ok(())
}

/// Writes just the rescoring matrix into an existing model directory.
pub fn save_similarity(dir: impl AsRef<Path>, m: &SimilarityMatrix) -> Result<()> {
    let dir = dir.as_ref();
    write_floats(&dir.join("M.bin"), m.values())?;
    std::fs::write(dir.join("lambda"), format!("{}\n", m.lambda()))
        .map_err(|e| Error::io(dir.join("lambda"), e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta");
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut lines = meta.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::ModelFormat(format!(
            "{}: bad magic, not a model directory",
            meta_path.display()
        )));
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| Error::ModelFormat(format!("{}: missing dimensions", meta_path.display())))?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::ModelFormat(format!("{}: {}", meta_path.display(), e)))?;
    let [n_v, n_e, k] = dims[..] else {
        return Err(Error::ModelFormat(format!(
            "{}: expected 3 dimensions, got {}",
            meta_path.display(),
            dims.len()
        )));
    };

    let words = read_lines(&dir.join("vocab.txt"))?;
    if words.len() != n_v {
        return Err(Error::ModelFormat(format!(
            "vocab.txt has {} words, meta says {}",
            words.len(),
            n_v
        )));
    }
    let vocab = Vocabulary::from_words(words)
        .map_err(|e| Error::ModelFormat(format!("vocab.txt: {e}")))?;

    let symbols = read_lines(&dir.join("symbols.txt"))?;
    let implied = slot_count_of(&symbols)?;
    if implied != n_e {
        return Err(Error::ModelFormat(format!(
            "symbols.txt implies {} slots, meta says {}",
            implied, n_e
        )));
    }

    let word_vecs = read_floats(&dir.join("V.bin"), n_v * k)?;
    let sym_vecs = read_floats(&dir.join("W.bin"), n_e * k)?;
    let model = EmbeddingModel::from_parts(n_v, n_e, k, word_vecs, sym_vecs)?;

    let m_path = dir.join("M.bin");
    let lambda_path = dir.join("lambda");
    let similarity = match (m_path.exists(), lambda_path.exists()) {
        (false, false) => None,
        (true, true) => {
            let values = read_floats(&m_path, k * k)?;
            let text = std::fs::read_to_string(&lambda_path)
                .map_err(|e| Error::io(&lambda_path, e))?;
            let lambda: f32 = text.trim().parse().map_err(|e| {
                Error::ModelFormat(format!("{}: {}", lambda_path.display(), e))
            })?;
            Some(SimilarityMatrix::new(k, values, lambda)?)
        }
        (m, _) => {
            let missing = if m { "lambda" } else { "M.bin" };
            return Err(Error::ModelFormat(format!(
                "{}: rescoring matrix needs both M.bin and lambda, {} is missing",
                dir.display(),
                missing
            )));
        }
    };

    Ok(ModelBundle { model, vocab, symbols, similarity })
}

impl ModelBundle {
    /// Errors unless this bundle was built from a store with the same
    /// symbols in the same order; slot layouts would silently disagree
    /// otherwise.
    pub fn verify_kb(&self, kb: &KnowledgeBase) -> Result<()> {
        if kb.symbol_count() != self.symbols.len() {
            return Err(Error::ShapeMismatch(format!(
                "store has {} symbols, model was built with {}",
                kb.symbol_count(),
                self.symbols.len()
            )));
        }
        for (i, (got, want)) in kb.symbol_names().zip(self.symbols.iter()).enumerate() {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "symbol {} is {:?} in the store but {:?} in the model",
                    i, got, want
                )));
            }
        }
        self.model.check_compat(self.vocab.len(), kb.slot_count())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save(dir, &self.model, &self.vocab, &self.symbols, self.similarity.as_ref())
    }
}
