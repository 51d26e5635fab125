//! Margin-ranking SGD over question/triple pairs, with optional paraphrase
//! multitasking and a lock-free parallel mode.
//!
//! Each step ranks the asked triple above a corrupted one by a margin; when
//! paraphrases are given, steps strictly alternate between the two tasks.
//! Updates use per-coordinate adaptive learning rates, and every touched row
//! is projected back into the unit ball. With `workers > 1` the same step
//! runs concurrently on shared atomic weights; workers may overwrite each
//! other, which is accepted for the throughput.

mod params;

pub use params::AdagradState;
use params::{AtomicTables, ExclusiveStore, ParamStore};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{ParaphrasePair, QAPair, QuestionStream, Vocabulary};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triple};
use crate::model::{
    dot, encode_question_counting, encode_triple, EmbeddingModel, SparseEncoding,
};
use crate::seed::mix3;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Required ranking gap between the true triple and a corrupted one.
    pub margin: f32,
    /// Base learning rate before per-coordinate adaptation.
    pub lr0: f32,
    /// Probability of replacing each slot when corrupting a triple.
    pub corrupt_prob: f64,
    /// Total step budget, counting both tasks.
    pub steps: u64,
    pub seed: u64,
    /// Degree of parallelism; 1 is exactly reproducible.
    pub workers: usize,
    /// Stats window length; also the join boundary for parallel workers.
    pub log_every: u64,
    /// Checkpoint cadence in steps, honored at window boundaries.
    pub checkpoint_every: Option<u64>,
}

impl TrainConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        TrainConfig {
            margin: 0.1,
            lr0: 0.1,
            corrupt_prob: 0.66,
            steps,
            seed,
            workers: 1,
            log_every: 1000,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.corrupt_prob > 0.0 && self.corrupt_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "corrupt_prob must be in (0, 1], got {}",
                self.corrupt_prob
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a corrupted triple was produced: the result, which slots the coin
/// chose to replace on the accepted attempt, and how many attempts were
/// thrown away for reproducing the original.
#[derive(Debug, Clone, Copy)]
pub struct CorruptOutcome {
    pub triple: Triple,
    /// Coin outcomes of the accepted attempt.
    pub replaced: [bool; 3],
    /// Coin outcomes of the very first attempt. Unlike `replaced` these are
    /// unconditioned by the redraw loop, so their rates estimate the
    /// replacement probability directly.
    pub first_replaced: [bool; 3],
    pub redraws: u32,
}

/// Draws a negative triple: pick a random store triple, replace each slot of
/// the original with that triple's slot independently with `prob`, and
/// redraw the whole procedure whenever the result equals the original.
/// Errors only when no different triple can ever be produced.
pub fn corrupt_traced(
    t: &Triple,
    kb: &KnowledgeBase,
    prob: f64,
    rng: &mut impl Rng,
) -> Result<CorruptOutcome> {
    let mut attempt = 0u32;
    let mut first: Option<[bool; 3]> = None;
    loop {
        if attempt == 100 && !kb.triples().iter().any(|u| u != t) {
            return Err(Error::DegenerateData(
                "every triple in the store equals the one being corrupted".into(),
            ));
        }
        let tmp = &kb.triples()[rng.random_range(0..kb.len())];
        let replaced = [
            rng.random_bool(prob),
            rng.random_bool(prob),
            rng.random_bool(prob),
        ];
        let first_replaced = *first.get_or_insert(replaced);
        let cand = Triple {
            left: if replaced[0] { tmp.left } else { t.left },
            rel: if replaced[1] { tmp.rel } else { t.rel },
            right: if replaced[2] { tmp.right } else { t.right },
        };
        if cand != *t {
            return Ok(CorruptOutcome { triple: cand, replaced, first_replaced, redraws: attempt });
        }
        attempt += 1;
    }
}

pub fn corrupt(t: &Triple, kb: &KnowledgeBase, prob: f64, rng: &mut impl Rng) -> Result<Triple> {
    Ok(corrupt_traced(t, kb, prob, rng)?.triple)
}

/// A row of one of the two weight tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EmbeddingRow {
    Word(u32),
    Symbol(u32),
}

#[derive(Debug, Clone)]
pub struct RowGrad {
    pub row: EmbeddingRow,
    pub grad: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Hinge value; zero when the margin was already satisfied.
    pub loss: f32,
    /// Rows the step actually wrote, in update order.
    pub touched: Vec<EmbeddingRow>,
}

/// Net slot coefficients of the ranking loss gradient: -1 for positive-only
/// slots, +1 for negative-only, 0 where they overlap.
fn slot_coefficients(pos: &[u32], neg: &[u32], out: &mut Vec<(u32, f32)>) {
    out.clear();
    for &s in pos {
        out.push((s, -1.0));
    }
    for &s in neg {
        out.push((s, 1.0));
    }
    out.sort_unstable_by_key(|&(s, _)| s);
    let mut w = 0;
    for r in 1..out.len() {
        if out[r].0 == out[w].0 {
            out[w].1 += out[r].1;
        } else {
            w += 1;
            out[w] = out[r];
        }
    }
    out.truncate(w + 1);
    out.retain(|&(_, c)| c != 0.0);
}

/// Loss and exact gradients of one ranking step, computed against the
/// current model without applying anything. An inactive hinge returns no
/// gradients.
pub fn qa_step_gradients(
    model: &EmbeddingModel,
    q: &SparseEncoding,
    pos: &SparseEncoding,
    neg: &SparseEncoding,
    margin: f32,
) -> (f32, Vec<RowGrad>) {
    let f = model.question_embedding(q);
    let g_pos = model.triple_embedding(pos);
    let g_neg = model.triple_embedding(neg);
    let loss = margin - dot(&f, &g_pos) + dot(&f, &g_neg);
    if !loss.is_finite() || loss <= 0.0 {
        return (loss, Vec::new());
    }
    let word_grad: Vec<f32> = g_neg.iter().zip(&g_pos).map(|(n, p)| n - p).collect();
    let mut grads = Vec::new();
    for &i in q.indices() {
        grads.push(RowGrad { row: EmbeddingRow::Word(i), grad: word_grad.clone() });
    }
    let mut coeffs = Vec::new();
    slot_coefficients(pos.indices(), neg.indices(), &mut coeffs);
    for (slot, c) in coeffs {
        grads.push(RowGrad {
            row: EmbeddingRow::Symbol(slot),
            grad: f.iter().map(|x| c * x).collect(),
        });
    }
    (loss, grads)
}

/// Same for a paraphrase step: rank pair (a, b) above pair (c, d). Only word
/// rows appear; a question present on both sides nets its two contributions.
pub fn para_step_gradients(
    model: &EmbeddingModel,
    a: &SparseEncoding,
    b: &SparseEncoding,
    c: &SparseEncoding,
    d: &SparseEncoding,
    margin: f32,
) -> (f32, Vec<RowGrad>) {
    let fa = model.question_embedding(a);
    let fb = model.question_embedding(b);
    let fc = model.question_embedding(c);
    let fd = model.question_embedding(d);
    let loss = margin - dot(&fa, &fb) + dot(&fc, &fd);
    if !loss.is_finite() || loss <= 0.0 {
        return (loss, Vec::new());
    }
    let k = model.k();
    let mut acc: BTreeMap<u32, Vec<f32>> = BTreeMap::new();
    let mut add = |enc: &SparseEncoding, vec: &[f32], sign: f32| {
        for &i in enc.indices() {
            let slot = acc.entry(i).or_insert_with(|| vec![0.0; k]);
            for (s, v) in slot.iter_mut().zip(vec) {
                *s += sign * v;
            }
        }
    };
    add(a, &fb, -1.0);
    add(b, &fa, -1.0);
    add(c, &fd, 1.0);
    add(d, &fc, 1.0);
    let grads = acc
        .into_iter()
        .filter(|(_, g)| g.iter().any(|&x| x != 0.0))
        .map(|(row, grad)| RowGrad { row: EmbeddingRow::Word(row), grad })
        .collect();
    (loss, grads)
}

struct StepScratch {
    a: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
    row: Vec<f32>,
    grad: Vec<f32>,
    coeffs: Vec<(u32, f32)>,
}

impl StepScratch {
    fn new(k: usize) -> Self {
        StepScratch {
            a: vec![0.0; k],
            b: vec![0.0; k],
            c: vec![0.0; k],
            row: vec![0.0; k],
            grad: vec![0.0; k],
            coeffs: Vec::new(),
        }
    }
}

fn sum_rows_into<S: ParamStore>(
    store: &mut S,
    enc: &SparseEncoding,
    words: bool,
    out: &mut [f32],
    row_buf: &mut [f32],
) {
    out.fill(0.0);
    for &i in enc.indices() {
        if words {
            store.read_word_row(i, row_buf);
        } else {
            store.read_symbol_row(i, row_buf);
        }
        for (o, r) in out.iter_mut().zip(row_buf.iter()) {
            *o += r;
        }
    }
}

/// One ranking step against a parameter store: computes the hinge at the
/// current weights, and when active applies the adaptive update to every
/// involved row. Returns the hinge value, zero when the constraint is
/// already satisfied; collects written rows if asked.
fn qa_step_on_store<S: ParamStore>(
    store: &mut S,
    q: &SparseEncoding,
    pos: &SparseEncoding,
    neg: &SparseEncoding,
    margin: f32,
    lr0: f32,
    scratch: &mut StepScratch,
    mut touched: Option<&mut Vec<EmbeddingRow>>,
) -> f32 {
    {
        let StepScratch { a, b, c, row, .. } = scratch;
        sum_rows_into(store, q, true, a, row);
        sum_rows_into(store, pos, false, b, row);
        sum_rows_into(store, neg, false, c, row);
    }
    let loss = margin - dot(&scratch.a, &scratch.b) + dot(&scratch.a, &scratch.c);
    if !loss.is_finite() {
        return loss;
    }
    if loss <= 0.0 {
        // Satisfied constraint: hinge is zero and nothing is written.
        return 0.0;
    }
    {
        // Word rows all share the gradient g_neg - g_pos.
        let StepScratch { b, c, grad, .. } = scratch;
        for i in 0..grad.len() {
            grad[i] = c[i] - b[i];
        }
    }
    for &i in q.indices() {
        store.update_word_row(i, &scratch.grad, lr0);
        if let Some(t) = touched.as_deref_mut() {
            t.push(EmbeddingRow::Word(i));
        }
    }
    let mut coeffs = std::mem::take(&mut scratch.coeffs);
    slot_coefficients(pos.indices(), neg.indices(), &mut coeffs);
    for &(slot, cf) in &coeffs {
        {
            let StepScratch { a, grad, .. } = scratch;
            for i in 0..grad.len() {
                grad[i] = cf * a[i];
            }
        }
        store.update_symbol_row(slot, &scratch.grad, lr0);
        if let Some(t) = touched.as_deref_mut() {
            t.push(EmbeddingRow::Symbol(slot));
        }
    }
    scratch.coeffs = coeffs;
    loss
}

/// One paraphrase step against a parameter store. Word rows only. Exactly
/// one of neg1/neg2 must be the same encoding object as its positive
/// counterpart (one-sided replacement).
fn para_step_on_store<S: ParamStore>(
    store: &mut S,
    pos1: &SparseEncoding,
    pos2: &SparseEncoding,
    neg1: &SparseEncoding,
    neg2: &SparseEncoding,
    margin: f32,
    lr0: f32,
    scratch: &mut StepScratch,
    mut touched: Option<&mut Vec<EmbeddingRow>>,
) -> f32 {
    let k = store.k();
    let replaced_second = std::ptr::eq(neg1, pos1);
    debug_assert!(replaced_second || std::ptr::eq(neg2, pos2));
    {
        let StepScratch { a, b, c, row, .. } = scratch;
        sum_rows_into(store, pos1, true, a, row);
        sum_rows_into(store, pos2, true, b, row);
        let newcomer = if replaced_second { neg2 } else { neg1 };
        sum_rows_into(store, newcomer, true, c, row);
    }
    let (fa, fb, f_neg) = (&scratch.a, &scratch.b, &scratch.c);
    let (fc, fd): (&[f32], &[f32]) = if replaced_second { (fa, f_neg) } else { (f_neg, fb) };
    let loss = margin - dot(fa, fb) + dot(fc, fd);
    if !loss.is_finite() {
        return loss;
    }
    if loss <= 0.0 {
        return 0.0;
    }
    let mut acc: BTreeMap<u32, Vec<f32>> = BTreeMap::new();
    let mut add = |enc: &SparseEncoding, vec: &[f32], sign: f32| {
        for &i in enc.indices() {
            let slot = acc.entry(i).or_insert_with(|| vec![0.0; k]);
            for (s, v) in slot.iter_mut().zip(vec) {
                *s += sign * v;
            }
        }
    };
    add(pos1, fb, -1.0);
    add(pos2, fa, -1.0);
    add(neg1, fd, 1.0);
    add(neg2, fc, 1.0);
    for (row, grad) in acc {
        if grad.iter().any(|&x| x != 0.0) {
            store.update_word_row(row, &grad, lr0);
            if let Some(t) = touched.as_deref_mut() {
                t.push(EmbeddingRow::Word(row));
            }
        }
    }
    loss
}

/// One public ranking step: encodes the pair, draws the corruption from
/// `rng`, and updates the model in place.
pub fn sgd_step_qa(
    model: &mut EmbeddingModel,
    state: &mut AdagradState,
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    pair: &QAPair,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<StepReport> {
    let dropped = AtomicU64::new(0);
    let q = encode_question_counting(&pair.question, vocab, &dropped);
    let pos = encode_triple(kb, &pair.answer);
    let neg_t = corrupt(&pair.answer, kb, cfg.corrupt_prob, rng)?;
    let neg = encode_triple(kb, &neg_t);
    let mut scratch = StepScratch::new(model.k());
    let mut touched = Vec::new();
    let mut store = ExclusiveStore { model, state };
    let loss = qa_step_on_store(
        &mut store,
        &q,
        &pos,
        &neg,
        cfg.margin,
        cfg.lr0,
        &mut scratch,
        Some(&mut touched),
    );
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "ranking step".into(), step: 0 });
    }
    Ok(StepReport { loss, touched })
}

/// Draws the negative for a paraphrase step: a uniformly random stored
/// question replaces one side (fair coin). Redraws while the negative pair
/// equals the positive one.
fn sample_para_negative<'p>(
    paras: &'p [ParaphrasePair],
    pos: &ParaphrasePair,
    rng: &mut impl Rng,
) -> Result<(bool, &'p [String])> {
    let mut attempt = 0u32;
    loop {
        if attempt == 100 {
            let only = &pos.first;
            let stuck = pos.second == *only
                && paras.iter().all(|p| p.first == *only && p.second == *only);
            if stuck {
                return Err(Error::DegenerateData(
                    "all paraphrase sides are the same question; no negative pair exists".into(),
                ));
            }
        }
        let slot = rng.random_range(0..2 * paras.len());
        let cand = if slot % 2 == 0 { &paras[slot / 2].first } else { &paras[slot / 2].second };
        let replace_second = rng.random_bool(0.5);
        let unchanged = if replace_second { &pos.second } else { &pos.first };
        if cand != unchanged {
            return Ok((replace_second, cand));
        }
        attempt += 1;
    }
}

/// One public paraphrase step on `paras[idx]`, drawing the negative from
/// `rng`. Only word rows are updated.
pub fn sgd_step_para(
    model: &mut EmbeddingModel,
    state: &mut AdagradState,
    vocab: &Vocabulary,
    paras: &[ParaphrasePair],
    idx: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<StepReport> {
    let pos = &paras[idx];
    let (replace_second, neg_tokens) = sample_para_negative(paras, pos, rng)?;
    let dropped = AtomicU64::new(0);
    let a = encode_question_counting(&pos.first, vocab, &dropped);
    let b = encode_question_counting(&pos.second, vocab, &dropped);
    let n = encode_question_counting(neg_tokens, vocab, &dropped);
    let mut scratch = StepScratch::new(model.k());
    let mut touched = Vec::new();
    let mut store = ExclusiveStore { model, state };
    let (neg1, neg2) = if replace_second { (&a, &n) } else { (&n, &b) };
    let loss = para_step_on_store(
        &mut store,
        &a,
        &b,
        neg1,
        neg2,
        cfg.margin,
        cfg.lr0,
        &mut scratch,
        Some(&mut touched),
    );
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "paraphrase step".into(), step: 0 });
    }
    Ok(StepReport { loss, touched })
}

/// Supplies question/answer pairs by index. Implemented by the lazy
/// generated stream and by materialized lists.
pub trait QaSource: Sync {
    fn len(&self) -> u64;
    fn pair_at(&self, idx: u64) -> QAPair;
}

impl QaSource for QuestionStream<'_> {
    fn len(&self) -> u64 {
        QuestionStream::len(self)
    }

    fn pair_at(&self, idx: u64) -> QAPair {
        self.sample_at(idx)
    }
}

/// A fixed list of pairs.
pub struct QaPairs(pub Vec<QAPair>);

impl QaSource for QaPairs {
    fn len(&self) -> u64 {
        self.0.len() as u64
    }

    fn pair_at(&self, idx: u64) -> QAPair {
        self.0[idx as usize].clone()
    }
}

/// Windowed progress snapshot.
#[derive(Debug, Clone, Copy)]
pub struct ProgressPoint {
    /// Steps completed when the window closed.
    pub step: u64,
    /// Mean ranking loss over the window (active and inactive steps).
    pub qa_loss: f64,
    /// Mean paraphrase loss over the window; 0 when the task is off.
    pub para_loss: f64,
    /// Fraction of window steps with a positive hinge.
    pub violation_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub total_steps: u64,
    pub qa_steps: u64,
    pub para_steps: u64,
    pub qa_loss_mean: f64,
    pub para_loss_mean: f64,
    pub qa_violation_rate: f64,
    pub para_violation_rate: f64,
    /// Question tokens dropped for being out of vocabulary.
    pub oov_dropped: u64,
    pub history: Vec<ProgressPoint>,
}

#[derive(Debug, Default, Clone, Copy)]
struct ChunkStats {
    qa_steps: u64,
    para_steps: u64,
    qa_loss_sum: f64,
    para_loss_sum: f64,
    qa_violations: u64,
    para_violations: u64,
}

impl ChunkStats {
    fn merge(&mut self, o: &ChunkStats) {
        self.qa_steps += o.qa_steps;
        self.para_steps += o.para_steps;
        self.qa_loss_sum += o.qa_loss_sum;
        self.para_loss_sum += o.para_loss_sum;
        self.qa_violations += o.qa_violations;
        self.para_violations += o.para_violations;
    }

    fn point(&self, step: u64) -> ProgressPoint {
        let steps = self.qa_steps + self.para_steps;
        ProgressPoint {
            step,
            qa_loss: if self.qa_steps > 0 { self.qa_loss_sum / self.qa_steps as f64 } else { 0.0 },
            para_loss: if self.para_steps > 0 {
                self.para_loss_sum / self.para_steps as f64
            } else {
                0.0
            },
            violation_rate: if steps > 0 {
                (self.qa_violations + self.para_violations) as f64 / steps as f64
            } else {
                0.0
            },
        }
    }
}

/// Runs `nsteps` steps against a store. `parity_base` carries the worker's
/// global step parity so task alternation stays strict across windows.
#[allow(clippy::too_many_arguments)]
fn run_chunk<S: ParamStore>(
    store: &mut S,
    kb: &KnowledgeBase,
    source: &dyn QaSource,
    paras: Option<&[ParaphrasePair]>,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    parity_base: u64,
    nsteps: u64,
    oov: &AtomicU64,
    scratch: &mut StepScratch,
) -> Result<ChunkStats> {
    let mut stats = ChunkStats::default();
    for local in 0..nsteps {
        let global = parity_base + local;
        let para_turn = paras.is_some() && global % 2 == 1;
        let loss = if para_turn {
            let paras = paras.expect("checked");
            let idx = rng.random_range(0..paras.len());
            let pos = &paras[idx];
            let (replace_second, neg_tokens) = sample_para_negative(paras, pos, rng)?;
            let a = encode_question_counting(&pos.first, vocab, oov);
            let b = encode_question_counting(&pos.second, vocab, oov);
            let n = encode_question_counting(neg_tokens, vocab, oov);
            let (neg1, neg2) = if replace_second { (&a, &n) } else { (&n, &b) };
            let loss = para_step_on_store(
                store, &a, &b, neg1, neg2, cfg.margin, cfg.lr0, scratch, None,
            );
            stats.para_steps += 1;
            stats.para_loss_sum += loss as f64;
            if loss > 0.0 {
                stats.para_violations += 1;
            }
            loss
        } else {
            let pair = source.pair_at(rng.random_range(0..source.len()));
            let q = encode_question_counting(&pair.question, vocab, oov);
            let pos = encode_triple(kb, &pair.answer);
            let neg_t = corrupt(&pair.answer, kb, cfg.corrupt_prob, rng)?;
            let neg = encode_triple(kb, &neg_t);
            let loss =
                qa_step_on_store(store, &q, &pos, &neg, cfg.margin, cfg.lr0, scratch, None);
            stats.qa_steps += 1;
            stats.qa_loss_sum += loss as f64;
            if loss > 0.0 {
                stats.qa_violations += 1;
            }
            loss
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: if para_turn { "paraphrase step".into() } else { "ranking step".into() },
                step: global,
            });
        }
    }
    Ok(stats)
}

/// Trains in place over a step budget. Steps alternate between ranking and
/// paraphrase tasks when paraphrases are present (an empty list means the
/// task is off). The checkpoint callback fires at window boundaries after
/// each full `checkpoint_every` chunk of steps.
pub fn train(
    model: &mut EmbeddingModel,
    kb: &KnowledgeBase,
    source: &dyn QaSource,
    paras: Option<&[ParaphrasePair]>,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    mut checkpoint: Option<&mut dyn FnMut(u64, &EmbeddingModel) -> Result<()>>,
) -> Result<TrainStats> {
    cfg.validate()?;
    model.check_compat(vocab.len(), kb.slot_count())?;
    if source.len() == 0 {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    let paras = paras.filter(|p| !p.is_empty());
    let mut state = AdagradState::new(model.n_v(), model.n_e(), model.k());
    let oov = AtomicU64::new(0);
    let mut totals = ChunkStats::default();
    let mut history = Vec::new();
    let mut done = 0u64;
    let mut interval = 0u64;
    let mut cp_bucket = 0u64;

    fn maybe_checkpoint(
        every: Option<u64>,
        done: u64,
        cp_bucket: &mut u64,
        model: &EmbeddingModel,
        checkpoint: &mut Option<&mut dyn FnMut(u64, &EmbeddingModel) -> Result<()>>,
    ) -> Result<()> {
        if let Some(every) = every {
            let bucket = done / every;
            if bucket > *cp_bucket {
                *cp_bucket = bucket;
                if let Some(cb) = checkpoint.as_mut() {
                    cb(done, model)?;
                }
            }
        }
        Ok(())
    }

    if cfg.workers == 1 {
        let mut scratch = StepScratch::new(model.k());
        while done < cfg.steps {
            let n = (cfg.steps - done).min(cfg.log_every);
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(cfg.seed, 0, interval));
            let mut store = ExclusiveStore { model: &mut *model, state: &mut state };
            let cs = run_chunk(
                &mut store, kb, source, paras, vocab, cfg, &mut rng, done, n, &oov, &mut scratch,
            )?;
            done += n;
            interval += 1;
            totals.merge(&cs);
            history.push(cs.point(done));
            maybe_checkpoint(cfg.checkpoint_every, done, &mut cp_bucket, model, &mut checkpoint)?;
        }
    } else {
        let tables = AtomicTables::snapshot(model, &state);
        let workers = cfg.workers as u64;
        let mut worker_done = vec![0u64; cfg.workers];
        while done < cfg.steps {
            let n = (cfg.steps - done).min(cfg.log_every);
            let shares: Vec<u64> =
                (0..workers).map(|w| n / workers + u64::from(w < n % workers)).collect();
            let results: Vec<Result<ChunkStats>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..cfg.workers)
                    .map(|w| {
                        let mut view = tables.view();
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(mix3(cfg.seed, w as u64, interval));
                        let share = shares[w];
                        let parity = worker_done[w];
                        let oov = &oov;
                        scope.spawn(move || {
                            let mut scratch = StepScratch::new(view.k());
                            run_chunk(
                                &mut view, kb, source, paras, vocab, cfg, &mut rng, parity,
                                share, oov, &mut scratch,
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            });
            let mut window = ChunkStats::default();
            for (w, r) in results.into_iter().enumerate() {
                let cs = r?;
                worker_done[w] += shares[w];
                window.merge(&cs);
            }
            done += n;
            interval += 1;
            totals.merge(&window);
            history.push(window.point(done));
            if cfg.checkpoint_every.is_some_and(|every| done / every > cp_bucket) {
                tables.write_back(model, &mut state);
            }
            maybe_checkpoint(cfg.checkpoint_every, done, &mut cp_bucket, model, &mut checkpoint)?;
        }
        tables.write_back(model, &mut state);
    }

    Ok(TrainStats {
        total_steps: done,
        qa_steps: totals.qa_steps,
        para_steps: totals.para_steps,
        qa_loss_mean: if totals.qa_steps > 0 {
            totals.qa_loss_sum / totals.qa_steps as f64
        } else {
            0.0
        },
        para_loss_mean: if totals.para_steps > 0 {
            totals.para_loss_sum / totals.para_steps as f64
        } else {
            0.0
        },
        qa_violation_rate: if totals.qa_steps > 0 {
            totals.qa_violations as f64 / totals.qa_steps as f64
        } else {
            0.0
        },
        para_violation_rate: if totals.para_steps > 0 {
            totals.para_violations as f64 / totals.para_steps as f64
        } else {
            0.0
        },
        oov_dropped: oov.load(Ordering::Relaxed),
        history,
    })
}
