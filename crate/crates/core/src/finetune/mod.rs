//! Convex rescoring on top of frozen embeddings.
//!
//! With the embeddings fixed, a square matrix M reweights the question/triple
//! score. M is fitted by minimizing a squared-hinge ranking loss with
//! Frobenius regularization; the problem is convex in M, so the solver's only
//! job is precision. Regularization strength is picked on a held-out split by
//! pairwise ranking accuracy, then M is refitted on everything.

mod lbfgs;

pub use lbfgs::Trace;

use rand::Rng;

use crate::datagen::{QAPair, Vocabulary};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{encode_question, encode_triple, EmbeddingModel, SimilarityMatrix};
use crate::trainer::corrupt;

/// One fitting example: question embedding, answer embedding, and the
/// embedding of a corrupted alternative. All in f64; the fit is done at
/// double precision and cast once at the end.
#[derive(Debug, Clone)]
pub struct FinetuneExample {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub g_neg: Vec<f64>,
}

#[derive(Debug)]
pub struct FinetuneSet {
    k: usize,
    examples: Vec<FinetuneExample>,
}

impl FinetuneSet {
    /// Embeds `pairs` with the frozen model and draws one corrupted triple
    /// per pair. Negatives are fixed here, not resampled during the fit.
    pub fn build(
        model: &EmbeddingModel,
        kb: &KnowledgeBase,
        vocab: &Vocabulary,
        pairs: &[QAPair],
        corrupt_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no pairs to fit on".into()));
        }
        model.check_compat(vocab.len(), kb.slot_count())?;
        let mut examples = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let q = encode_question(&pair.question, vocab);
            let neg_t = corrupt(&pair.answer, kb, corrupt_prob, rng)?;
            let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
            examples.push(FinetuneExample {
                f: widen(model.question_embedding(&q)),
                g: widen(model.triple_embedding(&encode_triple(kb, &pair.answer))),
                g_neg: widen(model.triple_embedding(&encode_triple(kb, &neg_t))),
            });
        }
        Ok(FinetuneSet { k: model.k(), examples })
    }

    /// Assembles a set from raw embedding vectors.
    pub fn from_raw(k: usize, examples: Vec<FinetuneExample>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if examples.is_empty() {
            return Err(Error::EmptyInput("no examples".into()));
        }
        for (i, e) in examples.iter().enumerate() {
            if e.f.len() != k || e.g.len() != k || e.g_neg.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "example {} has lengths {}/{}/{}, expected {}",
                    i,
                    e.f.len(),
                    e.g.len(),
                    e.g_neg.len(),
                    k
                )));
            }
        }
        Ok(FinetuneSet { k, examples })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[FinetuneExample] {
        &self.examples
    }
}

/// f' M d for one example, with d = g - g_neg. Positive means the true
/// triple outranks the corrupted one.
fn rank_gap(m: &[f64], k: usize, e: &FinetuneExample) -> f64 {
    let mut total = 0.0;
    for a in 0..k {
        let row = &m[a * k..(a + 1) * k];
        let mut inner = 0.0;
        for b in 0..k {
            inner += row[b] * (e.g[b] - e.g_neg[b]);
        }
        total += e.f[a] * inner;
    }
    total
}

/// Regularized mean squared hinge: lambda/2 |M|_F^2 plus the mean of
/// max(0, 1 - f'Mg + f'Mg')^2 over the examples.
pub fn objective(m: &[f64], k: usize, examples: &[FinetuneExample], lambda: f64) -> f64 {
    assert_eq!(m.len(), k * k, "matrix length");
    let reg: f64 = m.iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
    let mut loss = 0.0;
    for e in examples {
        let h = 1.0 - rank_gap(m, k, e);
        if h > 0.0 {
            loss += h * h;
        }
    }
    reg + loss / examples.len() as f64
}

/// Exact gradient of [`objective`]: lambda M plus (2/m) sum over active
/// examples of h * f (g_neg - g)^T.
pub fn gradient(m: &[f64], k: usize, examples: &[FinetuneExample], lambda: f64) -> Vec<f64> {
    assert_eq!(m.len(), k * k, "matrix length");
    let mut grad: Vec<f64> = m.iter().map(|v| lambda * v).collect();
    let scale = 2.0 / examples.len() as f64;
    for e in examples {
        let h = 1.0 - rank_gap(m, k, e);
        if h > 0.0 {
            let coef = scale * h;
            for a in 0..k {
                let fa = coef * e.f[a];
                if fa == 0.0 {
                    continue;
                }
                let row = &mut grad[a * k..(a + 1) * k];
                for b in 0..k {
                    row[b] += fa * (e.g_neg[b] - e.g[b]);
                }
            }
        }
    }
    grad
}

/// Fraction of examples whose true triple strictly outranks its corrupted
/// alternative under M. Ties count as failures.
pub fn pairwise_accuracy(m: &[f64], k: usize, examples: &[FinetuneExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples.iter().filter(|e| rank_gap(m, k, e) > 0.0).count();
    hits as f64 / examples.len() as f64
}

/// Minimizes the objective at one regularization strength. Starts from
/// `init` (identity when None).
pub fn solve(
    set_k: usize,
    examples: &[FinetuneExample],
    lambda: f64,
    init: Option<Vec<f64>>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, Trace)> {
    let x0 = match init {
        Some(x) => {
            if x.len() != set_k * set_k {
                return Err(Error::ShapeMismatch(format!(
                    "init length {} does not match k={}",
                    x.len(),
                    set_k
                )));
            }
            x
        }
        None => identity_flat(set_k),
    };
    lbfgs::minimize(
        |m| (objective(m, set_k, examples, lambda), gradient(m, set_k, examples, lambda)),
        x0,
        tol,
        max_iters,
    )
}

fn identity_flat(k: usize) -> Vec<f64> {
    let mut x = vec![0.0; k * k];
    for i in 0..k {
        x[i * k + i] = 1.0;
    }
    x
}

/// Regularization strengths from 1e-7 to 1e-1 in half-decade steps.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-7.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub lambda_grid: Vec<f64>,
    /// Leading fraction of examples used for fitting; the rest validate.
    pub train_fraction: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lambda_grid: default_lambda_grid(),
            train_fraction: 0.4,
            tol: 1e-9,
            max_iters: 200,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("empty lambda grid".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("lambda values must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LambdaRow {
    pub lambda: f64,
    pub train_objective: f64,
    pub val_accuracy: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub rows: Vec<LambdaRow>,
    pub selected_lambda: f64,
    /// Identity-matrix accuracy on the same validation split.
    pub identity_val_accuracy: f64,
    /// True when no grid row beat the identity matrix on validation and the
    /// returned matrix is the identity itself.
    pub selected_identity: bool,
    pub refit_objective: f64,
}

/// Full selection procedure: fit at each grid strength on the leading
/// split, score pairwise accuracy on the rest, keep the best (first on
/// ties), then refit at that strength on all examples. The identity matrix
/// competes in the selection too; when it strictly beats every fitted
/// candidate on validation it is returned unchanged, so rescoring can never
/// rank worse than the raw scores on the validation split.
pub fn fit(set: &FinetuneSet, cfg: &FinetuneConfig) -> Result<(SimilarityMatrix, FitReport)> {
    cfg.validate()?;
    let m_total = set.len();
    let n_train = ((m_total as f64) * cfg.train_fraction).ceil() as usize;
    if n_train == 0 || n_train >= m_total {
        return Err(Error::EmptyInput(format!(
            "{} examples cannot be split {}:{} with both sides nonempty",
            m_total,
            cfg.train_fraction,
            1.0 - cfg.train_fraction
        )));
    }
    let train = &set.examples[..n_train];
    let val = &set.examples[n_train..];

    let mut rows = Vec::with_capacity(cfg.lambda_grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let (m, trace) = solve(set.k, train, lambda, None, cfg.tol, cfg.max_iters)?;
        let acc = pairwise_accuracy(&m, set.k, val);
        rows.push(LambdaRow {
            lambda,
            train_objective: *trace.objectives.last().expect("nonempty trace"),
            val_accuracy: acc,
            converged: trace.converged,
        });
        if best.map_or(true, |(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    let (best_idx, best_acc) = best.expect("nonempty grid");
    let selected_lambda = cfg.lambda_grid[best_idx];
    let identity_val_accuracy = pairwise_accuracy(&identity_flat(set.k), set.k, val);

    let selected_identity = identity_val_accuracy > best_acc;
    let (m_final, refit_objective) = if selected_identity {
        let id = identity_flat(set.k);
        let obj = objective(&id, set.k, &set.examples, selected_lambda);
        (id, obj)
    } else {
        let (m_full, trace) =
            solve(set.k, &set.examples, selected_lambda, None, cfg.tol, cfg.max_iters)?;
        (m_full, *trace.objectives.last().expect("nonempty trace"))
    };
    let values: Vec<f32> = m_final.iter().map(|&v| v as f32).collect();
    let matrix = SimilarityMatrix::new(set.k, values, selected_lambda as f32)?;
    let report = FitReport {
        rows,
        selected_lambda,
        identity_val_accuracy,
        selected_identity,
        refit_objective,
    };
    Ok((matrix, report))
}
