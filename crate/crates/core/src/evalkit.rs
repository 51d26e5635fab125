//! Metrics over labeled rankings: top-answer precision/recall/F1, mean
//! average precision, precision-recall sweeps, and Top-k hit rates.
//!
//! Precision is measured over answered questions only; an abstention (empty
//! ranking, or top score under the threshold) costs recall but not
//! precision. Questions with no relevant triple at all score 0 and are
//! counted separately so reports can call them out.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ranker::RankedAnswerList;

/// One question's ranked candidates with relevance labels. Entries are kept
/// sorted by descending score, ties toward the lower triple index.
#[derive(Debug, Clone)]
pub struct LabeledRanking {
    question_id: String,
    entries: Vec<(u32, f32, bool)>,
}

impl LabeledRanking {
    pub fn new(question_id: impl Into<String>, mut entries: Vec<(u32, f32, bool)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        LabeledRanking { question_id: question_id.into(), entries }
    }

    /// Attaches labels to ranker output, preserving its order.
    pub fn from_ranked(
        question_id: impl Into<String>,
        ranked: &RankedAnswerList,
        is_relevant: impl Fn(u32) -> bool,
    ) -> Self {
        LabeledRanking {
            question_id: question_id.into(),
            entries: ranked
                .entries
                .iter()
                .map(|&(ti, score)| (ti, score, is_relevant(ti)))
                .collect(),
        }
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn entries(&self) -> &[(u32, f32, bool)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn relevant_count(&self) -> usize {
        self.entries.iter().filter(|e| e.2).count()
    }

    fn top(&self) -> Option<&(u32, f32, bool)> {
        self.entries.first()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn answers_at(r: &LabeledRanking, threshold: f32) -> bool {
    r.top().is_some_and(|e| e.1 >= threshold)
}

/// Quality of the single best answer per question. A question counts as
/// answered when its list is nonempty and the top score clears `threshold`;
/// it counts as correct when that top entry is relevant. Precision divides
/// by answered questions, recall by all of them.
pub fn top1_prf(rankings: &[LabeledRanking], threshold: f32) -> Prf {
    let mut answered = 0;
    let mut correct = 0;
    for r in rankings {
        if answers_at(r, threshold) {
            answered += 1;
            if r.top().expect("answered implies nonempty").2 {
                correct += 1;
            }
        }
    }
    let precision = ratio(correct, answered);
    let recall = ratio(correct, rankings.len());
    Prf { precision, recall, f1: harmonic(precision, recall) }
}

/// Mean over the relevant entries of the precision at their rank. A ranking
/// with nothing relevant scores 0; callers can spot those through
/// [`LabeledRanking::relevant_count`].
pub fn average_precision(ranking: &LabeledRanking) -> f64 {
    let mut seen_relevant = 0usize;
    let mut sum = 0.0f64;
    for (rank0, e) in ranking.entries.iter().enumerate() {
        if e.2 {
            seen_relevant += 1;
            sum += seen_relevant as f64 / (rank0 + 1) as f64;
        }
    }
    if seen_relevant == 0 {
        0.0
    } else {
        sum / seen_relevant as f64
    }
}

/// Mean AP across questions. The per-question values are summed in sorted
/// order, which makes the result independent of how the questions were
/// listed.
pub fn mean_average_precision(rankings: &[LabeledRanking]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::EmptyInput("no rankings to average".into()));
    }
    let mut aps: Vec<f64> = rankings.iter().map(average_precision).collect();
    aps.sort_by(f64::total_cmp);
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Sweeps the threshold over every distinct top-answer score, highest
/// first, and records [`top1_prf`] at each. The final point (lowest
/// threshold) equals an unthresholded evaluation.
pub fn pr_curve(rankings: &[LabeledRanking]) -> Vec<(f32, f64, f64)> {
    let mut tops: Vec<f32> = rankings
        .iter()
        .filter_map(|r| r.top().map(|e| e.1))
        .filter(|s| s.is_finite())
        .collect();
    tops.sort_by(|a, b| b.total_cmp(a));
    tops.dedup();
    tops.into_iter()
        .map(|t| {
            let prf = top1_prf(rankings, t);
            (t, prf.precision, prf.recall)
        })
        .collect()
}

/// Fraction of answering questions with a relevant triple somewhere in the
/// first k entries. Abstaining questions are left out of the denominator.
pub fn topk_hits(rankings: &[LabeledRanking], ks: &[usize]) -> BTreeMap<usize, f64> {
    assert!(ks.iter().all(|&k| k > 0), "k values must be positive");
    let answering: Vec<&LabeledRanking> = rankings.iter().filter(|r| !r.is_empty()).collect();
    ks.iter()
        .map(|&k| {
            let hits = answering
                .iter()
                .filter(|r| r.entries.iter().take(k).any(|e| e.2))
                .count();
            (k, ratio(hits, answering.len()))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub questions: usize,
    pub answered: usize,
    /// Questions whose labeled pool has no relevant triple at all.
    pub zero_relevant: usize,
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: f64,
    pub pr_curve: Vec<(f32, f64, f64)>,
    pub topk: BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn compute(rankings: &[LabeledRanking], threshold: f32, ks: &[usize]) -> Result<Self> {
        let map = mean_average_precision(rankings)?;
        let prf = top1_prf(rankings, threshold);
        Ok(EvalReport {
            questions: rankings.len(),
            answered: rankings.iter().filter(|r| answers_at(r, threshold)).count(),
            zero_relevant: rankings.iter().filter(|r| r.relevant_count() == 0).count(),
            threshold,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            map,
            pr_curve: pr_curve(rankings),
            topk: topk_hits(rankings, ks),
        })
    }

    /// Summary table, one row per call site's method name.
    pub fn table(&self, method: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>7} {:>7} {:>7} {:>7}", "Method", "F1", "Prec", "Recall", "MAP");
        let _ = writeln!(
            out,
            "{:<28} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            method, self.f1, self.precision, self.recall, self.map
        );
        out
    }

    /// Line-oriented key=value form for scripts.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "questions={}", self.questions);
        let _ = writeln!(out, "answered={}", self.answered);
        let _ = writeln!(out, "zero_relevant={}", self.zero_relevant);
        let _ = writeln!(out, "threshold={}", self.threshold);
        let _ = writeln!(out, "precision={}", self.precision);
        let _ = writeln!(out, "recall={}", self.recall);
        let _ = writeln!(out, "f1={}", self.f1);
        let _ = writeln!(out, "map={}", self.map);
        for (k, rate) in &self.topk {
            let _ = writeln!(out, "top{}={}", k, rate);
        }
        out
    }

    /// Recall and precision columns, one sweep point per line, for
    /// plotting.
    pub fn pr_curve_text(&self) -> String {
        let mut out = String::from("# recall\tprecision\n");
        for &(_, p, r) in &self.pr_curve {
            let _ = writeln!(out, "{}\t{}", r, p);
        }
        out
    }
}
