//! Limited-memory BFGS with Armijo backtracking.
//!
//! Tuned for smooth convex objectives of modest dimension (a few thousand
//! variables). Accepted iterates never increase the objective; the solver
//! errors only when the objective or gradient stops being finite.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const HISTORY: usize = 7;
const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone)]
pub struct Trace {
    /// Objective at the start point and after every accepted iterate;
    /// nonincreasing by construction.
    pub objectives: Vec<f64>,
    /// Whether the gradient tolerance was met before the iteration cap.
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `eval`'s objective starting from `x0`. `eval` returns the
/// objective and its gradient. Stops when the gradient norm falls under
/// `tol * max(1, |x|)`, when progress stalls, or after `max_iters`
/// iterations.
pub fn minimize(
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, Trace)> {
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = eval(&x);
    check_finite(fx, &g, 0)?;
    let mut trace = Trace { objectives: vec![fx], converged: false };

    // (s, y, 1/y.s) pairs, oldest first.
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;

    for iter in 0..max_iters {
        let gnorm = norm(&g);
        if gnorm <= tol * norm(&x).max(1.0) {
            trace.converged = true;
            break;
        }

        let mut dir = two_loop(&g, &hist, n);
        let mut dg = dot(&dir, &g);
        if dg >= 0.0 {
            // Numerical breakdown of the curvature pairs; fall back to
            // steepest descent.
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            dg = -gnorm * gnorm;
        }

        let mut t = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        while t >= MIN_STEP {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            let (ft, gt) = eval(&xt);
            check_finite(ft, &gt, iter + 1)?;
            if ft <= fx + ARMIJO_C1 * t * dg {
                accepted = Some((xt, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No decrease at any step length: the gradient is numerically
            // zero along every usable direction.
            trace.converged = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-10 * norm(&y) * norm(&s) {
            if hist.len() == HISTORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / ys));
        }

        let drop = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.objectives.push(fx);
        if drop <= 1e-14 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 2 {
                trace.converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    Ok((x, trace))
}

fn check_finite(f: f64, g: &[f64], iter: usize) -> Result<()> {
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver(format!(
            "objective or gradient became non-finite at iteration {iter}"
        )));
    }
    Ok(())
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, n: usize) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let alpha = rho * dot(s, &q);
        for i in 0..n {
            q[i] -= alpha * y[i];
        }
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for v in q.iter_mut() {
            *v *= gamma;
        }
    }
    for ((s, y, rho), alpha) in hist.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for i in 0..n {
            q[i] += (alpha - beta) * s[i];
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
