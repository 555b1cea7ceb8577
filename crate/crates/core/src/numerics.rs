//! Small numerical helpers shared by the modules: deterministic reductions,
//! least-squares line fits and a conjugate-gradient solver.

use rayon::prelude::*;

use crate::{Error, Result};

/// Block size for the parallel pair loops. Fixed so that the reduction tree,
/// and therefore the rounding, does not depend on the number of threads.
pub const PAIR_BLOCK: usize = 256;

/// Sums `values` by recursive halving.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Evaluates `row(i)` for every `i < n` in fixed-size blocks (in parallel)
/// and combines the block totals with [`pairwise_sum`]. The result is
/// bit-identical for any thread count.
pub fn blocked_sum<F>(n: usize, row: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let blocks: Vec<f64> = (0..n.div_ceil(PAIR_BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * PAIR_BLOCK;
            let hi = (lo + PAIR_BLOCK).min(n);
            let partial: Vec<f64> = (lo..hi).map(&row).collect();
            pairwise_sum(&partial)
        })
        .collect();
    pairwise_sum(&blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line through `(x, y)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} abscissae vs {} ordinates", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Fit { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("degenerate abscissae in line fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit { slope, intercept, r_squared })
}

/// Log-log fit, `log|y| = slope * log x + c`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if let Some(bad) = x.iter().chain(y).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Numeric(format!("power-law fit needs positive finite data, got {bad}")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// Conjugate gradients for a symmetric positive-definite operator.
///
/// `apply(x, out)` writes `A x` into `out`. Returns the iteration count.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    let b_norm = dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= rel_tol * b_norm {
        return Ok(0);
    }
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!("operator not positive definite (p.Ap = {pap:e})")));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * b_norm {
            return Ok(it);
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::Numeric(format!(
        "conjugate gradients did not reach {rel_tol:e} in {max_iter} iterations (residual {:e})",
        rr.sqrt() / b_norm
    )))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
