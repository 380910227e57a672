//! ℓ1-penalized logistic regression by proximal Newton with coordinate
//! descent on each weighted least-squares subproblem.
//!
//! Objective: `mean(log(1 + e^η) - yη) + λ Σ_j pf_j |β_j|`, with
//! `η = offset + b0 + Xβ`.

use nalgebra::DMatrix;

use super::logistic::{log1pexp, sigmoid};
use crate::error::{CrtError, Result};

#[derive(Clone, Debug)]
pub struct LassoOptions {
    pub intercept: bool,
    pub tol: f64,
    pub max_iter: usize,
    /// Per-column penalty multipliers; `None` means all ones.
    pub penalty_factor: Option<Vec<f64>>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            intercept: true,
            tol: 1e-9,
            max_iter: 200,
            penalty_factor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoLogisticFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn check(x: &DMatrix<f64>, y: &[f64], offset: Option<&[f64]>) -> Result<()> {
    if y.len() != x.nrows() || offset.is_some_and(|o| o.len() != y.len()) {
        return Err(CrtError::validation("lasso inputs have mismatched lengths"));
    }
    if x.iter().chain(y).chain(offset.unwrap_or(&[])).any(|v| !v.is_finite()) {
        return Err(CrtError::validation("non-finite input to lasso logistic"));
    }
    Ok(())
}

fn objective(eta: &[f64], y: &[f64], beta: &[f64], pf: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let loss = eta.iter().zip(y).map(|(&e, &yy)| log1pexp(e) - yy * e).sum::<f64>() / n;
    loss + lambda * beta.iter().zip(pf).map(|(b, p)| p * b.abs()).sum::<f64>()
}

fn linear(x: &DMatrix<f64>, offset: Option<&[f64]>, b0: f64, beta: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut eta: Vec<f64> = match offset {
        Some(o) => o.iter().map(|v| v + b0).collect(),
        None => vec![b0; n],
    };
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += b * v;
            }
        }
    }
    eta
}

/// Smallest λ at which all penalized slopes are zero (intercept refitted).
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64], offset: Option<&[f64]>, opts: &LassoOptions) -> Result<f64> {
    check(x, y, offset)?;
    let n = y.len() as f64;
    let pf = penalty(opts, x.ncols());
    let null = fit_lasso_logistic(x, y, offset, f64::INFINITY, opts, None)?;
    let eta = linear(x, offset, null.intercept, &vec![0.0; x.ncols()]);
    let mut lm: f64 = 0.0;
    for j in 0..x.ncols() {
        if pf[j] > 0.0 {
            let g: f64 = x.column(j).iter().zip(&eta).zip(y).map(|((v, e), yy)| v * (yy - sigmoid(*e))).sum::<f64>() / n;
            lm = lm.max(g.abs() / pf[j]);
        }
    }
    Ok(lm)
}

fn penalty(opts: &LassoOptions, p: usize) -> Vec<f64> {
    opts.penalty_factor.clone().unwrap_or_else(|| vec![1.0; p])
}

pub fn fit_lasso_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    offset: Option<&[f64]>,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&LassoLogisticFit>,
) -> Result<LassoLogisticFit> {
    check(x, y, offset)?;
    if !(lambda >= 0.0) {
        return Err(CrtError::validation("lambda must be nonnegative"));
    }
    let (n, p) = x.shape();
    let nf = n as f64;
    let pf = penalty(opts, p);
    if pf.len() != p {
        return Err(CrtError::validation("penalty_factor length does not match columns"));
    }
    let (mut b0, mut beta) = match warm {
        Some(w) if w.coef.len() == p => (w.intercept, w.coef.clone()),
        _ => (0.0, vec![0.0; p]),
    };
    if lambda.is_infinite() {
        beta.iter_mut().zip(&pf).for_each(|(b, &f)| {
            if f > 0.0 {
                *b = 0.0
            }
        });
    }
    let lam = if lambda.is_infinite() { 0.0 } else { lambda };
    let active_cols: Vec<usize> = (0..p).filter(|&j| !(lambda.is_infinite() && pf[j] > 0.0)).collect();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).iter().map(|v| v * v).sum::<f64>()).collect();

    let mut eta = linear(x, offset, b0, &beta);
    let mut obj = objective(&eta, y, &beta, &pf, lam);
    let mut trace = vec![obj];
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    while iterations < opts.max_iter {
        iterations += 1;
        // Quadratic model: weights and working residuals.
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            w[i] = (mu * (1.0 - mu)).max(1e-5);
            r[i] = (y[i] - mu) / w[i];
        }
        let mut nb0 = b0;
        let mut nbeta = beta.clone();
        let wsum: f64 = w.iter().sum();
        let xw_sq: Vec<f64> = (0..p)
            .map(|j| x.column(j).iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>() / nf)
            .collect();
        // Convergence is judged on the fitted values: with collinear
        // dummies the coefficients can drift along flat directions.
        let mut r_start = r.clone();
        for _sweep in 0..1000 {
            r_start.copy_from_slice(&r);
            if opts.intercept {
                let g: f64 = w.iter().zip(&r).map(|(wi, ri)| wi * ri).sum::<f64>() / wsum;
                if g != 0.0 {
                    nb0 += g;
                    r.iter_mut().for_each(|ri| *ri -= g);
                }
            }
            for &j in &active_cols {
                if col_sq[j] == 0.0 || xw_sq[j] == 0.0 {
                    continue;
                }
                let col = x.column(j);
                let g = col.iter().zip(&w).zip(&r).map(|((v, wi), ri)| v * wi * ri).sum::<f64>() / nf + xw_sq[j] * nbeta[j];
                let t = lam * pf[j];
                let nv = if g > t {
                    (g - t) / xw_sq[j]
                } else if g < -t {
                    (g + t) / xw_sq[j]
                } else {
                    0.0
                };
                let d = nv - nbeta[j];
                if d != 0.0 {
                    for (ri, v) in r.iter_mut().zip(col.iter()) {
                        *ri -= d * v;
                    }
                    nbeta[j] = nv;
                }
            }
            let moved = r.iter().zip(&r_start).zip(&w).map(|((a, b), wi)| wi * (a - b) * (a - b)).sum::<f64>() / nf;
            if moved.sqrt() < 1e-10 {
                break;
            }
        }
        // Line search along the Newton direction keeps the objective monotone.
        let db0 = nb0 - b0;
        let dbeta: Vec<f64> = nbeta.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cb0 = b0 + t * db0;
            let cbeta: Vec<f64> = beta.iter().zip(&dbeta).map(|(b, d)| b + t * d).collect();
            let ceta = linear(x, offset, cb0, &cbeta);
            let cobj = objective(&ceta, y, &cbeta, &pf, lam);
            if cobj <= obj {
                b0 = cb0;
                beta = cbeta;
                eta = ceta;
                accepted = true;
                let change = obj - cobj;
                obj = cobj;
                trace.push(obj);
                if change <= opts.tol * obj.abs().max(1e-12) {
                    return Ok(LassoLogisticFit {
                        intercept: b0,
                        coef: beta,
                        lambda,
                        objective: obj,
                        trace,
                        iterations,
                    });
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LassoLogisticFit {
        intercept: b0,
        coef: beta,
        lambda,
        objective: obj,
        trace,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct LassoCv {
    pub lambda_selected: f64,
    pub grid: Vec<f64>,
    /// Mean held-out deviance per observation.
    pub curve: Vec<f64>,
}

/// Cross-validated λ over a log grid from λ_max down to `λ_max · ratio`.
/// `fold` gives the fold of every row.
pub fn cv_lasso_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    offset: Option<&[f64]>,
    fold: &[usize],
    n_lambda: usize,
    ratio: f64,
    opts: &LassoOptions,
) -> Result<LassoCv> {
    check(x, y, offset)?;
    let k = fold.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(CrtError::validation("cross-validation needs at least two folds"));
    }
    let lmax = lasso_lambda_max(x, y, offset, opts)?;
    let top = if lmax > 0.0 { lmax } else { 1e-6 };
    let grid: Vec<f64> = (0..n_lambda)
        .map(|i| top * (ratio.ln() * i as f64 / (n_lambda.max(2) - 1) as f64).exp())
        .collect();
    let mut curve = vec![0.0; grid.len()];
    let mut counts = 0usize;
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let ot: Option<Vec<f64>> = offset.map(|o| train.iter().map(|&i| o[i]).collect());
        let xv = x.select_rows(&test);
        let ov: Option<Vec<f64>> = offset.map(|o| test.iter().map(|&i| o[i]).collect());
        let mut warm: Option<LassoLogisticFit> = None;
        for (li, &lam) in grid.iter().enumerate() {
            let fit = fit_lasso_logistic(&xt, &yt, ot.as_deref(), lam, opts, warm.as_ref())?;
            let eta = linear(&xv, ov.as_deref(), fit.intercept, &fit.coef);
            let dev: f64 = test.iter().zip(&eta).map(|(&i, &e)| 2.0 * (log1pexp(e) - y[i] * e)).sum();
            curve[li] += dev;
            warm = Some(fit);
        }
        counts += test.len();
    }
    curve.iter_mut().for_each(|c| *c /= counts as f64);
    let mut best = 0;
    for i in 1..grid.len() {
        if curve[i] < curve[best] {
            best = i;
        }
    }
    Ok(LassoCv {
        lambda_selected: grid[best],
        grid,
        curve,
    })
}
