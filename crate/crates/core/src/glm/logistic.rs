//! Maximum-likelihood logistic regression by Newton's method.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::ols::{wald_f, FTest};
use crate::error::{CrtError, Result};

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    /// Inverse observed information at the MLE.
    pub cov: DMatrix<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub n: usize,
}

pub(crate) fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn deviance(eta: &[f64], y: &[f64]) -> f64 {
    2.0 * eta.iter().zip(y).map(|(&e, &yy)| log1pexp(e) - yy * e).sum::<f64>()
}

/// Nonzero pattern of each row, used to form `XᵀWX` cheaply on dummy designs.
struct SparseRows {
    idx: Vec<Vec<u32>>,
    val: Vec<Vec<f64>>,
}

impl SparseRows {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut idx = vec![Vec::new(); n];
        let mut val = vec![Vec::new(); n];
        for j in 0..p {
            for (r, &v) in x.column(j).iter().enumerate() {
                if v != 0.0 {
                    idx[r].push(j as u32);
                    val[r].push(v);
                }
            }
        }
        SparseRows { idx, val }
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(ix, vx)| ix.iter().zip(vx).map(|(&j, &v)| beta[j as usize] * v).sum())
            .collect()
    }

    fn info_and_grad(&self, eta: &[f64], y: &[f64], p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for r in 0..eta.len() {
            let mu = sigmoid(eta[r]);
            let w = mu * (1.0 - mu);
            let res = y[r] - mu;
            let (ix, vx) = (&self.idx[r], &self.val[r]);
            for a in 0..ix.len() {
                let ja = ix[a] as usize;
                g[ja] += vx[a] * res;
                let wa = w * vx[a];
                for b in 0..=a {
                    h[(ja, ix[b] as usize)] += wa * vx[b];
                }
            }
        }
        // Rows list columns in increasing order, so only the lower triangle
        // was filled.
        for a in 0..p {
            for b in (a + 1)..p {
                h[(a, b)] = h[(b, a)];
            }
        }
        (h, g)
    }
}

/// Newton-Raphson with step halving. Complete or quasi-complete separation
/// is reported as [`CrtError::Separation`].
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(CrtError::validation("response length does not match design rows"));
    }
    if n <= p {
        return Err(CrtError::validation("logistic fit needs more rows than columns"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(CrtError::validation("logistic response must be 0/1 and inputs finite"));
    }
    let rows = SparseRows::new(x);
    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut dev = deviance(&eta, y);
    let max_iter = 100;
    for it in 1..=max_iter {
        let (h, g) = rows.info_and_grad(&eta, y, p);
        let chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| CrtError::RankDeficient(vec!["information matrix is singular".into()]))?;
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let eta_c = rows.eta(&cand);
            let dev_c = deviance(&eta_c, y);
            if dev_c <= dev + 1e-12 * dev.abs() {
                beta = cand;
                eta = eta_c;
                let change = dev - dev_c;
                dev = dev_c;
                accepted = true;
                if eta.iter().any(|e| e.abs() > 30.0) && dev < 1e-6 * n as f64 {
                    return Err(CrtError::Separation);
                }
                if change.abs() <= 1e-10 * (dev.abs() + 0.1) {
                    if eta.iter().any(|e| e.abs() > 30.0) {
                        return Err(CrtError::Separation);
                    }
                    let (h, _) = rows.info_and_grad(&eta, y, p);
                    let cov = h
                        .cholesky()
                        .map(|c| c.inverse())
                        .ok_or_else(|| CrtError::numerical("information matrix is singular at the MLE"))?;
                    return Ok(LogisticFit {
                        coef: beta,
                        cov,
                        deviance: dev,
                        iterations: it,
                        n,
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
    if eta.iter().any(|e| e.abs() > 30.0) {
        return Err(CrtError::Separation);
    }
    Err(CrtError::numerical("logistic regression did not converge"))
}

impl LogisticFit {
    pub fn gradient(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        let eta = x * DVector::from_column_slice(&self.coef);
        let res = DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(yy, e)| yy - sigmoid(*e)));
        (x.transpose() * res).as_slice().to_vec()
    }

    /// Wald F-test that the coefficients in `idx` are zero, on
    /// `(|idx|, n - p)` degrees of freedom.
    pub fn wald_f(&self, idx: &[usize]) -> Result<FTest> {
        let mut r = DMatrix::zeros(idx.len(), self.coef.len());
        for (a, &j) in idx.iter().enumerate() {
            r[(a, j)] = 1.0;
        }
        wald_f(&self.coef, &self.cov, &r, &vec![0.0; idx.len()], (self.n - self.coef.len()) as f64)
    }
}

/// Deviance-based F-test of a nested logistic model: `F = Δdev / q` on
/// `(q, n - p)` degrees of freedom with the binomial dispersion fixed at 1.
pub fn lr_f(full: &LogisticFit, restricted: &LogisticFit) -> Result<FTest> {
    let q = full.coef.len() as f64 - restricted.coef.len() as f64;
    if q <= 0.0 {
        return Err(CrtError::validation("restricted model must have fewer coefficients"));
    }
    let df2 = (full.n - full.coef.len()) as f64;
    let f = ((restricted.deviance - full.deviance) / q).max(0.0);
    let dist = FisherSnedecor::new(q, df2).map_err(|e| CrtError::numerical(e.to_string()))?;
    Ok(FTest {
        f,
        df1: q,
        df2,
        p: 1.0 - dist.cdf(f),
    })
}
