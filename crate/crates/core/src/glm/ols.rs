//! Least squares with a cluster-robust (CR0) sandwich covariance.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{CrtError, Result};

#[derive(Clone, Debug)]
pub struct ClusteredOlsFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub n_clusters: usize,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FTest {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

/// Columns that are linear combinations of earlier ones, by a pivot-free
/// incremental Cholesky of `XᵀX`.
pub fn aliased_columns(xtx: &DMatrix<f64>) -> Vec<usize> {
    let p = xtx.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..p {
        // Solve L v = XᵀX[kept, j].
        let mut v = vec![0.0; kept.len()];
        for (a, &ka) in kept.iter().enumerate() {
            let mut s = xtx[(ka, j)];
            for b in 0..a {
                s -= l[(a, b)] * v[b];
            }
            v[a] = s / l[(a, a)];
        }
        let d = xtx[(j, j)] - v.iter().map(|x| x * x).sum::<f64>();
        if d <= 1e-10 * xtx[(j, j)].max(1e-300) {
            aliased.push(j);
            continue;
        }
        let a = kept.len();
        for (b, vb) in v.iter().enumerate() {
            l[(a, b)] = *vb;
        }
        l[(a, a)] = d.sqrt();
        kept.push(j);
    }
    aliased
}

pub fn fit_ols_clustered(x: &DMatrix<f64>, y: &[f64], clusters: &[usize], names: &[String]) -> Result<ClusteredOlsFit> {
    let (n, p) = x.shape();
    if y.len() != n || clusters.len() != n {
        return Err(CrtError::validation("response and cluster ids must match design rows"));
    }
    if n < p {
        return Err(CrtError::validation("fewer rows than columns"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CrtError::validation("non-finite input"));
    }
    let xtx = x.transpose() * x;
    let aliased = aliased_columns(&xtx);
    if !aliased.is_empty() {
        return Err(CrtError::RankDeficient(
            aliased.iter().map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}"))).collect(),
        ));
    }
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| CrtError::numerical("cross-product matrix is not positive definite"))?;
    let yv = DVector::from_column_slice(y);
    let coef = chol.solve(&(x.transpose() * &yv));
    let resid = &yv - x * &coef;
    let a_inv = chol.inverse();

    let n_clusters = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = DMatrix::<f64>::zeros(n_clusters, p);
    for r in 0..n {
        let g = clusters[r];
        for j in 0..p {
            sums[(g, j)] += x[(r, j)] * resid[r];
        }
    }
    let g_count = {
        let mut seen = vec![false; n_clusters];
        clusters.iter().for_each(|&g| seen[g] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if g_count < 2 {
        return Err(CrtError::validation("at least two clusters are required"));
    }
    let meat = sums.transpose() * &sums;
    let mut cov = &a_inv * meat * &a_inv;
    cov = (&cov + cov.transpose()) * 0.5;
    let df = (g_count - 1) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).map_err(|e| CrtError::numerical(e.to_string()))?;
    let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let t: Vec<f64> = (0..p).map(|j| coef[j] / se[j]).collect();
    let pv = t
        .iter()
        .map(|&tj| if tj.is_finite() { 2.0 * (1.0 - tdist.cdf(tj.abs())) } else { f64::NAN })
        .collect();
    Ok(ClusteredOlsFit {
        names: names.to_vec(),
        coef: coef.as_slice().to_vec(),
        cov,
        se,
        t,
        p: pv,
        n_clusters: g_count,
        residuals: resid.as_slice().to_vec(),
    })
}

/// Wald F-test of `R β = r` with the given covariance and denominator df.
pub fn wald_f(coef: &[f64], cov: &DMatrix<f64>, r_mat: &DMatrix<f64>, r_vec: &[f64], df2: f64) -> Result<FTest> {
    let q = r_mat.nrows();
    if q == 0 || r_mat.ncols() != coef.len() || r_vec.len() != q {
        return Err(CrtError::validation("restriction matrix has the wrong shape"));
    }
    let b = DVector::from_column_slice(coef);
    let d = r_mat * b - DVector::from_column_slice(r_vec);
    let m = r_mat * cov * r_mat.transpose();
    let inv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| m.try_inverse())
        .ok_or_else(|| CrtError::numerical("restriction covariance is singular"))?;
    let f = d.dot(&(inv * &d)) / q as f64;
    let dist = FisherSnedecor::new(q as f64, df2).map_err(|e| CrtError::numerical(e.to_string()))?;
    Ok(FTest {
        f,
        df1: q as f64,
        df2,
        p: if f.is_finite() { 1.0 - dist.cdf(f.max(0.0)) } else { f64::NAN },
    })
}

impl ClusteredOlsFit {
    pub fn f_test(&self, r_mat: &DMatrix<f64>, r_vec: &[f64]) -> Result<FTest> {
        wald_f(&self.coef, &self.cov, r_mat, r_vec, (self.n_clusters - 1) as f64)
    }

    /// Joint test that the listed coefficients are zero.
    pub fn f_test_zero(&self, idx: &[usize]) -> Result<FTest> {
        let mut r = DMatrix::zeros(idx.len(), self.coef.len());
        for (a, &j) in idx.iter().enumerate() {
            r[(a, j)] = 1.0;
        }
        self.f_test(&r, &vec![0.0; idx.len()])
    }
}
