//! Lasso-logistic statistics on the symmetry-augmented data.
//!
//! A logistic fit on the doubled data whose coefficients satisfy
//! `θ^R = -θ^L` has the same loss as a fit on the original rows with the
//! feature `f(row) - f(swapped row)` and no intercept, so every term below
//! is a left-profile feature minus its mirror. The ℓ1 penalty of the reduced
//! problem is half that of the doubled one, which only rescales λ.
//! Columns are scaled to unit root mean square.

use nalgebra::DMatrix;

use crate::design::{ConjointDataset, Covariate, Side};
use crate::error::{CrtError, Result};
use crate::glm::{cv_lasso_logistic, fit_lasso_logistic, LassoLogisticFit, LassoOptions};
use crate::hiernet::fold_assignment;

use super::coef::demeaned_ss;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Main { factor: usize, level: usize },
    /// Target level `k` and partner level in the same profile.
    Within { x: usize, k: usize, factor: usize, level: usize },
    /// Target level `k` and partner level in the other profile.
    Between { x: usize, k: usize, factor: usize, level: usize },
    /// Target level `k` times a respondent covariate (level `None` if numeric).
    Respondent { x: usize, k: usize, cov: usize, level: Option<usize> },
}

fn ind(ds: &ConjointDataset, f: usize, side: Side, r: usize, k: usize) -> f64 {
    (ds.profile_value(f, side, r) == k) as u8 as f64
}

fn covariate_value(ds: &ConjointDataset, cov: usize, level: Option<usize>, r: usize) -> f64 {
    match (&ds.covariates[cov], level) {
        (Covariate::Numeric { standardized, .. }, _) => standardized[r],
        (Covariate::Categorical(v), Some(w)) => (v[r] as usize == w) as u8 as f64,
        (Covariate::Categorical(_), None) => 0.0,
    }
}

fn term_value(ds: &ConjointDataset, t: &Term, r: usize) -> f64 {
    use Side::{Left as L, Right as R};
    match *t {
        Term::Main { factor, level } => ind(ds, factor, L, r, level) - ind(ds, factor, R, r, level),
        Term::Within { x, k, factor, level } => {
            ind(ds, x, L, r, k) * ind(ds, factor, L, r, level) - ind(ds, x, R, r, k) * ind(ds, factor, R, r, level)
        }
        Term::Between { x, k, factor, level } => {
            ind(ds, x, L, r, k) * ind(ds, factor, R, r, level) - ind(ds, x, R, r, k) * ind(ds, factor, L, r, level)
        }
        Term::Respondent { x, k, cov, level } => {
            (ind(ds, x, L, r, k) - ind(ds, x, R, r, k)) * covariate_value(ds, cov, level, r)
        }
    }
}

/// Scaled antisymmetric features, one column per term.
pub fn antisym_design(ds: &ConjointDataset, terms: &[Term]) -> DMatrix<f64> {
    let n = ds.rows();
    let mut x = DMatrix::zeros(n, terms.len());
    for (c, t) in terms.iter().enumerate() {
        let mut col = x.column_mut(c);
        for r in 0..n {
            col[r] = term_value(ds, t, r);
        }
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            col /= rms;
        }
    }
    x
}

pub fn main_terms(ds: &ConjointDataset, factors: impl IntoIterator<Item = usize>) -> Vec<Term> {
    factors
        .into_iter()
        .flat_map(|f| (0..ds.schema.profile[f].n_levels()).map(move |level| Term::Main { factor: f, level }))
        .collect()
}

/// Within- and between-profile terms of target `x` with a partner factor.
pub fn pair_terms(ds: &ConjointDataset, x: usize, partner: usize) -> Vec<Term> {
    let kx = ds.schema.profile[x].n_levels();
    let kp = ds.schema.profile[partner].n_levels();
    let mut out = Vec::new();
    for k in 0..kx {
        for level in 0..kp {
            out.push(Term::Within { x, k, factor: partner, level });
        }
    }
    for k in 0..kx {
        for level in 0..kp {
            out.push(Term::Between { x, k, factor: partner, level });
        }
    }
    out
}

pub fn respondent_terms(ds: &ConjointDataset, x: usize, cov: usize) -> Vec<Term> {
    let kx = ds.schema.profile[x].n_levels();
    let levels: Vec<Option<usize>> = match &ds.covariates[cov] {
        Covariate::Numeric { .. } => vec![None],
        Covariate::Categorical(_) => (0..ds.schema.covariates[cov].n_levels()).map(Some).collect(),
    };
    let mut out = Vec::new();
    for k in 0..kx {
        for &level in &levels {
            out.push(Term::Respondent { x, k, cov, level });
        }
    }
    out
}

/// Sum over partner slices of the squared deviations across target levels.
/// Terms sharing everything but the target level form a slice.
pub fn sliced_ss(terms: &[Term], coef: &[f64], keep: impl Fn(&Term) -> bool) -> f64 {
    use std::collections::BTreeMap;
    let mut slices: BTreeMap<(u8, usize, usize, usize, Option<usize>), Vec<f64>> = BTreeMap::new();
    for (t, &b) in terms.iter().zip(coef) {
        if !keep(t) {
            continue;
        }
        let key = match *t {
            Term::Main { factor, .. } => (0, factor, 0, 0, None),
            Term::Within { x, factor, level, .. } => (1, x, factor, level, None),
            Term::Between { x, factor, level, .. } => (2, x, factor, level, None),
            Term::Respondent { x, cov, level, .. } => (3, x, cov, 0, level),
        };
        slices.entry(key).or_default().push(b);
    }
    slices.values().map(|v| demeaned_ss(v)).sum()
}

/// Lambda search settings shared by the lasso statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoTuning {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub seed: u64,
}

pub fn lasso_options() -> LassoOptions {
    LassoOptions {
        intercept: false,
        ..Default::default()
    }
}

/// Cross-validated λ with folds of respondents.
pub fn cv_lambda(
    ds: &ConjointDataset,
    x: &DMatrix<f64>,
    offset: Option<&[f64]>,
    tuning: &LassoTuning,
) -> Result<f64> {
    if ds.n < tuning.folds || tuning.folds < 2 {
        return Err(CrtError::validation("cross-validation needs at least as many respondents as folds"));
    }
    let by_resp = fold_assignment(ds.n, tuning.folds, tuning.seed);
    let fold: Vec<usize> = (0..ds.rows()).map(|r| by_resp[ds.respondent_of(r)]).collect();
    let y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();
    Ok(cv_lasso_logistic(x, &y, offset, &fold, tuning.n_lambda, tuning.lambda_min_ratio, &lasso_options())?.lambda_selected)
}

pub fn fit_terms(ds: &ConjointDataset, terms: &[Term], offset: Option<&[f64]>, lambda: f64) -> Result<LassoLogisticFit> {
    let x = antisym_design(ds, terms);
    let y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();
    fit_lasso_logistic(&x, &y, offset, lambda, &lasso_options(), None)
}

/// Demeaned main effects of the listed target levels.
pub fn t_lasso_main(terms: &[Term], coef: &[f64], target: usize, levels: &[usize]) -> Result<f64> {
    let v: Vec<f64> = levels
        .iter()
        .map(|&k| {
            terms
                .iter()
                .position(|t| *t == Term::Main { factor: target, level: k })
                .map(|i| coef[i])
                .ok_or_else(|| CrtError::validation("target level absent from the lasso fit"))
        })
        .collect::<Result<_>>()?;
    Ok(demeaned_ss(&v))
}

/// Interaction part of the screening statistic: sliced deviations of the
/// target's interaction terms.
pub fn t_interaction_screen(terms: &[Term], coef: &[f64]) -> f64 {
    sliced_ss(terms, coef, |t| !matches!(t, Term::Main { .. }))
}

/// The distillation stage of the d_I statistic, fitted once on `(Y, Z)`.
#[derive(Clone, Debug)]
pub struct DistilledStage {
    pub target: usize,
    pub selected: Vec<usize>,
    pub offset: Vec<f64>,
    pub lambda: f64,
    pub coef: Vec<f64>,
}

/// Cross-validated lasso of `Y` on the other factors' main effects; the `i`
/// factors with the largest summed squared coefficients are kept. Ties go
/// to the earlier factor.
pub fn distill(ds: &ConjointDataset, target: usize, i: usize, tuning: &LassoTuning, lambda: Option<f64>) -> Result<DistilledStage> {
    let others: Vec<usize> = (0..ds.n_profile()).filter(|&f| f != target).collect();
    if i > others.len() {
        return Err(CrtError::validation(format!(
            "I = {i} exceeds the {} available conditioning factors",
            others.len()
        )));
    }
    let terms = main_terms(ds, others.iter().copied());
    let x = antisym_design(ds, &terms);
    let lambda = match lambda {
        Some(l) => l,
        None => cv_lambda(ds, &x, None, tuning)?,
    };
    let y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();
    let fit = fit_lasso_logistic(&x, &y, None, lambda, &lasso_options(), None)?;
    let mut score: Vec<(usize, f64)> = others.iter().map(|&f| (f, 0.0)).collect();
    for (t, &b) in terms.iter().zip(&fit.coef) {
        if let Term::Main { factor, .. } = t {
            if let Some(s) = score.iter_mut().find(|(g, _)| g == factor) {
                s.1 += b * b;
            }
        }
    }
    score.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let offset: Vec<f64> = (0..ds.rows())
        .map(|r| (0..terms.len()).map(|c| x[(r, c)] * fit.coef[c]).sum())
        .collect();
    Ok(DistilledStage {
        target,
        selected: score.iter().take(i).map(|s| s.0).collect(),
        offset,
        lambda,
        coef: fit.coef,
    })
}

impl DistilledStage {
    pub fn stage_two_terms(&self, ds: &ConjointDataset) -> Vec<Term> {
        let mut terms = main_terms(ds, [self.target]);
        for &f in &self.selected {
            terms.extend(pair_terms(ds, self.target, f));
        }
        terms
    }
}

/// `Σ(β_k - β̄)² + (1/M) Σ (sliced interaction deviations)` with `M` the
/// number of nonzero interaction estimates; the second term is 0 when
/// `M = 0`.
pub fn t_dicrt(terms: &[Term], coef: &[f64]) -> f64 {
    let main = sliced_ss(terms, coef, |t| matches!(t, Term::Main { .. }));
    let m = terms
        .iter()
        .zip(coef)
        .filter(|(t, b)| !matches!(t, Term::Main { .. }) && **b != 0.0)
        .count();
    if m == 0 {
        return main;
    }
    main + sliced_ss(terms, coef, |t| !matches!(t, Term::Main { .. })) / m as f64
}
