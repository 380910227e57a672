//! AMCE baseline: stacked left/right regression with clustered errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{fit_ols_clustered, ClusteredOlsFit, FTest};
use crate::design::{ConjointDataset, Side};
use crate::encoding::ExtraTerm;
use crate::error::{CrtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterUnit {
    #[default]
    Respondent,
    Task,
}

#[derive(Clone, Debug, Serialize)]
pub struct AmceEstimate {
    pub level: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AmceResult {
    pub factor: String,
    pub baseline: String,
    pub estimates: Vec<AmceEstimate>,
    /// t-test p-value for a binary factor, joint F-test otherwise.
    pub p_value: f64,
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    #[serde(skip)]
    pub fit: Option<ClusteredOlsFit>,
    #[serde(skip)]
    pub target_cols: Vec<usize>,
}

/// Stacked design `[X^L; X^R]` with response `[Y; 1 - Y]`: intercept,
/// non-baseline dummies of the target, then non-baseline products for
/// each extra term.
pub fn stacked_design(
    ds: &ConjointDataset,
    target: usize,
    extra: &[ExtraTerm],
    cluster: ClusterUnit,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<usize>, Vec<String>)> {
    if target >= ds.n_profile() {
        return Err(CrtError::validation("AMCE target is not a profile factor"));
    }
    let rows = ds.rows();
    let k = ds.schema.profile[target].n_levels();
    let spec = &ds.schema.profile[target];
    let mut names = vec!["(intercept)".to_string()];
    names.extend((1..k).map(|l| format!("{}={}", spec.name, spec.levels[l])));
    let mut extra_cols: Vec<(usize, usize, usize, usize)> = Vec::new();
    for t in extra {
        if t.a >= ds.n_profile() || t.b >= ds.n_profile() || t.a == t.b {
            return Err(CrtError::validation("extra term refers to an unknown factor"));
        }
        let (fa, fb) = (&ds.schema.profile[t.a], &ds.schema.profile[t.b]);
        for la in 1..fa.n_levels() {
            for lb in 1..fb.n_levels() {
                extra_cols.push((t.a, la, t.b, lb));
                names.push(format!("{}={}:{}={}", fa.name, fa.levels[la], fb.name, fb.levels[lb]));
            }
        }
    }
    let p = names.len();
    let mut x = DMatrix::zeros(2 * rows, p);
    let mut y = Vec::with_capacity(2 * rows);
    for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        for r in 0..rows {
            let i = s * rows + r;
            x[(i, 0)] = 1.0;
            let lv = ds.profile_value(target, side, r);
            if lv > 0 {
                x[(i, lv)] = 1.0;
            }
            for (c, &(a, la, b, lb)) in extra_cols.iter().enumerate() {
                if ds.profile_value(a, side, r) == la && ds.profile_value(b, side, r) == lb {
                    x[(i, k + c)] = 1.0;
                }
            }
        }
        for r in 0..rows {
            let v = ds.y[r] as f64;
            y.push(if s == 0 { v } else { 1.0 - v });
        }
    }
    let clusters = (0..2 * rows)
        .map(|i| {
            let r = i % rows;
            match cluster {
                ClusterUnit::Respondent => ds.respondent_of(r),
                ClusterUnit::Task => r,
            }
        })
        .collect();
    Ok((x, y, clusters, names))
}

pub fn amce_test(ds: &ConjointDataset, target: usize, extra: &[ExtraTerm], cluster: ClusterUnit) -> Result<AmceResult> {
    let (x, y, clusters, names) = stacked_design(ds, target, extra, cluster)?;
    let fit = fit_ols_clustered(&x, &y, &clusters, &names)?;
    let k = ds.schema.profile[target].n_levels();
    let target_cols: Vec<usize> = (1..k).collect();
    let f = fit.f_test_zero(&target_cols)?;
    let p_value = if k == 2 { fit.p[1] } else { f.p };
    let spec = &ds.schema.profile[target];
    Ok(AmceResult {
        factor: spec.name.clone(),
        baseline: spec.levels[0].clone(),
        estimates: (1..k)
            .map(|l| AmceEstimate {
                level: spec.levels[l].clone(),
                estimate: fit.coef[l],
                se: fit.se[l],
            })
            .collect(),
        p_value,
        f: f.f,
        df1: f.df1,
        df2: f.df2,
        fit: Some(fit),
        target_cols,
    })
}

/// F-test that the AMCEs of the listed levels are all equal (the baseline
/// level's AMCE is 0 by construction).
pub fn amce_equality_test(ds: &ConjointDataset, target: usize, levels: &[usize], cluster: ClusterUnit) -> Result<FTest> {
    if levels.len() < 2 {
        return Err(CrtError::validation("equality test needs at least two levels"));
    }
    let res = amce_test(ds, target, &[], cluster)?;
    let fit = res.fit.expect("fit retained");
    let p = fit.coef.len();
    let mut r = DMatrix::zeros(levels.len() - 1, p);
    for (row, w) in levels.windows(2).enumerate() {
        if w[0] > 0 {
            r[(row, w[0])] += 1.0;
        }
        if w[1] > 0 {
            r[(row, w[1])] -= 1.0;
        }
    }
    fit.f_test(&r, &vec![0.0; levels.len() - 1])
}
