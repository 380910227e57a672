//! K-fold cross-validation by respondent, computed from per-fold Gram blocks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::problem::{crossprod, Features, Layout, Mode};
use super::solver::{QuadProblem, WarmStart};
use super::HierNetConfig;
use crate::encoding::DesignMatrix;
use crate::error::{CrtError, Result};
use crate::rng::{stream, Tag};

#[derive(Clone, Debug)]
pub struct CvResult {
    pub lambda_selected: f64,
    pub grid: Vec<f64>,
    /// Mean held-out squared error at each grid value.
    pub curve: Vec<f64>,
    /// Held-out error of the intercept-only model.
    pub null_error: f64,
}

/// Fold of every respondent, a pure function of the seed.
pub fn fold_assignment(n_resp: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_resp).collect();
    order.shuffle(&mut stream(seed, Tag::Folds, 0, 0));
    let mut fold = vec![0; n_resp];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

struct FoldStats {
    n: f64,
    h: DMatrix<f64>,
    g: DVector<f64>,
    s: DVector<f64>,
    r_sum: f64,
    r_sq: f64,
}

fn fold_stats(f: &DMatrix<f64>, r: &[f64], rows: &[usize]) -> FoldStats {
    let sub = f.select_rows(rows);
    let rv = DVector::from_iterator(rows.len(), rows.iter().map(|&i| r[i]));
    FoldStats {
        n: rows.len() as f64,
        h: crossprod(&sub, &sub),
        g: sub.tr_mul(&rv),
        s: DVector::from_iterator(sub.ncols(), sub.column_iter().map(|c| c.sum())),
        r_sum: rv.sum(),
        r_sq: rv.norm_squared(),
    }
}

/// Chooses λ by minimizing mean held-out squared error over folds of
/// respondents. Symmetric designs keep a respondent's twin rows together.
pub fn cross_validate(dm: &DesignMatrix, y: &[f64], cfg: &HierNetConfig, seed: u64) -> Result<CvResult> {
    cfg.validate()?;
    let mode = if dm.symmetric { Mode::Symmetric } else { Mode::Full };
    let layout = Arc::new(Layout::new(dm, mode, &[])?);
    let feat = Features::new(layout.clone(), dm, y)?;
    cross_validate_features(&feat, &dm.respondent, cfg, seed)
}

pub(crate) fn cross_validate_features(
    feat: &Features,
    respondent: &[usize],
    cfg: &HierNetConfig,
    seed: u64,
) -> Result<CvResult> {
    let k = cfg.cv_folds;
    if k < 2 {
        return Err(CrtError::validation("cv_folds must be at least 2"));
    }
    let n_eff = feat.rows();
    let n_resp = respondent[..n_eff].iter().copied().max().map_or(0, |m| m + 1);
    if n_resp < k {
        return Err(CrtError::validation(format!(
            "cross-validation needs at least {k} respondents, found {n_resp}"
        )));
    }
    let fold = fold_assignment(n_resp, k, seed);
    let mut rows = vec![Vec::new(); k];
    for r in 0..n_eff {
        rows[fold[respondent[r]]].push(r);
    }
    let total = fold_stats(&feat.f, &feat.r, &(0..n_eff).collect::<Vec<_>>());
    let folds: Vec<FoldStats> = rows.iter().map(|rs| fold_stats(&feat.f, &feat.r, rs)).collect();
    let full_prob = feat.problem();
    let grid = cfg.grid(full_prob.lambda_max());
    let with_intercept = feat.layout.mode == Mode::Full;
    let opts = cfg.solver_options();

    let mut curve = vec![0.0; grid.len()];
    let mut null_error = 0.0;
    for fs in &folds {
        let nt = total.n - fs.n;
        let h_t = (&total.h - &fs.h) / nt;
        let g_t = (&total.g - &fs.g) / nt;
        let s_t = (&total.s - &fs.s) / nt;
        let rbar = if with_intercept { (total.r_sum - fs.r_sum) / nt } else { 0.0 };
        let (h, g) = if with_intercept {
            (&h_t - &s_t * s_t.transpose(), &g_t - &s_t * rbar)
        } else {
            (h_t, g_t)
        };
        let c0 = 0.5 * ((total.r_sq - fs.r_sq) / nt - rbar * rbar);
        let prob = QuadProblem {
            h,
            g,
            c0,
            structure: feat.layout.structure.clone(),
        };
        null_error += (fs.r_sq - 2.0 * rbar * fs.r_sum + fs.n * rbar * rbar) / fs.n;
        let mut warm: Option<WarmStart> = None;
        for (li, &lam) in grid.iter().enumerate() {
            let res = prob.solve(lam, &opts, warm.as_ref());
            let th = DVector::from_column_slice(&res.theta);
            let b0 = if with_intercept { rbar - s_t.dot(&th) } else { 0.0 };
            let quad = th.dot(&(&fs.h * &th));
            let mse = (fs.r_sq - 2.0 * b0 * fs.r_sum - 2.0 * th.dot(&fs.g)
                + fs.n * b0 * b0
                + 2.0 * b0 * fs.s.dot(&th)
                + quad)
                / fs.n;
            curve[li] += mse / k as f64;
            warm = Some(res.warm);
        }
    }
    null_error /= k as f64;
    let mut best = 0;
    for i in 1..grid.len() {
        if curve[i] < curve[best] {
            best = i;
        }
    }
    Ok(CvResult {
        lambda_selected: grid[best],
        grid,
        curve,
        null_error,
    })
}
