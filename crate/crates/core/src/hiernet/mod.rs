//! Hierarchical-interaction lasso (strong hierarchy) on squared-error loss.
//!
//! Columns are standardized before fitting and interaction features are
//! products of standardized main columns; reported coefficients are on that
//! standardized scale.

mod cv;
mod problem;
pub mod solver;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

pub use cv::{cross_validate, fold_assignment, CvResult};
pub use problem::{Layout, Mode, Standardization};
pub use solver::{SolveResult, SolverOptions, WarmStart};

use crate::encoding::{ColumnKey, ColumnMeta, DesignMatrix};
use crate::error::{CrtError, Result};
use problem::{Features, GramCache};

#[derive(Clone, Debug, PartialEq)]
pub struct HierNetConfig {
    /// Explicit descending grid; when empty a grid is built from λ_max.
    pub lambda_grid: Vec<f64>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub cv_folds: usize,
}

impl Default for HierNetConfig {
    fn default() -> Self {
        HierNetConfig {
            lambda_grid: Vec::new(),
            n_lambda: 50,
            lambda_min_ratio: 0.01,
            tol: 1e-8,
            max_iter: 5000,
            cv_folds: 5,
        }
    }
}

impl HierNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CrtError::validation("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(CrtError::validation("max_iter must be positive"));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0)) || self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CrtError::validation("lambda_grid must be positive and strictly descending"));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            record_trace: false,
        }
    }

    /// The configured grid, or `n_lambda` log-spaced values below `lambda_max`.
    pub fn grid(&self, lambda_max: f64) -> Vec<f64> {
        if !self.lambda_grid.is_empty() {
            return self.lambda_grid.clone();
        }
        let top = if lambda_max > 0.0 { lambda_max } else { 1e-8 };
        let n = self.n_lambda.max(1);
        if n == 1 {
            return vec![top];
        }
        let lr = self.lambda_min_ratio.ln();
        (0..n).map(|i| top * (lr * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FitStatus {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HierNetFit {
    pub mode: Mode,
    /// Whether the design was symmetry-augmented.
    pub augmented: bool,
    pub columns: Vec<ColumnMeta>,
    pub index: HashMap<ColumnKey, usize>,
    pub intercept: f64,
    pub lambda: f64,
    /// Main effect per design column.
    pub main: Vec<f64>,
    /// Interaction matrix over design columns, symmetric with zero diagonal.
    pub inter: DMatrix<f64>,
    /// Hierarchy budget `β⁺ + β⁻` per design column.
    pub budget: Vec<f64>,
    pub std: Standardization,
    inter_center: HashMap<(usize, usize), f64>,
    pub status: FitStatus,
    pub warm: WarmStart,
}

impl HierNetFit {
    pub fn col(&self, key: &ColumnKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn beta(&self, key: &ColumnKey) -> f64 {
        self.col(key).map_or(0.0, |c| self.main[c])
    }

    pub fn interaction(&self, a: &ColumnKey, b: &ColumnKey) -> f64 {
        match (self.col(a), self.col(b)) {
            (Some(i), Some(k)) => self.inter[(i, k)],
            _ => 0.0,
        }
    }

    /// Largest excess of an interaction row's ℓ1 norm over its budget.
    pub fn hierarchy_violation(&self) -> f64 {
        let p = self.main.len();
        (0..p)
            .map(|c| {
                let row: f64 = (0..p).map(|k| self.inter[(c, k)].abs()).sum();
                (row - self.budget[c]).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation from antisymmetry under the left/right exchange.
    pub fn antisymmetry_violation(&self) -> f64 {
        let p = self.main.len();
        let m = |c: usize| self.columns[c].mirror;
        let mut worst: f64 = 0.0;
        for c in 0..p {
            if m(c) != c {
                worst = worst.max((self.main[c] + self.main[m(c)]).abs());
            }
            for k in 0..p {
                let (mc, mk) = (m(c), m(k));
                if (mc, mk) != (c, k) && (mc, mk) != (k, c) {
                    worst = worst.max((self.inter[(c, k)] + self.inter[(mc, mk)]).abs());
                } else {
                    worst = worst.max(self.inter[(c, k)].abs());
                }
            }
        }
        worst
    }

    /// Fitted values for the rows of `dm`, which must share the fitted columns.
    pub fn predict(&self, dm: &DesignMatrix) -> Vec<f64> {
        let p = self.main.len();
        let mut s = DMatrix::zeros(dm.rows(), p);
        for c in 0..p {
            for r in 0..dm.rows() {
                s[(r, c)] = self.std.standardize(c, dm.x[(r, c)]);
            }
        }
        (0..dm.rows())
            .map(|r| {
                let mut v = self.intercept;
                for c in 0..p {
                    v += self.main[c] * s[(r, c)];
                    for k in (c + 1)..p {
                        let t = self.inter[(c, k)];
                        if t != 0.0 {
                            let ctr = self.inter_center.get(&(c, k)).copied().unwrap_or(0.0);
                            v += t * (s[(r, c)] * s[(r, k)] - ctr);
                        }
                    }
                }
                v
            })
            .collect()
    }
}

fn expand(
    layout: &Layout,
    dm: &DesignMatrix,
    std: Standardization,
    intercept: f64,
    lambda: f64,
    res: SolveResult,
) -> HierNetFit {
    let p = layout.columns.len();
    let np = layout.n_main();
    let th = &res.theta;
    let mut main = vec![0.0; p];
    for c in 0..p {
        let (v, sign) = layout.col_var[c];
        main[c] = sign * th[v];
    }
    let mut inter = DMatrix::zeros(p, p);
    for (i, &(a, b)) in layout.inters.iter().enumerate() {
        let t = th[np + i];
        if t == 0.0 {
            continue;
        }
        inter[(a, b)] = t;
        inter[(b, a)] = t;
        if layout.mode == Mode::Symmetric {
            let (ma, mb) = (layout.columns[a].mirror, layout.columns[b].mirror);
            inter[(ma, mb)] = -t;
            inter[(mb, ma)] = -t;
        }
    }
    let budget = (0..p)
        .map(|c| {
            let row: f64 = (0..p).map(|k| inter[(c, k)].abs()).sum();
            main[c].abs().max(row)
        })
        .collect();
    let mut inter_center = HashMap::new();
    if layout.mode == Mode::Full {
        let n = dm.rows();
        for a in 0..p {
            for b in (a + 1)..p {
                if inter[(a, b)] != 0.0 {
                    let m = (0..n)
                        .map(|r| std.standardize(a, dm.x[(r, a)]) * std.standardize(b, dm.x[(r, b)]))
                        .sum::<f64>()
                        / n as f64;
                    inter_center.insert((a, b), m);
                }
            }
        }
    }
    HierNetFit {
        mode: layout.mode,
        augmented: dm.symmetric,
        columns: layout.columns.clone(),
        index: dm.index.clone(),
        intercept,
        lambda,
        main,
        inter,
        budget,
        std,
        inter_center,
        status: FitStatus {
            converged: res.converged,
            iterations: res.iterations,
            objective: res.objective,
            trace: res.trace,
        },
        warm: res.warm,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CrtError::validation("lambda must be a finite nonnegative number"));
    }
    Ok(())
}

/// Fits at one λ. Symmetry-augmented designs are solved in the reduced
/// antisymmetric form.
pub fn fit(dm: &DesignMatrix, y: &[f64], lambda: f64, cfg: &HierNetConfig) -> Result<HierNetFit> {
    let mode = if dm.symmetric { Mode::Symmetric } else { Mode::Full };
    fit_with_mode(dm, y, lambda, cfg, mode, false)
}

pub fn fit_with_mode(
    dm: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    cfg: &HierNetConfig,
    mode: Mode,
    trace: bool,
) -> Result<HierNetFit> {
    cfg.validate()?;
    check_lambda(lambda)?;
    let layout = Arc::new(Layout::new(dm, mode, &[])?);
    let feat = Features::new(layout.clone(), dm, y)?;
    let prob = feat.problem();
    let mut opts = cfg.solver_options();
    opts.record_trace = trace;
    let res = prob.solve(lambda, &opts, None);
    Ok(expand(&layout, dm, feat.std.clone(), feat.intercept, lambda, res))
}

/// λ_max of a design, the smallest λ with an all-zero fit.
pub fn lambda_max(dm: &DesignMatrix, y: &[f64], mode: Mode) -> Result<f64> {
    let layout = Arc::new(Layout::new(dm, mode, &[])?);
    Ok(Features::new(layout, dm, y)?.problem().lambda_max())
}

/// Fits many datasets that share everything except a set of varying
/// columns (the resampled factor), reusing the fixed Gram blocks.
pub struct HierNetSolver {
    cache: GramCache,
    opts: SolverOptions,
}

impl HierNetSolver {
    pub fn new(template: &DesignMatrix, y: &[f64], mode: Mode, varying_cols: &[usize], cfg: &HierNetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Arc::new(Layout::new(template, mode, varying_cols)?);
        let feat = Features::new(layout, template, y)?;
        Ok(HierNetSolver {
            cache: GramCache::new(&feat),
            opts: cfg.solver_options(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.cache.layout
    }

    pub fn fit(&self, dm: &DesignMatrix, lambda: f64, warm: Option<&WarmStart>) -> Result<HierNetFit> {
        check_lambda(lambda)?;
        if dm.cols() != self.cache.layout.columns.len() {
            return Err(CrtError::validation("design does not match the solver layout"));
        }
        let (prob, std) = self.cache.problem(dm)?;
        let res = prob.solve(lambda, &self.opts, warm);
        Ok(expand(&self.cache.layout, dm, std, self.cache.intercept, lambda, res))
    }
}
