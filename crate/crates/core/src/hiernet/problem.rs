//! Solver variables, standardization and Gram matrices built from a design.
//!
//! In `Symmetric` mode the design must be symmetry-augmented. The fit on the
//! doubled data is antisymmetric under the left/right exchange, so each pair
//! of mirrored coefficients collapses to one variable and the problem is
//! solved on the original rows only, with features `f_c - f_mirror(c)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::solver::{QuadProblem, Structure};
use crate::encoding::{ColumnMeta, DesignMatrix};
use crate::error::{CrtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    Symmetric,
}

/// Mapping between design columns and solver variables.
#[derive(Clone, Debug)]
pub struct Layout {
    pub mode: Mode,
    pub columns: Vec<ColumnMeta>,
    /// Representative design column of each main variable.
    pub mains: Vec<usize>,
    pub self_mirror: Vec<bool>,
    /// Representative column pair of each interaction variable.
    pub inters: Vec<(usize, usize)>,
    /// Main variable and sign for each design column.
    pub col_var: Vec<(usize, f64)>,
    pub structure: Arc<Structure>,
    /// Variables whose features change when the varying columns change.
    pub varying: Vec<bool>,
}

impl Layout {
    pub fn new(dm: &DesignMatrix, mode: Mode, varying_cols: &[usize]) -> Result<Layout> {
        let p = dm.cols();
        if mode == Mode::Symmetric && (!dm.symmetric || dm.rows() % 2 != 0) {
            return Err(CrtError::validation("symmetric fit needs a symmetry-augmented design"));
        }
        let mirror = |c: usize| if mode == Mode::Symmetric { dm.columns[c].mirror } else { c };
        let mut vary_col = vec![false; p];
        for &c in varying_cols {
            vary_col[c] = true;
            vary_col[mirror(c)] = true;
        }
        let mut mains = Vec::new();
        let mut self_mirror = Vec::new();
        let mut main_weight = Vec::new();
        let mut col_var = vec![(usize::MAX, 0.0); p];
        for c in 0..p {
            let m = mirror(c);
            if mode == Mode::Full {
                col_var[c] = (mains.len(), 1.0);
                mains.push(c);
                self_mirror.push(false);
                main_weight.push(1.0);
            } else if m == c {
                col_var[c] = (mains.len(), 1.0);
                mains.push(c);
                self_mirror.push(true);
                main_weight.push(1.0);
            } else if c < m {
                col_var[c] = (mains.len(), 1.0);
                mains.push(c);
                self_mirror.push(false);
                main_weight.push(2.0);
            } else {
                col_var[c] = (col_var[m].0, -1.0);
            }
        }
        let pinned: Vec<bool> = mains.iter().map(|&c| !dm.columns[c].main_effect).collect();
        let mut inters = Vec::new();
        let mut inter_weight = Vec::new();
        let mut inter_rows = Vec::new();
        for a in 0..p {
            for b in (a + 1)..p {
                if !dm.may_interact(a, b) {
                    continue;
                }
                let (ma, mb) = (mirror(a), mirror(b));
                let twin = if ma < mb { (ma, mb) } else { (mb, ma) };
                let w = match mode {
                    Mode::Full => 1.0,
                    Mode::Symmetric => {
                        if twin == (a, b) || twin < (a, b) {
                            continue;
                        }
                        2.0
                    }
                };
                let mut w = w;
                let mut row = |c: usize| {
                    let v = col_var[c].0;
                    let mult = if mode == Mode::Symmetric && self_mirror[v] { 2.0 } else { 1.0 };
                    if pinned[v] {
                        // A main held at zero leaves a plain ℓ1 term on its row.
                        w += main_weight[v] * mult;
                        (v as u32, 0.0)
                    } else {
                        (v as u32, mult)
                    }
                };
                let rows = [row(a), row(b)];
                inters.push((a, b));
                inter_weight.push(w);
                inter_rows.push(rows);
            }
        }
        let mut varying: Vec<bool> = mains.iter().map(|&c| vary_col[c]).collect();
        varying.extend(inters.iter().map(|&(a, b)| vary_col[a] || vary_col[b]));
        Ok(Layout {
            mode,
            columns: dm.columns.clone(),
            mains,
            self_mirror,
            inters,
            col_var,
            structure: Arc::new(Structure::new(main_weight, inter_weight, inter_rows).with_pinned(pinned)),
            varying,
        })
    }

    pub fn dim(&self) -> usize {
        self.mains.len() + self.inters.len()
    }

    pub fn n_main(&self) -> usize {
        self.mains.len()
    }

    fn mirror(&self, c: usize) -> usize {
        match self.mode {
            Mode::Full => c,
            Mode::Symmetric => self.columns[c].mirror,
        }
    }

    /// Rows of the design that carry the fit (all rows, or the first half).
    pub fn effective_rows(&self, dm: &DesignMatrix) -> usize {
        match self.mode {
            Mode::Full => dm.rows(),
            Mode::Symmetric => dm.rows() / 2,
        }
    }
}

/// Per-column centering and scaling; scale 0 marks a constant column.
#[derive(Clone, Debug, Default)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Statistics over the rows actually fitted. In symmetric mode the
    /// twin rows are implied, so a column and its mirror are pooled.
    pub fn compute(layout: &Layout, dm: &DesignMatrix, cols: &[usize], prev: Option<&Standardization>) -> Self {
        let p = dm.cols();
        let mut st = match prev {
            Some(s) => s.clone(),
            None => Standardization {
                center: vec![0.0; p],
                scale: vec![0.0; p],
            },
        };
        let n = layout.effective_rows(dm);
        for &c in cols {
            let m = layout.mirror(c);
            let rows = dm.rows();
            let xc = &dm.x.as_slice()[c * rows..c * rows + n];
            let xm = &dm.x.as_slice()[m * rows..m * rows + n];
            let (mu, var) = if m == c {
                let mu = xc.iter().sum::<f64>() / n as f64;
                let v = xc.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                (mu, v)
            } else if layout.mode == Mode::Symmetric {
                let mu = xc.iter().zip(xm).map(|(a, b)| a + b).sum::<f64>() / (2 * n) as f64;
                let v = xc
                    .iter()
                    .zip(xm)
                    .map(|(a, b)| (a - mu) * (a - mu) + (b - mu) * (b - mu))
                    .sum::<f64>()
                    / (2 * n) as f64;
                (mu, v)
            } else {
                unreachable!()
            };
            st.center[c] = mu;
            st.scale[c] = if var > 1e-24 * (1.0 + mu * mu) { var.sqrt() } else { 0.0 };
        }
        st
    }

    pub fn standardize(&self, c: usize, v: f64) -> f64 {
        if self.scale[c] > 0.0 {
            (v - self.center[c]) / self.scale[c]
        } else {
            0.0
        }
    }
}

fn standardized(dm: &DesignMatrix, st: &Standardization, n: usize, cols: &[usize]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, dm.cols());
    for &c in cols {
        let src = dm.x.column(c);
        let mut dst = s.column_mut(c);
        for r in 0..n {
            dst[r] = st.standardize(c, src[r]);
        }
    }
    s
}

/// Fills `out` with the feature of solver variable `var`. Full-mode
/// interaction features are centered here.
fn fill_feature(layout: &Layout, s: &DMatrix<f64>, var: usize, out: &mut [f64]) {
    let p = layout.n_main();
    if var < p {
        let c = layout.mains[var];
        let sc = s.column(c);
        match layout.mode {
            Mode::Full => out.copy_from_slice(sc.as_slice()),
            Mode::Symmetric => {
                if layout.self_mirror[var] {
                    out.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    let sm = s.column(layout.columns[c].mirror);
                    for r in 0..out.len() {
                        out[r] = sc[r] - sm[r];
                    }
                }
            }
        }
    } else {
        let (a, b) = layout.inters[var - p];
        let (sa, sb) = (s.column(a), s.column(b));
        match layout.mode {
            Mode::Full => {
                let mut mean = 0.0;
                for r in 0..out.len() {
                    out[r] = sa[r] * sb[r];
                    mean += out[r];
                }
                mean /= out.len().max(1) as f64;
                out.iter_mut().for_each(|v| *v -= mean);
            }
            Mode::Symmetric => {
                let (ma, mb) = (layout.columns[a].mirror, layout.columns[b].mirror);
                let (sma, smb) = (s.column(ma), s.column(mb));
                for r in 0..out.len() {
                    out[r] = sa[r] * sb[r] - sma[r] * smb[r];
                }
            }
        }
    }
}

fn feature_matrix(layout: &Layout, s: &DMatrix<f64>, vars: &[usize]) -> DMatrix<f64> {
    let n = s.nrows();
    let mut f = DMatrix::zeros(n, vars.len());
    for (k, &v) in vars.iter().enumerate() {
        fill_feature(layout, s, v, f.column_mut(k).as_mut_slice());
    }
    f
}

/// `AᵀB` through the blocked gemm kernel.
pub(crate) fn crossprod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    &at * b
}

/// Centered response and the intercept it was centered by.
fn centered_response(layout: &Layout, dm: &DesignMatrix, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y.len() != dm.rows() {
        return Err(CrtError::validation("response length does not match design rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CrtError::validation("non-finite response"));
    }
    let n = layout.effective_rows(dm);
    match layout.mode {
        Mode::Full => {
            let mu = y.iter().sum::<f64>() / n.max(1) as f64;
            Ok((y.iter().map(|v| v - mu).collect(), mu))
        }
        Mode::Symmetric => {
            let mut r = Vec::with_capacity(n);
            for i in 0..n {
                if (y[i] + y[i + n] - 1.0).abs() > 1e-12 {
                    return Err(CrtError::validation("augmented response is not flipped on twin rows"));
                }
                r.push(y[i] - 0.5);
            }
            Ok((r, 0.5))
        }
    }
}

/// Features of every solver variable for one dataset.
pub struct Features {
    pub layout: Arc<Layout>,
    pub f: DMatrix<f64>,
    pub r: Vec<f64>,
    pub intercept: f64,
    pub std: Standardization,
}

impl Features {
    pub fn new(layout: Arc<Layout>, dm: &DesignMatrix, y: &[f64]) -> Result<Features> {
        if dm.x.iter().any(|v| !v.is_finite()) {
            return Err(CrtError::validation("non-finite design entry"));
        }
        let (r, intercept) = centered_response(&layout, dm, y)?;
        let cols: Vec<usize> = (0..dm.cols()).collect();
        let std = Standardization::compute(&layout, dm, &cols, None);
        let n = layout.effective_rows(dm);
        let s = standardized(dm, &std, n, &cols);
        let vars: Vec<usize> = (0..layout.dim()).collect();
        let f = feature_matrix(&layout, &s, &vars);
        Ok(Features {
            layout,
            f,
            r,
            intercept,
            std,
        })
    }

    pub fn rows(&self) -> usize {
        self.f.nrows()
    }

    pub fn problem(&self) -> QuadProblem {
        let n = self.rows() as f64;
        let h = crossprod(&self.f, &self.f) / n;
        let rv = DVector::from_column_slice(&self.r);
        let g = self.f.tr_mul(&rv) / n;
        let c0 = 0.5 * rv.norm_squared() / n;
        QuadProblem {
            h,
            g,
            c0,
            structure: self.layout.structure.clone(),
        }
    }
}

/// Gram blocks that do not involve the varying columns, reused across
/// resamples that change only those columns.
pub struct GramCache {
    pub layout: Arc<Layout>,
    fixed: Vec<usize>,
    var: Vec<usize>,
    var_cols: Vec<usize>,
    f_fixed: DMatrix<f64>,
    h_base: DMatrix<f64>,
    g_base: DVector<f64>,
    r: DVector<f64>,
    c0: f64,
    pub intercept: f64,
    std: Standardization,
}

impl GramCache {
    pub fn new(feat: &Features) -> GramCache {
        let layout = feat.layout.clone();
        let fixed: Vec<usize> = (0..layout.dim()).filter(|&v| !layout.varying[v]).collect();
        let var: Vec<usize> = (0..layout.dim()).filter(|&v| layout.varying[v]).collect();
        let mut vary_col = vec![false; layout.columns.len()];
        for &v in &var {
            if v < layout.n_main() {
                let c = layout.mains[v];
                vary_col[c] = true;
                vary_col[layout.mirror(c)] = true;
            }
        }
        let var_cols = (0..layout.columns.len()).filter(|&c| vary_col[c]).collect();
        let n = feat.rows() as f64;
        let f_fixed = feat.f.select_columns(&fixed);
        let h_ff = crossprod(&f_fixed, &f_fixed) / n;
        let r = DVector::from_column_slice(&feat.r);
        let g_f = f_fixed.tr_mul(&r) / n;
        let dim = layout.dim();
        let mut h_base = DMatrix::zeros(dim, dim);
        let mut g_base = DVector::zeros(dim);
        for (a, &i) in fixed.iter().enumerate() {
            g_base[i] = g_f[a];
            for (b, &k) in fixed.iter().enumerate() {
                h_base[(i, k)] = h_ff[(a, b)];
            }
        }
        let c0 = 0.5 * r.norm_squared() / n;
        GramCache {
            layout,
            fixed,
            var,
            var_cols,
            f_fixed,
            h_base,
            g_base,
            r,
            c0,
            intercept: feat.intercept,
            std: feat.std.clone(),
        }
    }

    /// Problem for a design that differs from the cached one only in the
    /// varying columns.
    pub fn problem(&self, dm: &DesignMatrix) -> Result<(QuadProblem, Standardization)> {
        let layout = &self.layout;
        let std = Standardization::compute(layout, dm, &self.var_cols, Some(&self.std));
        if self.var.is_empty() {
            return Ok((
                QuadProblem {
                    h: self.h_base.clone(),
                    g: self.g_base.clone(),
                    c0: self.c0,
                    structure: layout.structure.clone(),
                },
                std,
            ));
        }
        let n_eff = layout.effective_rows(dm);
        let n = n_eff as f64;
        // Interactions with fixed columns need those columns standardized too.
        let mut need = vec![false; dm.cols()];
        for &v in &self.var {
            if v < layout.n_main() {
                let c = layout.mains[v];
                need[c] = true;
                need[layout.mirror(c)] = true;
            } else {
                let (a, b) = layout.inters[v - layout.n_main()];
                for c in [a, b] {
                    need[c] = true;
                    need[layout.mirror(c)] = true;
                }
            }
        }
        let cols: Vec<usize> = (0..dm.cols()).filter(|&c| need[c]).collect();
        let s = standardized(dm, &std, n_eff, &cols);
        let f_var = feature_matrix(layout, &s, &self.var);
        let h_vf = crossprod(&f_var, &self.f_fixed) / n;
        let h_vv = crossprod(&f_var, &f_var) / n;
        let g_v = f_var.tr_mul(&self.r) / n;
        let mut h = self.h_base.clone();
        let mut g = self.g_base.clone();
        for (a, &i) in self.var.iter().enumerate() {
            g[i] = g_v[a];
            for (b, &k) in self.fixed.iter().enumerate() {
                let v = h_vf[(a, b)];
                h[(i, k)] = v;
                h[(k, i)] = v;
            }
            for (b, &k) in self.var.iter().enumerate() {
                h[(i, k)] = h_vv[(a, b)];
            }
        }
        Ok((
            QuadProblem {
                h,
                g,
                c0: self.c0,
                structure: layout.structure.clone(),
            },
            std,
        ))
    }
}
