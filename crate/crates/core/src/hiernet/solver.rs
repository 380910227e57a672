//! Accelerated proximal gradient for the strong-hierarchy lasso in Gram form.
//!
//! Variables are `p` main coefficients followed by `m` interaction
//! coefficients. The penalty is
//!
//! `Σ_j a_j max(|β_j|, Σ_{i ∈ row j} mult_ij |φ_i|) + Σ_i b_i |φ_i|`,
//!
//! which is the hierarchical lasso with the main budgets `β⁺ + β⁻`
//! eliminated. Its proximal map is computed exactly by coordinate ascent on
//! a box-constrained dual.

use nalgebra::{DMatrix, DVector};

/// Penalty weights and the incidence between mains and interactions.
#[derive(Clone, Debug)]
pub struct Structure {
    pub main_weight: Vec<f64>,
    pub inter_weight: Vec<f64>,
    /// Main rows touched by each interaction, with multiplicity.
    pub inter_rows: Vec<[(u32, f64); 2]>,
    /// Interactions in each main row, with multiplicity.
    pub row_slots: Vec<Vec<(u32, f64)>>,
    /// Mains held at zero. Their hierarchy weight belongs in `inter_weight`.
    pub pinned: Vec<bool>,
}

impl Structure {
    pub fn new(main_weight: Vec<f64>, inter_weight: Vec<f64>, inter_rows: Vec<[(u32, f64); 2]>) -> Self {
        let mut row_slots = vec![Vec::new(); main_weight.len()];
        for (i, rows) in inter_rows.iter().enumerate() {
            for &(j, m) in rows {
                if m > 0.0 {
                    row_slots[j as usize].push((i as u32, m));
                }
            }
        }
        let pinned = vec![false; main_weight.len()];
        Structure {
            main_weight,
            inter_weight,
            inter_rows,
            row_slots,
            pinned,
        }
    }

    pub fn with_pinned(mut self, pinned: Vec<bool>) -> Self {
        assert_eq!(pinned.len(), self.main_weight.len());
        self.pinned = pinned;
        self
    }

    pub fn n_main(&self) -> usize {
        self.main_weight.len()
    }

    pub fn n_inter(&self) -> usize {
        self.inter_weight.len()
    }

    pub fn dim(&self) -> usize {
        self.n_main() + self.n_inter()
    }

    /// Row sums `Σ mult |φ_i|` for every main.
    pub fn row_sums(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.n_main();
        self.row_slots
            .iter()
            .map(|slots| slots.iter().map(|&(i, m)| m * theta[p + i as usize].abs()).sum())
            .collect()
    }

    pub fn penalty(&self, theta: &[f64]) -> f64 {
        let p = self.n_main();
        let rs = self.row_sums(theta);
        let mains: f64 = (0..p)
            .filter(|&j| !self.pinned[j])
            .map(|j| self.main_weight[j] * theta[j].abs().max(rs[j]))
            .sum();
        let inters: f64 = self
            .inter_weight
            .iter()
            .enumerate()
            .map(|(i, &b)| b * theta[p + i].abs())
            .sum();
        mains + inters
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal map of `scale * penalty` at `v`, warm-started from dual `tau`.
pub fn prox(s: &Structure, v: &[f64], scale: f64, tau: &mut [f64], out: &mut [f64]) {
    let p = s.n_main();
    let m = s.n_inter();
    let alpha: Vec<f64> = s.main_weight.iter().map(|a| a * scale).collect();
    for j in 0..p {
        tau[j] = tau[j].clamp(0.0, alpha[j]);
    }
    // thr[i] = κ_i + Σ_rows mult τ_row, maintained incrementally.
    let mut thr: Vec<f64> = (0..m)
        .map(|i| {
            s.inter_weight[i] * scale
                + s.inter_rows[i].iter().map(|&(j, mu)| mu * tau[j as usize]).sum::<f64>()
        })
        .collect();
    let amax = alpha.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-14 * amax.max(1e-300);
    let mut bp: Vec<f64> = Vec::new();
    for _sweep in 0..500 {
        let mut delta: f64 = 0.0;
        for j in 0..p {
            let slots = &s.row_slots[j];
            let aj = alpha[j];
            if slots.is_empty() || aj == 0.0 {
                if tau[j] != 0.0 {
                    tau[j] = 0.0;
                }
                continue;
            }
            let vj = v[j].abs();
            let old = tau[j];
            // u_i: room left for interaction i before it is thresholded to zero
            // when τ_j = 0.
            let d = |t: f64| -> f64 {
                let mut g = 0.0;
                for &(i, mu) in slots {
                    let i = i as usize;
                    let u = v[p + i].abs() - (thr[i] - mu * old);
                    let r = u - mu * t;
                    if r > 0.0 {
                        g += mu * r;
                    }
                }
                g - (vj - aj + t).max(0.0)
            };
            let new = if d(0.0) <= 0.0 {
                0.0
            } else if d(aj) >= 0.0 {
                aj
            } else {
                bp.clear();
                for &(i, mu) in slots {
                    let i = i as usize;
                    let u = v[p + i].abs() - (thr[i] - mu * old);
                    let b = u / mu;
                    if b > 0.0 && b < aj {
                        bp.push(b);
                    }
                }
                let hb = aj - vj;
                if hb > 0.0 && hb < aj {
                    bp.push(hb);
                }
                bp.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let mut lo = 0.0;
                let mut dlo = d(0.0);
                let mut root = aj;
                let mut found = false;
                for &b in bp.iter().chain(std::iter::once(&aj)) {
                    let db = d(b);
                    if db <= 0.0 {
                        // d is linear on [lo, b].
                        root = if dlo - db > 0.0 { lo + (b - lo) * dlo / (dlo - db) } else { lo };
                        found = true;
                        break;
                    }
                    lo = b;
                    dlo = db;
                }
                if found {
                    root
                } else {
                    aj
                }
            };
            if new != old {
                for &(i, mu) in slots {
                    thr[i as usize] += mu * (new - old);
                }
                tau[j] = new;
                delta = delta.max((new - old).abs());
            }
        }
        if delta <= eps {
            break;
        }
    }
    for j in 0..p {
        out[j] = if s.pinned[j] { 0.0 } else { soft(v[j], alpha[j] - tau[j]) };
    }
    for i in 0..m {
        out[p + i] = soft(v[p + i], thr[i]);
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_trace: bool,
}

/// State carried between related solves (warm start).
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub lipschitz: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub warm: WarmStart,
}

/// `½ θᵀHθ − gᵀθ + c0 + λ·penalty(θ)`.
pub struct QuadProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub structure: std::sync::Arc<Structure>,
}

impl QuadProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, theta: &[f64], lambda: f64) -> f64 {
        let t = DVector::from_column_slice(theta);
        let ht = &self.h * &t;
        0.5 * t.dot(&ht) - self.g.dot(&t) + self.c0 + lambda * self.structure.penalty(theta)
    }

    /// Smallest λ for which zero is optimal.
    pub fn lambda_max(&self) -> f64 {
        let s = &self.structure;
        let p = s.n_main();
        let g = &self.g;
        let mut lm: f64 = 0.0;
        for j in 0..p {
            if s.main_weight[j] > 0.0 && !s.pinned[j] {
                lm = lm.max(g[j].abs() / s.main_weight[j]);
            }
        }
        for i in 0..s.n_inter() {
            let mut num = g[p + i].abs();
            let mut den = s.inter_weight[i];
            for &(j, mu) in &s.inter_rows[i] {
                if mu > 0.0 {
                    num += mu * g[j as usize].abs();
                    den += mu * s.main_weight[j as usize];
                }
            }
            if den > 0.0 {
                lm = lm.max(num / den);
            }
        }
        lm
    }

    /// Largest eigenvalue of `H` by power iteration.
    pub fn spectral_bound(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 13) as f64);
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..100 {
            let w = &self.h * &v;
            let nw = w.norm();
            if nw <= 1e-300 {
                return 1e-12;
            }
            let new = v.dot(&w);
            v = w / nw;
            if (new - est).abs() <= 1e-4 * new.abs() {
                est = new;
                break;
            }
            est = new;
        }
        est.max(1e-12)
    }

    pub fn solve(&self, lambda: f64, opts: &SolverOptions, warm: Option<&WarmStart>) -> SolveResult {
        let n = self.dim();
        let s = &*self.structure;
        let p = s.n_main();
        let mut x: DVector<f64> = match warm {
            Some(w) if w.theta.len() == n => DVector::from_column_slice(&w.theta),
            _ => DVector::zeros(n),
        };
        let mut tau: Vec<f64> = match warm {
            Some(w) if w.tau.len() == p => w.tau.clone(),
            _ => vec![0.0; p],
        };
        let mut lip = match warm {
            Some(w) if w.lipschitz > 0.0 => w.lipschitz,
            _ => self.spectral_bound() * 1.02,
        };
        let obj = |t: &DVector<f64>, ht: &DVector<f64>| -> f64 {
            0.5 * t.dot(ht) - self.g.dot(t) + self.c0 + lambda * s.penalty(t.as_slice())
        };
        let mut hx = &self.h * &x;
        let mut fx = obj(&x, &hx);
        let mut y = x.clone();
        let mut hy = hx.clone();
        let mut t = 1.0f64;
        let mut trace = Vec::new();
        if opts.record_trace {
            trace.push(fx);
        }
        let mut z = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        let mut hz = DVector::zeros(n);
        let mut converged = false;
        let mut iterations = 0;
        let mut restarted = false;
        let tol = opts.tol.max(1e-16);
        while iterations < opts.max_iter {
            iterations += 1;
            // grad = Hy - g
            loop {
                for k in 0..n {
                    v[k] = y[k] - (hy[k] - self.g[k]) / lip;
                }
                prox(s, v.as_slice(), lambda / lip, &mut tau, z.as_mut_slice());
                hz.gemv(1.0, &self.h, &z, 0.0);
                let mut dhd = 0.0;
                let mut dd = 0.0;
                for k in 0..n {
                    let d = z[k] - y[k];
                    dhd += d * (hz[k] - hy[k]);
                    dd += d * d;
                }
                if dhd <= lip * dd * (1.0 + 1e-10) || dd == 0.0 {
                    break;
                }
                lip *= 2.0;
            }
            let fz = obj(&z, &hz);
            if fz <= fx {
                let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let mom = (t - 1.0) / t_new;
                for k in 0..n {
                    y[k] = z[k] + mom * (z[k] - x[k]);
                    hy[k] = hz[k] + mom * (hz[k] - hx[k]);
                }
                std::mem::swap(&mut x, &mut z);
                std::mem::swap(&mut hx, &mut hz);
                let decrease = fx - fz;
                fx = fz;
                t = t_new;
                restarted = false;
                if opts.record_trace {
                    trace.push(fx);
                }
                if decrease <= tol * fx.abs().max(1e-12) {
                    converged = true;
                    break;
                }
            } else {
                if restarted {
                    // A plain proximal step from x does not improve: stationary.
                    converged = true;
                    break;
                }
                restarted = true;
                t = 1.0;
                y.copy_from(&x);
                hy.copy_from(&hx);
            }
        }
        SolveResult {
            theta: x.as_slice().to_vec(),
            objective: fx,
            iterations,
            converged,
            trace,
            warm: WarmStart {
                theta: x.as_slice().to_vec(),
                tau,
                lipschitz: lip,
            },
        }
    }
}
