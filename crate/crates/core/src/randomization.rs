//! The experiment's randomization distribution and the resamplers built on it.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{CoarseningSpec, ConjointDataset, Schema, Side};
use crate::error::{CrtError, Result};
use crate::rng::{self, Tag};

/// If `if_factor` takes a level in `if_levels`, `then_factor` is restricted to
/// `allowed`. Applied to each profile separately.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictionRule {
    pub if_factor: usize,
    pub if_levels: Vec<bool>,
    pub then_factor: usize,
    pub allowed: Vec<bool>,
}

/// Named form of a restriction, as written in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictionConfig {
    pub if_factor: String,
    pub if_levels: Vec<String>,
    pub then_factor: String,
    pub allowed_levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomizationScheme {
    pub marginals: Vec<Vec<f64>>,
    pub rules: Vec<RestrictionRule>,
    /// Profile factors in an order where every rule's condition precedes its target.
    order: Vec<usize>,
}

impl RandomizationScheme {
    pub fn uniform(schema: &Schema) -> Self {
        let marginals = schema
            .profile
            .iter()
            .map(|f| vec![1.0 / f.n_levels() as f64; f.n_levels()])
            .collect();
        RandomizationScheme {
            marginals,
            rules: Vec::new(),
            order: (0..schema.profile.len()).collect(),
        }
    }

    pub fn new(schema: &Schema, marginals: Vec<Vec<f64>>, rules: Vec<RestrictionRule>) -> Result<Self> {
        let p = schema.profile.len();
        if marginals.len() != p {
            return Err(CrtError::validation("one marginal per profile factor required"));
        }
        for (f, m) in schema.profile.iter().zip(&marginals) {
            if m.len() != f.n_levels() {
                return Err(CrtError::validation(format!(
                    "marginal of '{}' has {} entries, expected {}",
                    f.name,
                    m.len(),
                    f.n_levels()
                )));
            }
            if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(CrtError::validation(format!("marginal of '{}' has invalid entries", f.name)));
            }
            let s: f64 = m.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(CrtError::validation(format!("marginal of '{}' sums to {s}, not 1", f.name)));
            }
        }
        for r in &rules {
            if r.if_factor >= p || r.then_factor >= p {
                return Err(CrtError::validation("restriction references unknown factor"));
            }
            if r.if_factor == r.then_factor {
                return Err(CrtError::validation("restriction conditions a factor on itself"));
            }
            if r.if_levels.len() != schema.profile[r.if_factor].n_levels()
                || r.allowed.len() != schema.profile[r.then_factor].n_levels()
            {
                return Err(CrtError::validation("restriction level mask has wrong length"));
            }
            let mass: f64 = marginals[r.then_factor]
                .iter()
                .zip(&r.allowed)
                .filter(|(_, &a)| a)
                .map(|(m, _)| m)
                .sum();
            if mass <= 0.0 {
                return Err(CrtError::validation(format!(
                    "restriction on '{}' leaves no level with positive probability",
                    schema.profile[r.then_factor].name
                )));
            }
        }
        // Topological order of the rule graph (Kahn, smallest index first).
        let mut indeg = vec![0usize; p];
        for r in &rules {
            indeg[r.then_factor] += 1;
        }
        let mut order = Vec::with_capacity(p);
        let mut done = vec![false; p];
        while order.len() < p {
            let next = (0..p).find(|&f| !done[f] && indeg[f] == 0).ok_or_else(|| {
                CrtError::validation("restriction rules form a cycle")
            })?;
            done[next] = true;
            order.push(next);
            for r in rules.iter().filter(|r| r.if_factor == next) {
                indeg[r.then_factor] -= 1;
            }
        }
        Ok(RandomizationScheme { marginals, rules, order })
    }

    /// Build from names; marginals default to uniform when `None`.
    pub fn from_config(
        schema: &Schema,
        marginals: Vec<Option<Vec<f64>>>,
        rules: &[RestrictionConfig],
    ) -> Result<Self> {
        let marginals = marginals
            .into_iter()
            .zip(&schema.profile)
            .map(|(m, f)| m.unwrap_or_else(|| vec![1.0 / f.n_levels() as f64; f.n_levels()]))
            .collect();
        let mut out = Vec::new();
        for rc in rules {
            let fi = schema
                .profile_index(&rc.if_factor)
                .ok_or_else(|| CrtError::validation(format!("restriction references unknown factor '{}'", rc.if_factor)))?;
            let ft = schema
                .profile_index(&rc.then_factor)
                .ok_or_else(|| CrtError::validation(format!("restriction references unknown factor '{}'", rc.then_factor)))?;
            let mask = |f: usize, labels: &[String]| -> Result<Vec<bool>> {
                let spec = &schema.profile[f];
                let mut m = vec![false; spec.n_levels()];
                for l in labels {
                    let k = spec.level_index(l).ok_or_else(|| {
                        CrtError::validation(format!("restriction references unknown level '{l}' of '{}'", spec.name))
                    })?;
                    m[k] = true;
                }
                Ok(m)
            };
            out.push(RestrictionRule {
                if_factor: fi,
                if_levels: mask(fi, &rc.if_levels)?,
                then_factor: ft,
                allowed: mask(ft, &rc.allowed_levels)?,
            });
        }
        RandomizationScheme::new(schema, marginals, out)
    }

    pub fn n_factors(&self) -> usize {
        self.marginals.len()
    }

    /// Whether any rule mentions factor `f`.
    pub fn is_restricted(&self, f: usize) -> bool {
        self.rules.iter().any(|r| r.if_factor == f || r.then_factor == f)
    }

    /// Distribution of factor `f` given the rest of the profile.
    pub fn conditional(&self, f: usize, profile: &[usize]) -> Result<Vec<f64>> {
        let mut allowed = vec![true; self.marginals[f].len()];
        for r in self.rules.iter().filter(|r| r.then_factor == f) {
            if r.if_levels[profile[r.if_factor]] {
                for (a, &ok) in allowed.iter_mut().zip(&r.allowed) {
                    *a &= ok;
                }
            }
        }
        let mut p: Vec<f64> = self.marginals[f]
            .iter()
            .zip(&allowed)
            .map(|(&m, &a)| if a { m } else { 0.0 })
            .collect();
        let s: f64 = p.iter().sum();
        if s <= 0.0 {
            return Err(CrtError::validation("restrictions leave an empty allowed set"));
        }
        p.iter_mut().for_each(|v| *v /= s);
        Ok(p)
    }

    /// Probability of a full profile under the sequential rule semantics.
    pub fn joint_prob(&self, profile: &[usize]) -> Result<f64> {
        let mut prob = 1.0;
        for f in 0..self.n_factors() {
            let c = self.conditional(f, profile)?;
            prob *= c[profile[f]];
            if prob == 0.0 {
                break;
            }
        }
        Ok(prob)
    }

    /// Draw a full profile from the experimental distribution.
    pub fn sample_profile<R: Rng>(&self, rng: &mut R) -> Result<Vec<usize>> {
        let mut prof = vec![0usize; self.n_factors()];
        for &f in &self.order {
            let c = self.conditional(f, &prof)?;
            prof[f] = draw_index(&c, rng.random::<f64>());
        }
        Ok(prof)
    }

    /// Weights over tuples of `xs` (mixed radix, first factor most significant)
    /// given the remaining entries of `profile`.
    pub fn x_given_z(&self, xs: &[usize], profile: &[usize]) -> Result<Vec<f64>> {
        let sizes: Vec<usize> = xs.iter().map(|&f| self.marginals[f].len()).collect();
        let total: usize = sizes.iter().product();
        if total > 1 << 20 {
            return Err(CrtError::validation("factor-of-interest level space too large to enumerate"));
        }
        let mut prof = profile.to_vec();
        let mut w = vec![0.0; total];
        for (code, wc) in w.iter_mut().enumerate() {
            let mut rest = code;
            for (i, &f) in xs.iter().enumerate().rev() {
                prof[f] = rest % sizes[i];
                rest /= sizes[i];
            }
            *wc = self.joint_prob(&prof)?;
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(CrtError::validation("no factor-of-interest value is compatible with the other factors"));
        }
        w.iter_mut().for_each(|v| *v /= s);
        Ok(w)
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        if self.marginals.len() != schema.profile.len() {
            return Err(CrtError::validation("randomization scheme does not match schema"));
        }
        for (m, f) in self.marginals.iter().zip(&schema.profile) {
            if m.len() != f.n_levels() {
                return Err(CrtError::validation(format!("marginal of '{}' does not match its levels", f.name)));
            }
        }
        Ok(())
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn draw_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleKind {
    Main,
    Coarsened,
    Order,
    Carryover,
    Fatigue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub kind: ResampleKind,
    pub b: usize,
    pub master_seed: u64,
}

impl ResamplePlan {
    pub fn new(kind: ResampleKind, b: usize, master_seed: u64) -> Result<Self> {
        if b == 0 {
            return Err(CrtError::validation("B must be at least 1"));
        }
        Ok(ResamplePlan { kind, b, master_seed })
    }
}

/// Precomputed sampler for the factors of interest given everything else.
/// Rows whose conditioning factors agree share a table.
#[derive(Clone, Debug)]
pub struct XSampler {
    xs: Vec<usize>,
    sizes: Vec<usize>,
    /// Per-factor marginals when no rule touches the factors of interest.
    independent: Option<Vec<Vec<f64>>>,
    tables: Vec<Vec<f64>>,
    /// `row_table[side][row]` indexes `tables`.
    row_table: [Vec<u32>; 2],
}

impl XSampler {
    pub fn new(ds: &ConjointDataset, scheme: &RandomizationScheme, xs: &[usize]) -> Result<Self> {
        scheme.validate_against(&ds.schema)?;
        if xs.is_empty() {
            return Err(CrtError::validation("no factor of interest given"));
        }
        let sizes: Vec<usize> = xs.iter().map(|&f| ds.schema.profile[f].n_levels()).collect();
        if xs.iter().all(|&f| !scheme.is_restricted(f)) {
            return Ok(XSampler {
                xs: xs.to_vec(),
                sizes,
                independent: Some(xs.iter().map(|&f| scheme.marginals[f].clone()).collect()),
                tables: Vec::new(),
                row_table: [Vec::new(), Vec::new()],
            });
        }
        let p = ds.n_profile();
        let mut cache: HashMap<Vec<usize>, u32> = HashMap::new();
        let mut tables = Vec::new();
        let mut row_table = [Vec::with_capacity(ds.rows()), Vec::with_capacity(ds.rows())];
        for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            for r in 0..ds.rows() {
                let mut prof: Vec<usize> = (0..p).map(|f| ds.profile_value(f, side, r)).collect();
                for &f in xs {
                    prof[f] = 0;
                }
                let idx = match cache.get(&prof) {
                    Some(&i) => i,
                    None => {
                        let t = scheme.x_given_z(xs, &prof)?;
                        tables.push(t);
                        let i = (tables.len() - 1) as u32;
                        cache.insert(prof, i);
                        i
                    }
                };
                row_table[s].push(idx);
            }
        }
        Ok(XSampler {
            xs: xs.to_vec(),
            sizes,
            independent: None,
            tables,
            row_table,
        })
    }

    pub fn factors(&self) -> &[usize] {
        &self.xs
    }

    /// Fresh draw of the factors of interest for resample `b`, written into a
    /// copy of `ds`.
    pub fn draw(&self, ds: &ConjointDataset, b: u64, seed: u64) -> ConjointDataset {
        let mut out = ds.clone();
        self.draw_into(&mut out, b, seed);
        out
    }

    pub fn draw_into(&self, out: &mut ConjointDataset, b: u64, seed: u64) {
        for r in 0..out.rows() {
            let mut g = rng::stream(seed, Tag::MainResample, b, r as u64);
            for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                match &self.independent {
                    Some(m) => {
                        for (i, &f) in self.xs.iter().enumerate() {
                            let v = draw_index(&m[i], g.random::<f64>()) as u16;
                            set_value(out, f, side, r, v);
                        }
                    }
                    None => {
                        let t = &self.tables[self.row_table[s][r] as usize];
                        let mut code = draw_index(t, g.random::<f64>());
                        for (i, &f) in self.xs.iter().enumerate().rev() {
                            set_value(out, f, side, r, (code % self.sizes[i]) as u16);
                            code /= self.sizes[i];
                        }
                    }
                }
            }
        }
    }
}

fn set_value(ds: &mut ConjointDataset, f: usize, side: Side, row: usize, v: u16) {
    match side {
        Side::Left => ds.left[f][row] = v,
        Side::Right => ds.right[f][row] = v,
    }
}

/// One-shot form of [`XSampler`].
pub fn sample_x_given_z(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    xs: &[usize],
    b: u64,
    seed: u64,
) -> Result<ConjointDataset> {
    Ok(XSampler::new(ds, scheme, xs)?.draw(ds, b, seed))
}

/// Sampler for a coarsened factor given its group and the other factors.
///
/// Works on the coarsened dataset; probabilities are the pushforward of the
/// original scheme through the c map, restricted to the tested group.
#[derive(Clone, Debug)]
pub struct CoarsenedSampler {
    factor: usize,
    tested: Vec<bool>,
    tables: Vec<Vec<f64>>,
    row_table: [Vec<u32>; 2],
}

impl CoarsenedSampler {
    /// `original` is the schema the scheme refers to; `coarse` was produced
    /// from it by [`crate::design::apply_coarsening`] with `spec`.
    pub fn new(
        coarse: &ConjointDataset,
        original: &Schema,
        scheme: &RandomizationScheme,
        spec: &CoarseningSpec,
    ) -> Result<Self> {
        scheme.validate_against(original)?;
        spec.validate(original)?;
        let (src, table) = spec.index_table(original)?;
        let factor = coarse
            .schema
            .profile_index(&spec.name)
            .ok_or_else(|| CrtError::validation(format!("coarsened factor '{}' not in dataset", spec.name)))?;
        let n_coarse = spec.coarse_levels().len();
        let mut tested = vec![false; n_coarse];
        for l in spec.tested_levels() {
            tested[l] = true;
        }
        // Map original factor index -> coarse dataset index for non-source factors.
        let first = *src.iter().min().unwrap_or(&0);
        let mut to_coarse = vec![None; original.profile.len()];
        let mut next = 0;
        for (f, slot) in to_coarse.iter_mut().enumerate() {
            if f == first {
                next += 1;
            } else if !src.contains(&f) {
                *slot = Some(next);
                next += 1;
            }
        }
        let present = [Side::Left, Side::Right]
            .iter()
            .any(|&side| (0..coarse.rows()).any(|r| tested[coarse.profile_value(factor, side, r)]));
        if !present {
            return Err(CrtError::validation(format!(
                "tested group '{}' is empty in data",
                spec.tested_group
            )));
        }
        let mut cache: HashMap<Vec<usize>, u32> = HashMap::new();
        let mut tables = Vec::new();
        let mut row_table = [Vec::with_capacity(coarse.rows()), Vec::with_capacity(coarse.rows())];
        for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            for r in 0..coarse.rows() {
                let prof: Vec<usize> = to_coarse
                    .iter()
                    .map(|c| c.map(|cf| coarse.profile_value(cf, side, r)).unwrap_or(0))
                    .collect();
                let idx = match cache.get(&prof) {
                    Some(&i) => i,
                    None => {
                        let w = scheme.x_given_z(&src, &prof)?;
                        let mut push = vec![0.0; n_coarse];
                        for (code, &p) in w.iter().enumerate() {
                            if p > 0.0 {
                                let c = table[code].ok_or_else(|| {
                                    CrtError::validation("c map is not total on the design support")
                                })?;
                                if tested[c] {
                                    push[c] += p;
                                }
                            }
                        }
                        let s: f64 = push.iter().sum();
                        if s > 0.0 {
                            push.iter_mut().for_each(|v| *v /= s);
                        }
                        tables.push(push);
                        let i = (tables.len() - 1) as u32;
                        cache.insert(prof, i);
                        i
                    }
                };
                row_table[s].push(idx);
            }
        }
        Ok(CoarsenedSampler {
            factor,
            tested,
            tables,
            row_table,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Probabilities used to redraw a tested entry of `row` on `side`.
    pub fn table(&self, side: Side, row: usize) -> &[f64] {
        let s = if side == Side::Left { 0 } else { 1 };
        &self.tables[self.row_table[s][row] as usize]
    }

    pub fn draw(&self, ds: &ConjointDataset, b: u64, seed: u64) -> ConjointDataset {
        let mut out = ds.clone();
        self.draw_into(&mut out, b, seed);
        out
    }

    pub fn draw_into(&self, out: &mut ConjointDataset, b: u64, seed: u64) {
        for r in 0..out.rows() {
            let mut g = rng::stream(seed, Tag::MainResample, b, r as u64);
            for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                let u = g.random::<f64>();
                if self.tested[out.profile_value(self.factor, side, r)] {
                    let t = &self.tables[self.row_table[s][r] as usize];
                    set_value(out, self.factor, side, r, draw_index(t, u) as u16);
                }
            }
        }
    }
}

/// Exchange left and right profiles in the rows flagged by `mask` and flip
/// their responses. Covariates are untouched.
pub fn swap_rows(ds: &ConjointDataset, mask: &[bool]) -> ConjointDataset {
    let mut out = ds.clone();
    for (r, &m) in mask.iter().enumerate() {
        if m {
            for f in 0..out.n_profile() {
                let l = out.left[f][r];
                out.left[f][r] = out.right[f][r];
                out.right[f][r] = l;
            }
            out.y[r] = 1 - out.y[r];
        }
    }
    out
}

/// Fair-coin swap set for resample `b` and the swapped dataset.
pub fn sample_order_swap(ds: &ConjointDataset, b: u64, seed: u64) -> (Vec<bool>, ConjointDataset) {
    let mask: Vec<bool> = (0..ds.rows())
        .map(|r| rng::stream(seed, Tag::OrderSwap, b, r as u64).random::<bool>())
        .collect();
    let out = swap_rows(ds, &mask);
    (mask, out)
}

/// Redraw every factor of the odd-numbered tasks (first, third, ...) from the
/// experimental distribution. Expects an even number of tasks.
pub fn sample_carryover(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    b: u64,
    seed: u64,
) -> Result<ConjointDataset> {
    if ds.j < 2 {
        return Err(CrtError::validation("carryover test requires J ≥ 2"));
    }
    if ds.j % 2 != 0 {
        return Err(CrtError::validation("carryover resampling expects an even number of tasks"));
    }
    scheme.validate_against(&ds.schema)?;
    let mut out = ds.clone();
    for r in 0..ds.rows() {
        if (r % ds.j) % 2 != 0 {
            continue;
        }
        let mut g = rng::stream(seed, Tag::Carryover, b, r as u64);
        for side in [Side::Left, Side::Right] {
            let prof = scheme.sample_profile(&mut g)?;
            for (f, &v) in prof.iter().enumerate() {
                set_value(&mut out, f, side, r, v as u16);
            }
        }
    }
    Ok(out)
}

/// Replace each respondent's task order by an independent uniform permutation.
pub fn sample_fatigue_permutation(ds: &ConjointDataset, b: u64, seed: u64) -> ConjointDataset {
    let mut out = ds.clone();
    for i in 0..ds.n {
        let mut g = rng::stream(seed, Tag::Fatigue, b, i as u64);
        let mut perm: Vec<u32> = (1..=ds.j as u32).collect();
        perm.shuffle(&mut g);
        out.task_order[i * ds.j..(i + 1) * ds.j].copy_from_slice(&perm);
    }
    out
}
