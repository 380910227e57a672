//! Regression design matrices: full dummy coding without a baseline level,
//! the symmetry-augmented matrix and the carryover augmentation.
//!
//! Only main-effect columns are stored; interaction columns are formed by
//! the solvers from pairs of main columns.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::design::{Covariate, ConjointDataset, Side};
use crate::error::{CrtError, Result};
use crate::randomization::swap_rows;

/// Whether a profile block belongs to the current task or the preceding one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Current,
    Lag,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ColumnKey {
    Dummy {
        factor: usize,
        level: usize,
        side: Side,
        slot: Slot,
    },
    /// Respondent covariate; `level` is `None` for a numeric covariate.
    Covariate { cov: usize, level: Option<usize> },
    TaskOrder,
    /// Product of two factors' dummies within one profile, added as a main effect.
    Extra {
        term: usize,
        level_a: usize,
        level_b: usize,
        side: Side,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMeta {
    pub key: ColumnKey,
    pub name: String,
    /// Columns sharing a group never interact (dummies of one factor-side).
    pub group: usize,
    /// Column that this one becomes when the profiles are exchanged.
    pub mirror: usize,
    /// False for columns that may only enter through interactions.
    pub main_effect: bool,
}

/// Interaction of two profile factors entered as an additional main effect.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtraTerm {
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, Default)]
pub struct DesignOptions {
    pub include_v: bool,
    pub include_task_order: bool,
    pub extra: Vec<ExtraTerm>,
}

#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub columns: Vec<ColumnMeta>,
    pub index: HashMap<ColumnKey, usize>,
    /// Respondent of each row, used for folds and clustering.
    pub respondent: Vec<usize>,
    /// Set when the rows are the original rows followed by their swapped twins.
    pub symmetric: bool,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn col(&self, key: &ColumnKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn dummy(&self, factor: usize, level: usize, side: Side) -> Option<usize> {
        self.col(&ColumnKey::Dummy {
            factor,
            level,
            side,
            slot: Slot::Current,
        })
    }

    /// Whether columns `a` and `b` may interact.
    pub fn may_interact(&self, a: usize, b: usize) -> bool {
        a != b && self.columns[a].group != self.columns[b].group
    }

    /// Columns whose values depend on the given profile factors (both
    /// sides, current slot), including extra terms built from them.
    pub fn columns_of_factors(&self, factors: &[usize]) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| match &c.key {
                ColumnKey::Dummy { factor, slot, .. } => *slot == Slot::Current && factors.contains(factor),
                _ => false,
            })
            .map(|(i, _)| i)
            .collect()
    }
}

struct Builder {
    columns: Vec<ColumnMeta>,
    values: Vec<Vec<f64>>,
    next_group: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            columns: Vec::new(),
            values: Vec::new(),
            next_group: 0,
        }
    }

    fn group(&mut self) -> usize {
        self.next_group += 1;
        self.next_group - 1
    }

    fn push(&mut self, key: ColumnKey, name: String, group: usize, values: Vec<f64>) {
        self.columns.push(ColumnMeta {
            key,
            name,
            group,
            mirror: usize::MAX,
            main_effect: true,
        });
        self.values.push(values);
    }

    fn finish(mut self, respondent: Vec<usize>, symmetric: bool) -> DesignMatrix {
        let index: HashMap<ColumnKey, usize> =
            self.columns.iter().enumerate().map(|(i, c)| (c.key.clone(), i)).collect();
        for i in 0..self.columns.len() {
            let m = match &self.columns[i].key {
                ColumnKey::Dummy {
                    factor,
                    level,
                    side,
                    slot,
                } => index[&ColumnKey::Dummy {
                    factor: *factor,
                    level: *level,
                    side: side.other(),
                    slot: *slot,
                }],
                ColumnKey::Extra {
                    term,
                    level_a,
                    level_b,
                    side,
                } => index[&ColumnKey::Extra {
                    term: *term,
                    level_a: *level_a,
                    level_b: *level_b,
                    side: side.other(),
                }],
                _ => i,
            };
            self.columns[i].mirror = m;
        }
        let rows = respondent.len();
        let cols = self.values.len();
        let x = DMatrix::from_fn(rows, cols, |r, c| self.values[c][r]);
        DesignMatrix {
            x,
            columns: self.columns,
            index,
            respondent,
            symmetric,
        }
    }
}

fn add_profile_blocks(b: &mut Builder, parts: &[(&ConjointDataset, [Side; 2])], slot: Slot, rows: usize) {
    let ds0 = parts[0].0;
    for (f, spec) in ds0.schema.profile.iter().enumerate() {
        for side in [Side::Left, Side::Right] {
            let g = b.group();
            for (k, label) in spec.levels.iter().enumerate() {
                let mut v = Vec::with_capacity(rows);
                for (ds, sides) in parts {
                    let src = if side == Side::Left { sides[0] } else { sides[1] };
                    v.extend(ds.side(src)[f].iter().map(|&l| if l as usize == k { 1.0 } else { 0.0 }));
                }
                let tag = if slot == Slot::Lag { "lag_" } else { "" };
                b.push(
                    ColumnKey::Dummy {
                        factor: f,
                        level: k,
                        side,
                        slot,
                    },
                    format!("{tag}{}_{}[{label}]", spec.name, side.suffix()),
                    g,
                    v,
                );
            }
        }
    }
}

fn add_covariates(b: &mut Builder, parts: &[&ConjointDataset]) {
    let ds0 = parts[0];
    for (m, spec) in ds0.schema.covariates.iter().enumerate() {
        let g = b.group();
        match &ds0.covariates[m] {
            Covariate::Numeric { .. } => {
                let mut v = Vec::new();
                for ds in parts {
                    if let Covariate::Numeric { standardized, .. } = &ds.covariates[m] {
                        v.extend_from_slice(standardized);
                    }
                }
                b.push(ColumnKey::Covariate { cov: m, level: None }, spec.name.clone(), g, v);
            }
            Covariate::Categorical(_) => {
                for (w, label) in spec.levels.iter().enumerate() {
                    let mut v = Vec::new();
                    for ds in parts {
                        if let Covariate::Categorical(c) = &ds.covariates[m] {
                            v.extend(c.iter().map(|&l| if l as usize == w { 1.0 } else { 0.0 }));
                        }
                    }
                    b.push(
                        ColumnKey::Covariate { cov: m, level: Some(w) },
                        format!("{}[{label}]", spec.name),
                        g,
                        v,
                    );
                }
            }
        }
    }
}

fn add_extra(b: &mut Builder, parts: &[(&ConjointDataset, [Side; 2])], extra: &[ExtraTerm]) -> Result<()> {
    let ds0 = parts[0].0;
    for (t, term) in extra.iter().enumerate() {
        let p = ds0.n_profile();
        if term.a >= p || term.b >= p || term.a == term.b {
            return Err(CrtError::validation("extra main-effect term needs two distinct profile factors"));
        }
        let (fa, fb) = (&ds0.schema.profile[term.a], &ds0.schema.profile[term.b]);
        for side in [Side::Left, Side::Right] {
            let g = b.group();
            for ka in 0..fa.n_levels() {
                for kb in 0..fb.n_levels() {
                    let mut v = Vec::new();
                    for (ds, sides) in parts {
                        let src = if side == Side::Left { sides[0] } else { sides[1] };
                        let (ca, cb) = (&ds.side(src)[term.a], &ds.side(src)[term.b]);
                        v.extend(
                            ca.iter()
                                .zip(cb)
                                .map(|(&x, &y)| if x as usize == ka && y as usize == kb { 1.0 } else { 0.0 }),
                        );
                    }
                    b.push(
                        ColumnKey::Extra {
                            term: t,
                            level_a: ka,
                            level_b: kb,
                            side,
                        },
                        format!(
                            "{}x{}_{}[{}:{}]",
                            fa.name,
                            fb.name,
                            side.suffix(),
                            fa.levels[ka],
                            fb.levels[kb]
                        ),
                        g,
                        v,
                    );
                }
            }
        }
    }
    Ok(())
}

fn build(parts: &[(&ConjointDataset, [Side; 2])], opts: &DesignOptions, symmetric: bool) -> Result<DesignMatrix> {
    let rows: usize = parts.iter().map(|(d, _)| d.rows()).sum();
    let mut b = Builder::new();
    add_profile_blocks(&mut b, parts, Slot::Current, rows);
    add_extra(&mut b, parts, &opts.extra)?;
    if opts.include_v {
        let ds: Vec<&ConjointDataset> = parts.iter().map(|(d, _)| *d).collect();
        add_covariates(&mut b, &ds);
    }
    if opts.include_task_order {
        let g = b.group();
        let v = parts
            .iter()
            .flat_map(|(d, _)| d.task_order.iter().map(|&t| t as f64))
            .collect();
        b.push(ColumnKey::TaskOrder, "task_order".into(), g, v);
    }
    let respondent = parts
        .iter()
        .flat_map(|(d, _)| (0..d.rows()).map(|r| d.respondent_of(r)))
        .collect();
    Ok(b.finish(respondent, symmetric))
}

const SAME: [Side; 2] = [Side::Left, Side::Right];

/// One-hot blocks for every factor-side, optionally followed by covariates.
pub fn build_design(ds: &ConjointDataset, include_v: bool) -> DesignMatrix {
    build_design_with(
        ds,
        &DesignOptions {
            include_v,
            ..Default::default()
        },
    )
    .expect("plain design cannot fail")
}

pub fn build_design_with(ds: &ConjointDataset, opts: &DesignOptions) -> Result<DesignMatrix> {
    build(&[(ds, SAME)], opts, false)
}

pub fn response(ds: &ConjointDataset) -> Vec<f64> {
    ds.y.iter().map(|&v| v as f64).collect()
}

/// The original rows followed by every row with profiles exchanged and the
/// response flipped.
pub fn build_symmetry_augmented(ds: &ConjointDataset, opts: &DesignOptions) -> Result<(DesignMatrix, Vec<f64>)> {
    let swapped = swap_rows(ds, &vec![true; ds.rows()]);
    let dm = build(&[(ds, SAME), (&swapped, SAME)], opts, true)?;
    let mut y = response(ds);
    y.extend(ds.y.iter().map(|&v| 1.0 - v as f64));
    Ok((dm, y))
}

/// Pairs each odd-numbered task (lag block) with the following task
/// (current block) and appends three relabelled copies.
///
/// Row blocks, in order: the pairs as observed; only the current block
/// swapped with `1 - Y`; both blocks swapped with `1 - Y`; only the lag
/// block swapped with `Y`. The second half is the full exchange of the
/// first, so the matrix is symmetry-augmented. Lag columns have no main
/// effects and do not interact with each other.
pub fn build_carryover_augmented(ds: &ConjointDataset) -> Result<(DesignMatrix, Vec<f64>)> {
    let (lag, cur) = carryover_pairs(ds)?;
    let lr = [Side::Left, Side::Right];
    let rl = [Side::Right, Side::Left];
    let patterns: [([Side; 2], [Side; 2], bool); 4] = [(lr, lr, false), (lr, rl, true), (rl, rl, true), (rl, lr, false)];
    let mut b = Builder::new();
    let rows = lag.rows() * 4;
    let lag_parts: Vec<(&ConjointDataset, [Side; 2])> = patterns.iter().map(|(l, _, _)| (&lag, *l)).collect();
    let cur_parts: Vec<(&ConjointDataset, [Side; 2])> = patterns.iter().map(|(_, c, _)| (&cur, *c)).collect();
    add_profile_blocks(&mut b, &lag_parts, Slot::Lag, rows);
    // Lag columns act only through lag x current interactions.
    let lag_group = b.group();
    for c in b.columns.iter_mut() {
        c.group = lag_group;
        c.main_effect = false;
    }
    add_profile_blocks(&mut b, &cur_parts, Slot::Current, rows);
    let mut y = Vec::with_capacity(rows);
    for (_, _, flip) in patterns {
        y.extend(cur.y.iter().map(|&v| if flip { 1.0 - v as f64 } else { v as f64 }));
    }
    let respondent = (0..4).flat_map(|_| (0..cur.rows()).map(|r| cur.respondent_of(r))).collect();
    Ok((b.finish(respondent, true), y))
}

/// Lag-1 (odd tasks) and current (even tasks) halves of the data; the
/// current half keeps the responses.
pub fn carryover_pairs(ds: &ConjointDataset) -> Result<(ConjointDataset, ConjointDataset)> {
    if ds.j < 2 {
        return Err(CrtError::validation("carryover test requires J ≥ 2"));
    }
    let half = ds.j / 2;
    let pick = |offset: usize| -> ConjointDataset {
        let rows: Vec<usize> = (0..ds.n)
            .flat_map(|i| (0..half).map(move |t| i * ds.j + 2 * t + offset))
            .collect();
        let col = |v: &Vec<u16>| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        ConjointDataset {
            schema: ds.schema.clone(),
            n: ds.n,
            j: half,
            respondent_ids: ds.respondent_ids.clone(),
            left: ds.left.iter().map(col).collect(),
            right: ds.right.iter().map(col).collect(),
            covariates: ds
                .covariates
                .iter()
                .map(|c| match c {
                    Covariate::Numeric { raw, .. } => Covariate::numeric(rows.iter().map(|&r| raw[r]).collect()),
                    Covariate::Categorical(v) => Covariate::Categorical(col(v)),
                })
                .collect(),
            y: rows.iter().map(|&r| ds.y[r]).collect(),
            task_order: (0..ds.n).flat_map(|_| 1..=half as u32).collect(),
        }
    };
    Ok((pick(0), pick(1)))
}
