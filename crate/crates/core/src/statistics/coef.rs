//! Test statistics evaluated on fitted HierNet coefficients.
//!
//! Symmetric fits store both members of every mirrored pair; the sums below
//! read one representative per pair (the left-profile column), so a single
//! nonzero reduced coefficient is counted once.

use crate::design::Side;
use crate::encoding::{ColumnKey, ExtraTerm, Slot};
use crate::error::{CrtError, Result};
use crate::hiernet::HierNetFit;

/// Factor of interest for the HierNet statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct HierNetTarget {
    pub factor: usize,
    /// Levels entering the sums; all levels for the plain statistic.
    pub levels: Vec<usize>,
}

/// `Σ (v - mean)²`.
pub fn demeaned_ss(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn dummy(factor: usize, level: usize, side: Side) -> ColumnKey {
    ColumnKey::Dummy {
        factor,
        level,
        side,
        slot: Slot::Current,
    }
}

/// Column blocks whose coefficients are compared across target levels: the
/// target's own dummies, and for each extra product term involving the
/// target one block per level of the partner factor.
fn target_blocks(fit: &HierNetFit, t: &HierNetTarget, extra: &[ExtraTerm], side: Side) -> Result<Vec<Vec<usize>>> {
    let missing = || CrtError::validation("target factor is absent from the fit");
    let own = t
        .levels
        .iter()
        .map(|&k| fit.col(&dummy(t.factor, k, side)).ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    let mut blocks = vec![own];
    for (ti, term) in extra.iter().enumerate() {
        let target_is_a = term.a == t.factor;
        if !target_is_a && term.b != t.factor {
            continue;
        }
        // Partner levels are found by probing the fit's columns.
        for other in 0.. {
            let key = |k: usize| {
                let (level_a, level_b) = if target_is_a { (k, other) } else { (other, k) };
                ColumnKey::Extra {
                    term: ti,
                    level_a,
                    level_b,
                    side,
                }
            };
            let cols: Vec<Option<usize>> = t.levels.iter().map(|&k| fit.col(&key(k))).collect();
            if cols.iter().all(|c| c.is_none()) {
                break;
            }
            blocks.push(cols.into_iter().map(|c| c.ok_or_else(missing)).collect::<Result<Vec<_>>>()?);
        }
    }
    Ok(blocks)
}

fn is_slice_column(key: &ColumnKey, respondent: bool) -> bool {
    match key {
        ColumnKey::Dummy { slot, .. } => *slot == Slot::Current,
        ColumnKey::Extra { .. } => true,
        ColumnKey::Covariate { .. } => respondent,
        ColumnKey::TaskOrder => false,
    }
}

fn blocks_statistic(fit: &HierNetFit, blocks: &[Vec<usize>], respondent: bool) -> f64 {
    let slices: Vec<usize> = (0..fit.columns.len())
        .filter(|&o| is_slice_column(&fit.columns[o].key, respondent))
        .collect();
    let mut total = 0.0;
    let mut buf = Vec::new();
    for block in blocks {
        buf.clear();
        buf.extend(block.iter().map(|&c| fit.main[c]));
        total += demeaned_ss(&buf);
        for &o in &slices {
            buf.clear();
            buf.extend(block.iter().map(|&c| fit.inter[(c, o)]));
            if buf.iter().any(|&v| v != 0.0) {
                total += demeaned_ss(&buf);
            }
        }
    }
    total
}

/// Main effects of the target plus its within- and between-profile
/// interactions, each demeaned across target levels within a slice fixed by
/// the partner column. Summed over targets.
pub fn t_hiernet(fit: &HierNetFit, targets: &[HierNetTarget], extra: &[ExtraTerm]) -> Result<f64> {
    t_hiernet_impl(fit, targets, extra, false, &[Side::Left])
}

/// [`t_hiernet`] for a fit on the original rows: the left-profile version
/// plus the right-profile version.
pub fn t_hiernet_unconstrained(fit: &HierNetFit, targets: &[HierNetTarget], extra: &[ExtraTerm]) -> Result<f64> {
    if fit.augmented {
        return Err(CrtError::validation("unconstrained statistic needs a fit on the original rows"));
    }
    t_hiernet_impl(fit, targets, extra, false, &[Side::Left, Side::Right])
}

/// [`t_hiernet`] plus the target-by-respondent-covariate interactions.
pub fn t_hiernet_respondent(fit: &HierNetFit, targets: &[HierNetTarget], extra: &[ExtraTerm]) -> Result<f64> {
    if !fit.columns.iter().any(|c| matches!(c.key, ColumnKey::Covariate { .. })) {
        return Err(CrtError::validation("respondent statistic needs covariates in the fit"));
    }
    t_hiernet_impl(fit, targets, extra, true, &[Side::Left])
}

fn t_hiernet_impl(
    fit: &HierNetFit,
    targets: &[HierNetTarget],
    extra: &[ExtraTerm],
    respondent: bool,
    sides: &[Side],
) -> Result<f64> {
    if targets.is_empty() {
        return Err(CrtError::validation("no target factor"));
    }
    let mut total = 0.0;
    for t in targets {
        if t.levels.is_empty() {
            return Err(CrtError::validation("target has no tested levels"));
        }
        for &side in sides {
            let blocks = target_blocks(fit, t, extra, side)?;
            total += blocks_statistic(fit, &blocks, respondent);
        }
    }
    Ok(total)
}

/// Sum of squared violations of the left/right antisymmetry over mains and
/// interactions, one term per mirrored pair. Between-profile terms of a
/// factor with itself are left out.
pub fn t_order(fit: &HierNetFit) -> Result<f64> {
    if fit.augmented {
        return Err(CrtError::validation(
            "order statistic needs a fit on the original rows, not the augmented design",
        ));
    }
    let p = fit.columns.len();
    let mirror = |c: usize| fit.columns[c].mirror;
    let factor_of = |c: usize| match fit.columns[c].key {
        ColumnKey::Dummy { factor, .. } => Some(factor),
        _ => None,
    };
    let mut total = 0.0;
    for c in 0..p {
        let m = mirror(c);
        if c < m {
            total += (fit.main[c] + fit.main[m]).powi(2);
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            let (ma, mb) = (mirror(a), mirror(b));
            let twin = if ma < mb { (ma, mb) } else { (mb, ma) };
            if twin <= (a, b) {
                continue;
            }
            if factor_of(a).is_some() && factor_of(a) == factor_of(b) {
                continue;
            }
            total += (fit.inter[(a, b)] + fit.inter[twin]).powi(2);
        }
    }
    Ok(total)
}

/// Sum of squared lag-by-current interactions.
pub fn t_carryover(fit: &HierNetFit) -> Result<f64> {
    let lag = |c: usize| match fit.columns[c].key {
        ColumnKey::Dummy { slot: Slot::Lag, side, .. } => Some(side),
        _ => None,
    };
    let cur = |c: usize| matches!(fit.columns[c].key, ColumnKey::Dummy { slot: Slot::Current, .. });
    let p = fit.columns.len();
    if !(0..p).any(|c| lag(c).is_some()) {
        return Err(CrtError::validation("carryover statistic needs a lag design (J ≥ 2)"));
    }
    let mut total = 0.0;
    for a in 0..p {
        // In a symmetric fit the right-side lag rows mirror the left ones.
        let keep = match lag(a) {
            Some(Side::Left) => true,
            Some(Side::Right) => !fit.augmented,
            None => false,
        };
        if !keep {
            continue;
        }
        for b in 0..p {
            if cur(b) {
                total += fit.inter[(a, b)].powi(2);
            }
        }
    }
    Ok(total)
}

/// Sum of squared interactions between the task index and every level.
pub fn t_fatigue(fit: &HierNetFit) -> Result<f64> {
    let f = fit
        .col(&ColumnKey::TaskOrder)
        .ok_or_else(|| CrtError::validation("fatigue statistic needs the task index in the fit"))?;
    if fit.std.scale[f] == 0.0 {
        return Err(CrtError::validation("fatigue test requires J ≥ 2"));
    }
    let mut total = 0.0;
    for (c, meta) in fit.columns.iter().enumerate() {
        if let ColumnKey::Dummy { side, slot: Slot::Current, .. } = meta.key {
            if side == Side::Left || !fit.augmented {
                total += fit.inter[(f, c)].powi(2);
            }
        }
    }
    Ok(total)
}
