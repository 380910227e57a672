//! Multi-task forced-choice data with an optional planted violation of one
//! regularity assumption.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{ConjointDataset, FactorSpec, Schema};
use crate::error::{CrtError, Result};
use crate::rng::{stream, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Planted {
    #[default]
    None,
    /// Extra effect of the first factor in the left profile only.
    Order(f64),
    /// Interaction between the second factor of the previous task's left
    /// profile and the second factor of the current task.
    Carryover(f64),
    /// The first factor's effect changes linearly with task position, by
    /// this amount from the first to the last task.
    Fatigue(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityDgp {
    pub n: usize,
    pub j: usize,
    /// Main effect of each binary factor (coded ±0.5).
    pub beta: Vec<f64>,
    pub planted: Planted,
}

impl Default for RegularityDgp {
    fn default() -> Self {
        RegularityDgp {
            n: 500,
            j: 4,
            beta: vec![0.3, -0.2, 0.1, 0.0],
            planted: Planted::None,
        }
    }
}

impl RegularityDgp {
    pub fn with_planted(mut self, planted: Planted) -> Self {
        self.planted = planted;
        self
    }

    pub fn with_size(mut self, n: usize, j: usize) -> Self {
        self.n = n;
        self.j = j;
        self
    }

    pub fn schema(&self) -> Schema {
        let f = (0..self.beta.len())
            .map(|k| FactorSpec::profile(&format!("A{}", k + 1), &["lo", "hi"]))
            .collect();
        Schema::new(f, vec![]).expect("valid schema")
    }
}

fn code(v: u16) -> f64 {
    v as f64 - 0.5
}

/// Uniform binary profiles; `Y = 1{η + ε > 0}` with logistic noise and
/// `η = Σ β_f (x^L_f - x^R_f)` plus the planted term.
pub fn generate_regularity(dgp: &RegularityDgp, seed: u64, rep: u64) -> Result<ConjointDataset> {
    let nf = dgp.beta.len();
    if nf < 2 || dgp.n == 0 || dgp.j == 0 {
        return Err(CrtError::validation("regularity DGP needs two factors, n ≥ 1 and J ≥ 1"));
    }
    let rows = dgp.n * dgp.j;
    let mut rng = stream(seed, Tag::Simulation, rep, 1);
    let mut left = vec![vec![0u16; rows]; nf];
    let mut right = vec![vec![0u16; rows]; nf];
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        for f in 0..nf {
            left[f][r] = rng.random_range(0..2u16);
            right[f][r] = rng.random_range(0..2u16);
        }
        let task = r % dgp.j;
        let d = |f: usize| code(left[f][r]) - code(right[f][r]);
        let mut eta: f64 = (0..nf).map(|f| dgp.beta[f] * d(f)).sum();
        match dgp.planted {
            Planted::None => {}
            Planted::Order(s) => eta += s * code(left[0][r]),
            Planted::Carryover(s) => {
                if task > 0 {
                    eta += 2.0 * s * code(left[1][r - 1]) * d(1);
                }
            }
            Planted::Fatigue(s) => {
                if dgp.j > 1 {
                    let pos = task as f64 / (dgp.j - 1) as f64 - 0.5;
                    eta += s * pos * d(0);
                }
            }
        }
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        y.push((eta + (u / (1.0 - u)).ln() > 0.0) as u8);
    }
    ConjointDataset::new(
        dgp.schema(),
        dgp.n,
        dgp.j,
        (0..dgp.n).map(|i| format!("r{i}")).collect(),
        left,
        right,
        vec![],
        y,
        (0..rows).map(|r| (r % dgp.j) as u32 + 1).collect(),
    )
}
