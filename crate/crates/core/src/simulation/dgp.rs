//! Logistic forced-choice data with binary factors coded ±0.5.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{ConjointDataset, FactorSpec, Schema};
use crate::error::{CrtError, Result};
use crate::rng::{stream, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcedChoiceDgp {
    pub num_z: usize,
    pub n: usize,
    pub beta_x: f64,
    pub beta_z: Vec<f64>,
    /// Number of nonzero within-profile X×Z interactions, entered positive.
    pub n_within: usize,
    /// Number of nonzero between-profile X×Z interactions, entered negative.
    pub n_between: usize,
    pub within_size: f64,
    pub between_size: f64,
    /// Nonzero within-profile Z×Z interactions.
    pub n_zz: usize,
    pub zz_size: f64,
}

impl Default for ForcedChoiceDgp {
    fn default() -> Self {
        let beta_z = (0..10)
            .map(|k| if k < 8 { if k % 2 == 0 { 0.1 } else { -0.1 } } else { 0.0 })
            .collect();
        ForcedChoiceDgp {
            num_z: 10,
            n: 3000,
            beta_x: 0.1,
            beta_z,
            n_within: 0,
            n_between: 0,
            within_size: 0.0,
            between_size: 0.0,
            n_zz: 15,
            zz_size: 0.05,
        }
    }
}

impl ForcedChoiceDgp {
    /// `n_total` X×Z interactions of magnitude `size`, split evenly between
    /// within- and between-profile terms.
    pub fn with_interactions(mut self, size: f64, n_total: usize) -> Self {
        self.n_within = n_total / 2;
        self.n_between = n_total - n_total / 2;
        self.within_size = size;
        self.between_size = size;
        self
    }

    /// Strong within-profile and weak between-profile interactions with the
    /// same explained variance as the homogeneous design at `size`.
    pub fn with_heterogeneous(mut self, size: f64, n_total: usize) -> Self {
        let (s, w) = heterogeneous_coefficients(size);
        self.n_within = n_total / 2;
        self.n_between = n_total - n_total / 2;
        self.within_size = s;
        self.between_size = w;
        self
    }

    /// X has no effect of any kind.
    pub fn null(mut self) -> Self {
        self.beta_x = 0.0;
        self.n_within = 0;
        self.n_between = 0;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_z.len() != self.num_z {
            return Err(CrtError::validation("beta_z must have num_z entries"));
        }
        if self.n_within > self.num_z || self.n_between > self.num_z {
            return Err(CrtError::validation("more X×Z interactions requested than factors"));
        }
        if self.n_zz > self.num_z * self.num_z.saturating_sub(1) / 2 {
            return Err(CrtError::validation("more Z×Z interactions requested than pairs"));
        }
        if self.n == 0 {
            return Err(CrtError::validation("n must be positive"));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let mut f = vec![FactorSpec::profile("X", &["lo", "hi"])];
        for k in 0..self.num_z {
            f.push(FactorSpec::profile(&format!("Z{}", k + 1), &["lo", "hi"]));
        }
        Schema::new(f, vec![]).expect("simulation schema is valid")
    }
}

/// `(I_s, I_w)` on the thirty-degree point of the circle `I_s² + I_w² = 2I²`.
pub fn heterogeneous_coefficients(size: f64) -> (f64, f64) {
    ((4.0f64 / 3.0).sqrt() * size, (2.0f64 / 3.0).sqrt() * size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceDecomposition {
    pub interaction: f64,
    pub remaining: f64,
    pub fraction: f64,
}

/// Closed-form variances of the latent linear predictor's components.
pub fn variance_decomposition(dgp: &ForcedChoiceDgp) -> VarianceDecomposition {
    let mains = dgp.beta_x * dgp.beta_x + dgp.beta_z.iter().map(|b| b * b).sum::<f64>();
    let remaining = mains / 2.0 + dgp.n_zz as f64 * dgp.zz_size * dgp.zz_size / 2.0;
    let interaction = dgp.n_within as f64 * dgp.within_size * dgp.within_size / 2.0
        + dgp.n_between as f64 * dgp.between_size * dgp.between_size / 2.0;
    let total = interaction + remaining;
    VarianceDecomposition {
        interaction,
        remaining,
        fraction: if total > 0.0 { interaction / total } else { 0.0 },
    }
}

#[derive(Clone, Debug)]
pub struct SimDraw {
    pub data: ConjointDataset,
    /// Latent predictor without noise, and the logistic noise.
    pub eta: Vec<f64>,
    pub noise: Vec<f64>,
    /// Z factors (0-based among the Z's) with nonzero X×Z terms.
    pub within: Vec<usize>,
    pub between: Vec<usize>,
    pub zz: Vec<(usize, usize)>,
}

impl SimDraw {
    /// Response rebuilt from the stored latent variable.
    pub fn latent_response(&self) -> Vec<u8> {
        self.eta.iter().zip(&self.noise).map(|(e, n)| (e + n > 0.0) as u8).collect()
    }
}

fn code(level: u16) -> f64 {
    if level == 0 {
        -0.5
    } else {
        0.5
    }
}

/// Draws replicate `rep` of the design. Interaction positions are redrawn
/// for every replicate.
pub fn generate(dgp: &ForcedChoiceDgp, seed: u64, rep: u64) -> Result<SimDraw> {
    dgp.validate()?;
    let nz = dgp.num_z;
    let mut pos = stream(seed, Tag::Positions, rep, 0);
    let within = sample(&mut pos, nz, dgp.n_within).into_vec();
    let between = sample(&mut pos, nz, dgp.n_between).into_vec();
    let pairs: Vec<(usize, usize)> = (0..nz).flat_map(|a| ((a + 1)..nz).map(move |b| (a, b))).collect();
    let zz: Vec<(usize, usize)> = sample(&mut pos, pairs.len(), dgp.n_zz).into_iter().map(|i| pairs[i]).collect();

    let n = dgp.n;
    let nf = nz + 1;
    let mut rng = stream(seed, Tag::Simulation, rep, 0);
    let mut left = vec![vec![0u16; n]; nf];
    let mut right = vec![vec![0u16; n]; nf];
    let mut eta = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        for f in 0..nf {
            left[f][r] = rng.random_range(0..2u16);
            right[f][r] = rng.random_range(0..2u16);
        }
        let xl = code(left[0][r]);
        let xr = code(right[0][r]);
        let zl = |k: usize| code(left[k + 1][r]);
        let zr = |k: usize| code(right[k + 1][r]);
        let mut e = dgp.beta_x * (xl - xr);
        for k in 0..nz {
            e += dgp.beta_z[k] * (zl(k) - zr(k));
        }
        for &k in &within {
            e += 2.0 * dgp.within_size * (xl * zl(k) - xr * zr(k));
        }
        for &k in &between {
            e -= 2.0 * dgp.between_size * (xl * zr(k) - xr * zl(k));
        }
        for &(a, b) in &zz {
            e += 2.0 * dgp.zz_size * (zl(a) * zl(b) - zr(a) * zr(b));
        }
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let eps = (u / (1.0 - u)).ln();
        eta.push(e);
        noise.push(eps);
        y.push((e + eps > 0.0) as u8);
    }
    let data = ConjointDataset::new(
        dgp.schema(),
        n,
        1,
        (0..n).map(|i| format!("r{i}")).collect(),
        left,
        right,
        vec![],
        y,
        vec![1; n],
    )?;
    Ok(SimDraw {
        data,
        eta,
        noise,
        within,
        between,
        zz,
    })
}
