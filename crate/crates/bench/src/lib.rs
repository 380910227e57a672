//! Fixtures shared by the benchmarks in `benches/`.

use crt_core::encoding::{build_symmetry_augmented, DesignMatrix, DesignOptions};
use crt_core::hiernet::{self, Mode};
use crt_core::simulation::{generate, ForcedChoiceDgp};
use crt_core::ConjointDataset;

/// Simulated data with twelve interactions of size 0.1.
pub fn dataset(n: usize) -> ConjointDataset {
    generate(&ForcedChoiceDgp::default().with_interactions(0.1, 12).with_n(n), 1, 0)
        .expect("default design is valid")
        .data
}

/// Augmented design, response and a mid-path λ.
pub fn augmented(ds: &ConjointDataset) -> (DesignMatrix, Vec<f64>, f64) {
    let (dm, y) = build_symmetry_augmented(ds, &DesignOptions::default()).expect("design builds");
    let lam = 0.1 * hiernet::lambda_max(&dm, &y, Mode::Symmetric).expect("λ_max");
    (dm, y, lam)
}
