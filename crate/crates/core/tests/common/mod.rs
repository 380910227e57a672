use crt_core::design::Covariate;
use crt_core::{ConjointDataset, FactorSpec, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random profiles with factors `F0, F1, ...` (levels `l0, l1, ...`),
/// one numeric covariate `age` and coin-flip responses.
pub fn dataset(n: usize, j: usize, seed: u64, levels: &[usize]) -> ConjointDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<FactorSpec> = levels
        .iter()
        .enumerate()
        .map(|(f, &k)| {
            let names: Vec<String> = (0..k).map(|l| format!("l{l}")).collect();
            let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            FactorSpec::profile(&format!("F{f}"), &names)
        })
        .collect();
    let schema = Schema::new(specs, vec![FactorSpec::numeric_covariate("age")]).unwrap();
    let rows = n * j;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<u16>> {
        levels
            .iter()
            .map(|&k| (0..rows).map(|_| rng.random_range(0..k as u16)).collect())
            .collect()
    };
    let left = draw(&mut rng);
    let right = draw(&mut rng);
    let age: Vec<f64> = (0..n).flat_map(|_| std::iter::repeat_n(rng.random_range(18.0..80.0), j)).collect();
    let age = (0..rows).map(|r| age[r]).collect();
    let y = (0..rows).map(|_| rng.random_range(0..2u8)).collect();
    let order = (0..n).flat_map(|_| 1..=j as u32).collect();
    ConjointDataset::new(
        schema,
        n,
        j,
        (0..n).map(|i| format!("r{i}")).collect(),
        left,
        right,
        vec![Covariate::numeric(age)],
        y,
        order,
    )
    .unwrap()
}

