use std::collections::HashMap;

use crt_core::encoding::{build_design, build_symmetry_augmented, response, ColumnKey, ColumnMeta, DesignMatrix, DesignOptions};
use crt_core::hiernet::{self, cross_validate, fit, fit_with_mode, HierNetConfig, HierNetSolver, Mode};
use crt_core::randomization::sample_x_given_z;
use crt_core::simulation::{generate, ForcedChoiceDgp};
use crt_core::{ConjointDataset, FactorSpec, RandomizationScheme, Schema};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn continuous_design(x: &DMatrix<f64>) -> DesignMatrix {
    let p = x.ncols();
    let columns: Vec<ColumnMeta> = (0..p)
        .map(|c| ColumnMeta {
            key: ColumnKey::Covariate { cov: c, level: None },
            name: format!("x{c}"),
            group: c,
            mirror: c,
            main_effect: true,
        })
        .collect();
    let index = columns.iter().enumerate().map(|(i, c)| (c.key.clone(), i)).collect::<HashMap<_, _>>();
    DesignMatrix {
        x: x.clone(),
        columns,
        index,
        respondent: (0..x.nrows()).collect(),
        symmetric: false,
    }
}

fn tight() -> HierNetConfig {
    HierNetConfig {
        tol: 1e-15,
        max_iter: 200_000,
        ..Default::default()
    }
}

fn binary_dataset(n: usize, nf: usize, seed: u64, y_fn: impl Fn(&[u16], &[u16], &mut ChaCha8Rng) -> u8) -> ConjointDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<FactorSpec> = (0..nf).map(|f| FactorSpec::profile(&format!("F{f}"), &["a", "b"])).collect();
    let schema = Schema::new(specs, vec![]).unwrap();
    let mut left = vec![vec![0u16; n]; nf];
    let mut right = vec![vec![0u16; n]; nf];
    let mut y = vec![0u8; n];
    for r in 0..n {
        let l: Vec<u16> = (0..nf).map(|_| rng.random_range(0..2)).collect();
        let rr: Vec<u16> = (0..nf).map(|_| rng.random_range(0..2)).collect();
        for f in 0..nf {
            left[f][r] = l[f];
            right[f][r] = rr[f];
        }
        y[r] = y_fn(&l, &rr, &mut rng);
    }
    ConjointDataset::new(schema, n, 1, (0..n).map(|i| i.to_string()).collect(), left, right, vec![], y, vec![1; n]).unwrap()
}

#[test]
fn lambda_zero_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 50;
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0..2) as f64);
    let y: Vec<f64> = (0..n).map(|r| 0.3 * x[(r, 0)] - 0.5 * x[(r, 1)] + 0.8 * x[(r, 0)] * x[(r, 1)] + rng.random::<f64>()).collect();
    let dm = continuous_design(&x);
    let f = fit(&dm, &y, 0.0, &tight()).unwrap();

    // Oracle: OLS on [1, s0, s1, s0*s1 - mean] with s standardized.
    let s = |c: usize, r: usize| f.std.standardize(c, x[(r, c)]);
    let prod: Vec<f64> = (0..n).map(|r| s(0, r) * s(1, r)).collect();
    let pm = prod.iter().sum::<f64>() / n as f64;
    let a = DMatrix::from_fn(n, 4, |r, c| match c {
        0 => 1.0,
        1 => s(0, r),
        2 => s(1, r),
        _ => prod[r] - pm,
    });
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * DVector::from_vec(y.clone()))).unwrap();
    assert!((f.intercept - coef[0]).abs() < 1e-4);
    assert!((f.main[0] - coef[1]).abs() < 1e-4, "{} vs {}", f.main[0], coef[1]);
    assert!((f.main[1] - coef[2]).abs() < 1e-4);
    assert!((f.inter[(0, 1)] - coef[3]).abs() < 1e-4);
    let pred = f.predict(&dm);
    let fitted = &a * &coef;
    for r in 0..n {
        assert!((pred[r] - fitted[r]).abs() < 1e-4);
    }
}

#[test]
fn lambda_zero_binary_factors_fitted_values() {
    // Two binary factors with full dummy coding: coefficients are not
    // identified, fitted values are.
    let ds = binary_dataset(50, 2, 9, |l, r, rng| ((l[0] as f64 - r[1] as f64 + rng.random::<f64>()) > 0.5) as u8);
    let dm = build_design(&ds, false);
    let y = response(&ds);
    let f = fit(&dm, &y, 0.0, &tight()).unwrap();
    let p = dm.cols();
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(dm.rows(), 1.0)];
    for c in 0..p {
        cols.push(dm.x.column(c).into_owned());
    }
    for a in 0..p {
        for b in (a + 1)..p {
            if dm.may_interact(a, b) {
                cols.push(dm.x.column(a).component_mul(&dm.x.column(b)));
            }
        }
    }
    let a = DMatrix::from_columns(&cols);
    let yv = DVector::from_vec(y);
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&yv, 1e-10).unwrap();
    let fitted = &a * coef;
    let pred = f.predict(&dm);
    for r in 0..dm.rows() {
        assert!((pred[r] - fitted[r]).abs() < 1e-4, "row {r}: {} vs {}", pred[r], fitted[r]);
    }
}

#[test]
fn large_lambda_gives_zero_fit() {
    let ds = binary_dataset(200, 3, 1, |l, _, rng| (l[0] == 1 && rng.random::<f64>() < 0.8) as u8);
    let dm = build_design(&ds, false);
    let y = response(&ds);
    let lmax = hiernet::lambda_max(&dm, &y, Mode::Full).unwrap();
    let f = fit(&dm, &y, lmax * 1.0001, &HierNetConfig::default()).unwrap();
    assert!(f.main.iter().all(|&b| b == 0.0));
    assert!(f.inter.iter().all(|&b| b == 0.0));
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    assert!((f.intercept - ybar).abs() < 1e-15);
    let g = fit(&dm, &y, lmax * 0.9, &HierNetConfig::default()).unwrap();
    assert!(g.main.iter().any(|&b| b != 0.0) || g.inter.iter().any(|&b| b != 0.0));
}

#[test]
fn objective_is_monotone_and_hierarchy_holds() {
    let ds = binary_dataset(400, 4, 2, |l, r, rng| {
        let v = 0.8 * (l[1] as f64 - r[1] as f64) + 1.5 * ((l[0] == l[2]) as i32 as f64 - 0.5);
        (v + rng.random::<f64>() - 0.5 > 0.0) as u8
    });
    let dm = build_design(&ds, false);
    let y = response(&ds);
    let lmax = hiernet::lambda_max(&dm, &y, Mode::Full).unwrap();
    for frac in [0.5, 0.1, 0.02] {
        let f = fit_with_mode(&dm, &y, lmax * frac, &HierNetConfig::default(), Mode::Full, true).unwrap();
        assert!(f.status.trace.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs()));
        assert!(f.hierarchy_violation() <= 1e-6);
        assert!(f.status.converged);
    }
}

#[test]
fn hierarchy_binds_for_pure_interaction() {
    // Factor 0 has no main effect; its product with factor 1 drives y.
    let ds = binary_dataset(2000, 3, 4, |l, _, rng| {
        let v = if l[0] == l[1] { 0.9 } else { 0.1 };
        (rng.random::<f64>() < v) as u8
    });
    let dm = build_design(&ds, false);
    let y = response(&ds);
    let lmax = hiernet::lambda_max(&dm, &y, Mode::Full).unwrap();
    let cols_a = dm.columns_of_factors(&[0]);
    let cols_b = dm.columns_of_factors(&[1]);
    for frac in [0.3, 0.1] {
        let f = fit(&dm, &y, lmax * frac, &HierNetConfig::default()).unwrap();
        for &a in &cols_a {
            let row: f64 = (0..dm.cols()).map(|k| f.inter[(a, k)].abs()).sum();
            // Budget covers the row, and with no real main effect the row
            // is what sets the budget.
            assert!(row <= f.budget[a] + 1e-6);
            if row > 0.0 {
                assert!(f.main[a].abs() <= row + 1e-9);
                assert!((f.budget[a] - row).abs() <= 1e-9);
            }
        }
        let ab: f64 = cols_a.iter().flat_map(|&a| cols_b.iter().map(move |&b| (a, b))).map(|(a, b)| f.inter[(a, b)].abs()).sum();
        assert!(ab > 0.0, "interaction should enter at moderate lambda");
    }
    // When the penalty is too large for the interaction to pay for its
    // budget, main and interaction vanish together.
    let f = fit(&dm, &y, lmax * 0.999, &HierNetConfig::default()).unwrap();
    for &a in &cols_a {
        if f.main[a] == 0.0 {
            assert!((0..dm.cols()).all(|k| f.inter[(a, k)] == 0.0));
        }
    }
}

fn sim_design(n: usize, seed: u64) -> (ConjointDataset, DesignMatrix, Vec<f64>) {
    let d = generate(&ForcedChoiceDgp::default().with_interactions(0.1, 12).with_n(n), seed, 0).unwrap();
    let (dm, y) = build_symmetry_augmented(&d.data, &DesignOptions::default()).unwrap();
    (d.data, dm, y)
}

#[test]
fn symmetric_fit_matches_explicit_augmented_fit() {
    let ds = binary_dataset(300, 3, 11, |l, r, rng| {
        let v = 0.7 * (l[0] as f64 - r[0] as f64) + 0.6 * (l[1] as f64 * l[2] as f64 - r[1] as f64 * r[2] as f64);
        (v + (rng.random::<f64>() - 0.5) * 2.0 > 0.0) as u8
    });
    let (dm, y) = build_symmetry_augmented(&ds, &DesignOptions::default()).unwrap();
    let lmax = hiernet::lambda_max(&dm, &y, Mode::Symmetric).unwrap();
    let lmax_full = hiernet::lambda_max(&dm, &y, Mode::Full).unwrap();
    assert!((lmax - lmax_full).abs() <= 1e-12 * lmax);
    let cfg = HierNetConfig {
        tol: 1e-13,
        max_iter: 100_000,
        ..Default::default()
    };
    for frac in [0.3, 0.05] {
        let red = fit_with_mode(&dm, &y, lmax * frac, &cfg, Mode::Symmetric, true).unwrap();
        let full = fit_with_mode(&dm, &y, lmax * frac, &cfg, Mode::Full, false).unwrap();
        let (a, b) = (red.status.objective, full.status.objective);
        assert!((a - b).abs() <= 1e-7 * a.abs(), "{a} vs {b}");
        assert!(red.antisymmetry_violation() <= 1e-6);
        assert!(red.hierarchy_violation() <= 1e-6);
        assert!(red.status.trace.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs()));
        assert_eq!(red.intercept, 0.5);
        let pred = red.predict(&dm);
        let half = dm.rows() / 2;
        for r in 0..half {
            assert!((pred[r] + pred[r + half] - 2.0 * red.intercept).abs() < 1e-6);
        }
        // Fitted values agree with the explicit solve.
        let pf = full.predict(&dm);
        let max_diff = pred.iter().zip(&pf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-3, "{max_diff}");
    }
}

#[test]
fn fit_is_invariant_to_row_order() {
    let (ds, _, _) = sim_design(300, 3);
    let perm: Vec<usize> = (0..ds.rows()).rev().collect();
    let permute = |v: &Vec<u16>| perm.iter().map(|&r| v[r]).collect::<Vec<_>>();
    let ds2 = ConjointDataset::new(
        ds.schema.clone(),
        ds.n,
        1,
        ds.respondent_ids.clone(),
        ds.left.iter().map(permute).collect(),
        ds.right.iter().map(permute).collect(),
        vec![],
        perm.iter().map(|&r| ds.y[r]).collect(),
        vec![1; ds.n],
    )
    .unwrap();
    let (dm1, y1) = build_symmetry_augmented(&ds, &DesignOptions::default()).unwrap();
    let (dm2, y2) = build_symmetry_augmented(&ds2, &DesignOptions::default()).unwrap();
    let lam = hiernet::lambda_max(&dm1, &y1, Mode::Symmetric).unwrap() * 0.1;
    let cfg = HierNetConfig {
        tol: 1e-13,
        max_iter: 100_000,
        ..Default::default()
    };
    let a = fit(&dm1, &y1, lam, &cfg).unwrap();
    let b = fit(&dm2, &y2, lam, &cfg).unwrap();
    let d = a.main.iter().zip(&b.main).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let di = (&a.inter - &b.inter).amax();
    assert!(d < 1e-6 && di < 1e-6, "{d} {di}");
}

#[test]
fn cached_solver_matches_direct_fit() {
    let (ds, dm, y) = sim_design(400, 8);
    let scheme = RandomizationScheme::uniform(&ds.schema);
    let xcols = dm.columns_of_factors(&[0]);
    let cfg = HierNetConfig::default();
    let solver = HierNetSolver::new(&dm, &y, Mode::Symmetric, &xcols, &cfg).unwrap();
    let lam = hiernet::lambda_max(&dm, &y, Mode::Symmetric).unwrap() * 0.1;
    for b in 0..3 {
        let ds_b = sample_x_given_z(&ds, &scheme, &[0], b, 21).unwrap();
        let (dm_b, y_b) = build_symmetry_augmented(&ds_b, &DesignOptions::default()).unwrap();
        let direct = fit(&dm_b, &y_b, lam, &cfg).unwrap();
        let cached = solver.fit(&dm_b, lam, None).unwrap();
        let d = direct.main.iter().zip(&cached.main).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
        assert!((&direct.inter - &cached.inter).amax() < 1e-9);
    }
}

#[test]
fn cv_on_noise_prefers_large_lambda() {
    let mut top_quartile = 0;
    for seed in 0..20u64 {
        let ds = binary_dataset(300, 4, 100 + seed, |_, _, rng| rng.random_range(0..2));
        let (dm, y) = build_symmetry_augmented(&ds, &DesignOptions::default()).unwrap();
        let cfg = HierNetConfig {
            n_lambda: 20,
            ..Default::default()
        };
        let cv = cross_validate(&dm, &y, &cfg, seed).unwrap();
        let pos = cv.grid.iter().position(|&l| l == cv.lambda_selected).unwrap();
        if pos < cv.grid.len() / 4 {
            top_quartile += 1;
        }
    }
    assert!(top_quartile >= 11, "{top_quartile}/20 in top quartile");
}

#[test]
fn cv_is_deterministic_and_beats_null_with_signal() {
    let ds = binary_dataset(2000, 3, 77, |l, r, rng| {
        let v = 1.2 * (l[0] as f64 - r[0] as f64);
        (v + (rng.random::<f64>() - 0.5) * 4.0 > 0.0) as u8
    });
    let (dm, y) = build_symmetry_augmented(&ds, &DesignOptions::default()).unwrap();
    let cfg = HierNetConfig {
        n_lambda: 20,
        ..Default::default()
    };
    let a = cross_validate(&dm, &y, &cfg, 3).unwrap();
    let b = cross_validate(&dm, &y, &cfg, 3).unwrap();
    assert_eq!(a.lambda_selected, b.lambda_selected);
    assert_eq!(a.curve, b.curve);
    let best = a.curve.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < a.null_error, "{best} vs {}", a.null_error);
    let few = HierNetConfig {
        cv_folds: 5000,
        ..Default::default()
    };
    assert!(cross_validate(&dm, &y, &few, 3).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let (_, dm, y) = sim_design(100, 1);
    assert!(fit(&dm, &y, -1.0, &HierNetConfig::default()).is_err());
    let mut y2 = y.clone();
    y2[0] = f64::NAN;
    assert!(fit(&dm, &y2, 0.1, &HierNetConfig::default()).is_err());
    assert!(fit(&dm, &y[1..], 0.1, &HierNetConfig::default()).is_err());
}
