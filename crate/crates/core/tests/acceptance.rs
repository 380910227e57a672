//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr; the heavy power studies are shared through `OnceLock`s.
//!
//! Run with `cargo test -p crt-core --test acceptance -- --nocapture` to
//! see the lines as they finish.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use crt_core::encoding::{build_symmetry_augmented, ColumnKey, ColumnMeta, DesignMatrix, DesignOptions};
use crt_core::engine::{p_value_rational, run_crt_custom, run_validity_suite, ValidityReport};
use crt_core::glm::{amce_test, fit_ols_clustered, ClusterUnit};
use crt_core::hiernet::{self, fit, fit_with_mode, HierNetConfig, Mode};
use crt_core::inference::two_proportion_z;
use crt_core::randomization::swap_rows;
use crt_core::simulation::{
    count_grid, generate, generate_regularity, logistic_inflation_study, power_study, size_grid, variance_decomposition,
    ForcedChoiceDgp, InflationSettings, InflationTable, Method, Planted, PowerSettings, PowerTable, RegularityDgp,
};
use crt_core::statistics::PreparedStatistic;
use crt_core::{
    run_crt_with, EngineOptions, LambdaPolicy, RandomizationScheme, ResampleKind, ResamplePlan, StatisticKind,
    StatisticSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.05;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:02} {name}: {verdict} ({detail})");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn rate(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v <= ALPHA).count() as f64 / p.len() as f64
}

fn hiernet_spec() -> StatisticSpec {
    StatisticSpec::new(StatisticKind::HiernetMain, &["X"]).with_lambda(LambdaPolicy::CvOnNullDraw)
}

fn uniform_scheme(ds: &crt_core::ConjointDataset) -> RandomizationScheme {
    RandomizationScheme::uniform(&ds.schema)
}

#[test]
fn criterion_01_exact_p_value_arithmetic() {
    let below: Vec<f64> = (0..9).map(|b| b as f64).collect();
    let a = p_value_rational(9.0, &below);
    let c = p_value_rational(2.5, &[2.5; 9]);
    let t = p_value_rational(0.25, &[0.1, 0.2, 0.3, 0.4]);
    let floats = (a.0 as f64 / a.1 as f64, c.0 as f64 / c.1 as f64, t.0 as f64 / t.1 as f64);

    // The same cases through the engine: agreement with the observed X is
    // maximal on the observed data, a constant statistic ties everywhere.
    let ds = generate(&ForcedChoiceDgp::default().with_n(200), 1, 0).unwrap().data;
    let scheme = uniform_scheme(&ds);
    let plan = ResamplePlan::new(ResampleKind::Main, 9, 11).unwrap();
    let target = vec!["X".to_string()];
    let obs = ds.left[0].clone();
    let agree = |d: &crt_core::ConjointDataset| Ok(d.left[0].iter().zip(&obs).filter(|(a, b)| a == b).count() as f64);
    let (_, _, engine_max) = run_crt_custom(&ds, &scheme, &plan, &target, None, EngineOptions::default(), agree).unwrap();
    let (_, _, engine_const) =
        run_crt_custom(&ds, &scheme, &plan, &target, None, EngineOptions::default(), |_| Ok(1.0)).unwrap();

    let pass = a == (1, 10)
        && c == (10, 10)
        && t == (3, 5)
        && floats == (0.1, 1.0, 0.6)
        && engine_max == (1, 10)
        && engine_const == (10, 10);
    report(
        1,
        "exact p-value arithmetic",
        pass,
        &format!("max {}/{}, constant {}/{}, ties {}/{}; engine {:?} {:?}", a.0, a.1, c.0, c.1, t.0, t.1, engine_max, engine_const),
    );
}

#[test]
fn criterion_02_null_hiernet_crt_is_valid() {
    let dgp = ForcedChoiceDgp::default().null().with_n(1000);
    let plan = ResamplePlan::new(ResampleKind::Main, 100, 2024).unwrap();
    let r = run_validity_suite(
        |rep| {
            let d = generate(&dgp, 17, rep as u64)?.data;
            let s = uniform_scheme(&d);
            Ok((d, s))
        },
        &plan,
        &hiernet_spec(),
        200,
        &[ALPHA],
    )
    .unwrap();
    let rej = r.rate(ALPHA).unwrap();
    let pass = (0.02..=0.09).contains(&rej) && r.ks_upper_p > 0.01;
    report(
        2,
        "null HierNet CRT validity (n=1000, 200 reps, B=100)",
        pass,
        &format!(
            "rejection {rej:.3} in [0.02, 0.09], one-sided KS p {:.3}, two-sided KS p {:.3}, share of p = 1: {:.2}",
            r.ks_upper_p,
            r.ks_two_sided_p,
            r.p_values.iter().filter(|&&p| p == 1.0).count() as f64 / 200.0
        ),
    );
}

fn var_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (s2, ((m4 - s2 * s2) / n).sqrt())
}

#[test]
fn criterion_03_variance_decomposition() {
    let dgp = ForcedChoiceDgp::default();
    let vd = variance_decomposition(&dgp);
    let draw = generate(&dgp.clone().with_n(1_000_000), 3, 0).unwrap();
    let (v, se) = var_and_se(&draw.eta);
    // Exact up to floating-point rounding of the sums.
    let pass = (vd.remaining - 0.06375).abs() <= 1e-15 && vd.interaction == 0.0 && (v - vd.remaining).abs() < 4.0 * se;
    report(
        3,
        "analytic variance decomposition",
        pass,
        &format!("closed form {}, empirical {v:.6} ± {se:.6} over 10^6 rows", vd.remaining),
    );
}

/// n = 3000, six within + six between interactions, sizes 0 / 0.05 / 0.1,
/// all four methods on the same data.
fn main_study() -> &'static PowerTable {
    static STUDY: OnceLock<PowerTable> = OnceLock::new();
    STUDY.get_or_init(|| {
        let grid = size_grid(&[0.0, 0.05, 0.1], 12, 3000, false);
        let settings = PowerSettings {
            reps: 100,
            b: 100,
            master_seed: 4,
            ..Default::default()
        };
        let methods = [Method::CrtHiernet, Method::CrtHiernetUnconstrained, Method::CrtDicrt, Method::Amce];
        power_study(&grid, &methods, &settings).unwrap()
    })
}

#[test]
fn criterion_04_power_gap_over_amce() {
    let t = main_study();
    let (crt_hi, amce_hi) = (t.power("size=0.1", Method::CrtHiernet).unwrap(), t.power("size=0.1", Method::Amce).unwrap());
    let (crt_0, amce_0) = (t.power("size=0", Method::CrtHiernet).unwrap(), t.power("size=0", Method::Amce).unwrap());
    let pass = crt_hi >= amce_hi + 0.10 && amce_0 - crt_0 <= 0.08;
    report(
        4,
        "HierNet CRT power gap over AMCE (n=3000, 100 reps)",
        pass,
        &format!("size 0.1: CRT {crt_hi:.2} vs AMCE {amce_hi:.2}; size 0: CRT {crt_0:.2} vs AMCE {amce_0:.2}"),
    );
}

#[test]
fn criterion_05_symmetry_constraint_helps() {
    let t = main_study();
    let mut detail = Vec::new();
    let mut pass = true;
    for id in ["size=0.05", "size=0.1"] {
        let c = t.power(id, Method::CrtHiernet).unwrap();
        let u = t.power(id, Method::CrtHiernetUnconstrained).unwrap();
        pass &= c >= u;
        if id == "size=0.1" {
            pass &= c >= u + 0.05;
        }
        detail.push(format!("{id}: constrained {c:.2} vs unconstrained {u:.2}"));
    }
    report(5, "constrained vs unconstrained HierNet", pass, &detail.join("; "));
}

/// The count panel's twelve-interaction point: size 0.06, n = 3000.
fn count_study() -> &'static PowerTable {
    static STUDY: OnceLock<PowerTable> = OnceLock::new();
    STUDY.get_or_init(|| {
        let settings = PowerSettings {
            reps: 100,
            b: 100,
            master_seed: 6,
            ..Default::default()
        };
        let methods = [Method::CrtHiernet, Method::CrtDicrt, Method::Amce];
        power_study(&count_grid(&[12], 0.06, 3000, false), &methods, &settings).unwrap()
    })
}

#[test]
fn criterion_06_dicrt_between_amce_and_hiernet() {
    let t = count_study();
    let id = "count=12";
    let (d, h, a) = (
        t.power(id, Method::CrtDicrt).unwrap(),
        t.power(id, Method::CrtHiernet).unwrap(),
        t.power(id, Method::Amce).unwrap(),
    );
    let pass = (d - h).abs() <= 0.10 && d >= a;
    // Context only: the same comparison at interaction size 0.1.
    let m = main_study();
    let (d1, h1) = (m.power("size=0.1", Method::CrtDicrt).unwrap(), m.power("size=0.1", Method::CrtHiernet).unwrap());
    report(
        6,
        "d_I CRT power at twelve interactions of size 0.06 (n=3000, 100 reps)",
        pass,
        &format!("d_I {d:.2}, HierNet {h:.2}, AMCE {a:.2}; at size 0.1: d_I {d1:.2}, HierNet {h1:.2}"),
    );
}

#[test]
fn criterion_07_heterogeneous_effects_match_homogeneous() {
    let sizes = [0.05, 0.1];
    let settings = PowerSettings {
        reps: 200,
        b: 100,
        master_seed: 7,
        ..Default::default()
    };
    let homo = power_study(&size_grid(&sizes, 12, 1000, false), &[Method::CrtHiernet], &settings).unwrap();
    let hetero = power_study(&size_grid(&sizes, 12, 1000, true), &[Method::CrtHiernet], &settings).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (a, b) in homo.summary.iter().zip(&hetero.summary) {
        let x1 = (a.power * a.reps as f64).round() as usize;
        let x2 = (b.power * b.reps as f64).round() as usize;
        let p = two_proportion_z(x1, a.reps, x2, b.reps);
        pass &= p > 0.01;
        detail.push(format!("x={}: {:.2} vs {:.2}, z-test p {p:.3}", a.x, a.power, b.power));
    }
    report(7, "heterogeneous vs homogeneous power (n=1000, 200 reps)", pass, &detail.join("; "));
}

fn inflation() -> &'static InflationTable {
    static STUDY: OnceLock<InflationTable> = OnceLock::new();
    STUDY.get_or_init(|| {
        logistic_inflation_study(&InflationSettings {
            num_z: vec![3, 12],
            n: 5000,
            reps: 200,
            ..Default::default()
        })
        .unwrap()
    })
}

#[test]
fn criterion_08_logistic_inflation() {
    let t = inflation();
    let (big, small) = (t.row(12).unwrap(), t.row(3).unwrap());
    let pass = big.rejection > 0.15 && (0.02..=0.10).contains(&small.rejection);
    report(
        8,
        "logistic F-test inflation (n=5000, 200 reps)",
        pass,
        &format!(
            "12 factors: {:.3} ({} coefficients, {} failed fits); 3 factors: {:.3}; Wald {:.3} / {:.3}",
            big.rejection, big.n_coef, big.failed_fits, small.rejection, big.rejection_wald, small.rejection_wald
        ),
    );
}

fn continuous_design(x: &DMatrix<f64>) -> DesignMatrix {
    let columns: Vec<ColumnMeta> = (0..x.ncols())
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

#[test]
fn criterion_09_hiernet_solver() {
    // λ = 0 against the normal equations of [1, s0, s1, s0·s1 - mean].
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 60;
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y: Vec<f64> = (0..n)
        .map(|r| 0.3 * x[(r, 0)] - 0.5 * x[(r, 1)] + 0.8 * x[(r, 0)] * x[(r, 1)] + rng.random::<f64>())
        .collect();
    let dm = continuous_design(&x);
    let cfg = HierNetConfig {
        tol: 1e-15,
        max_iter: 200_000,
        ..Default::default()
    };
    let f = fit(&dm, &y, 0.0, &cfg).unwrap();
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
    let ours = [f.intercept, f.main[0], f.main[1], f.inter[(0, 1)]];
    let ols_err = ours.iter().zip(coef.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // Augmented fits along a λ path.
    let d = generate(&ForcedChoiceDgp::default().with_interactions(0.1, 12).with_n(500), 9, 0).unwrap();
    let (dm, y) = build_symmetry_augmented(&d.data, &DesignOptions::default()).unwrap();
    let lmax = hiernet::lambda_max(&dm, &y, Mode::Symmetric).unwrap();
    let (mut monotone, mut hier, mut anti) = (true, 0.0f64, 0.0f64);
    for frac in [0.5, 0.1, 0.02] {
        let g = fit_with_mode(&dm, &y, lmax * frac, &HierNetConfig::default(), Mode::Symmetric, true).unwrap();
        monotone &= g.status.trace.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs());
        hier = hier.max(g.hierarchy_violation());
        anti = anti.max(g.antisymmetry_violation());
    }
    let pass = ols_err < 1e-4 && monotone && hier <= 1e-6 && anti <= 1e-6;
    report(
        9,
        "HierNet solver correctness",
        pass,
        &format!("λ=0 vs normal equations {ols_err:.1e}, monotone {monotone}, hierarchy {hier:.1e}, antisymmetry {anti:.1e}"),
    );
}

#[test]
fn criterion_10_statistic_is_row_invariant() {
    let ds = generate(&ForcedChoiceDgp::default().with_interactions(0.3, 12).with_n(300), 10, 0).unwrap().data;
    let (dm, y) = build_symmetry_augmented(&ds, &DesignOptions::default()).unwrap();
    let lam = 0.2 * hiernet::lambda_max(&dm, &y, Mode::Symmetric).unwrap();
    let spec = StatisticSpec::new(StatisticKind::HiernetMain, &["X"]).with_lambda(LambdaPolicy::Fixed(lam));
    let t0 = PreparedStatistic::new(&spec, &ds, None, 1).unwrap().evaluate(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mask: Vec<bool> = (0..ds.rows()).map(|_| rng.random()).collect();
        let swapped = swap_rows(&ds, &mask);
        let t = PreparedStatistic::new(&spec, &swapped, None, 1).unwrap().evaluate(&swapped).unwrap();
        worst = worst.max((t - t0).abs());
    }
    let pass = t0 > 0.0 && worst <= 1e-8;
    report(
        10,
        "statistic invariant to 100 random swap sets",
        pass,
        &format!("T = {t0:.6}, max deviation {worst:.1e}"),
    );
}

#[test]
fn criterion_11_cluster_robust_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, p) = (150, 4);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
    let y: Vec<f64> = (0..n)
        .map(|r| 0.5 + 0.3 * x[(r, 1)] + (rng.random::<f64>() - 0.5) * (1.0 + x[(r, 1)].abs()))
        .collect();
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let ids: Vec<usize> = (0..n).collect();
    let fit = fit_ols_clustered(&x, &y, &ids, &names).unwrap();
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let b = &xtx_inv * x.transpose() * DVector::from_vec(y.clone());
    let e = DVector::from_vec(y) - &x * &b;
    let mut meat = DMatrix::zeros(p, p);
    for r in 0..n {
        let xr = x.row(r).transpose();
        meat += &xr * xr.transpose() * (e[r] * e[r]);
    }
    let hc0 = &xtx_inv * meat * &xtx_inv;
    let err = (&fit.cov - &hc0).amax();

    let dgp = ForcedChoiceDgp::default().null().with_n(1000);
    let pv: Vec<f64> = (0..200)
        .map(|rep| amce_test(&generate(&dgp, 111, rep).unwrap().data, 0, &[], ClusterUnit::Task).unwrap().p_value)
        .collect();
    let rej = rate(&pv);
    let pass = err < 1e-10 && (0.02..=0.09).contains(&rej);
    report(
        11,
        "cluster-robust covariance and AMCE null size",
        pass,
        &format!("HC0 deviation {err:.1e}, AMCE null rejection {rej:.3} over 200 reps"),
    );
}

fn regularity_run(kind: StatisticKind, dgp: &RegularityDgp, reps: usize, seed: u64) -> ValidityReport {
    let plan = ResamplePlan::new(kind.resample_kind(), 100, seed).unwrap();
    let spec = StatisticSpec::new(kind, &[]).with_lambda(LambdaPolicy::CvOnNullDraw);
    run_validity_suite(
        |rep| {
            let d = generate_regularity(dgp, seed, rep as u64)?;
            let s = uniform_scheme(&d);
            Ok((d, s))
        },
        &plan,
        &spec,
        reps,
        &[ALPHA],
    )
    .unwrap()
}

#[test]
fn criterion_12_regularity_tests() {
    let cases = [
        ("order", StatisticKind::Order, 1000, 1, Planted::Order(0.5), 100, 50),
        ("carryover", StatisticKind::Carryover, 1500, 4, Planted::Carryover(0.5), 50, 50),
        ("fatigue", StatisticKind::Fatigue, 500, 4, Planted::Fatigue(0.8), 100, 50),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, kind, n, j, planted, null_reps, power_reps) in cases {
        let dgp = RegularityDgp::default().with_size(n, j);
        let null = regularity_run(kind, &dgp, null_reps, 120);
        let alt = regularity_run(kind, &dgp.clone().with_planted(planted), power_reps, 121);
        let power = alt.rate(ALPHA).unwrap();
        pass &= null.ks_upper_p > 0.01 && power >= 0.5;
        detail.push(format!(
            "{name}: null KS one-sided p {:.3} (two-sided {:.3}, rejection {:.2}), planted power {power:.2}",
            null.ks_upper_p,
            null.ks_two_sided_p,
            null.rate(ALPHA).unwrap()
        ));
    }
    report(12, "regularity tests: validity and power", pass, &detail.join("; "));
}

#[test]
fn criterion_13_results_do_not_depend_on_workers() {
    let mut pass = true;
    let mut detail = Vec::new();

    let main = generate(&ForcedChoiceDgp::default().with_interactions(0.1, 12).with_n(300), 13, 0).unwrap().data;
    let multi = generate_regularity(&RegularityDgp::default().with_size(200, 4), 13, 0).unwrap();
    let runs = [
        (&main, hiernet_spec()),
        (&main, StatisticSpec::new(StatisticKind::Dicrt, &["X"])),
        (&multi, StatisticSpec::new(StatisticKind::Carryover, &[]).with_lambda(LambdaPolicy::CvOnNullDraw)),
    ];
    for (ds, spec) in runs {
        let plan = ResamplePlan::new(spec.kind.resample_kind(), 20, 99).unwrap();
        let scheme = uniform_scheme(ds);
        let out: Vec<String> = [1, 2, 5]
            .iter()
            .map(|&w| {
                let r = run_crt_with(ds, &scheme, &plan, &spec, EngineOptions { workers: Some(w) }).unwrap();
                r.to_json(false).unwrap()
            })
            .collect();
        let same = out.windows(2).all(|w| w[0] == w[1]);
        pass &= same;
        detail.push(format!("{:?}: {}", spec.kind, if same { "identical" } else { "differs" }));
    }

    let grid = size_grid(&[0.1], 12, 200, false);
    let settings = PowerSettings {
        reps: 4,
        b: 9,
        ..Default::default()
    };
    let csv: Vec<Vec<u8>> = [1, 3]
        .iter()
        .map(|&w| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().unwrap();
            let t = pool.install(|| power_study(&grid, &[Method::CrtHiernet, Method::Amce], &settings)).unwrap();
            let mut buf = Vec::new();
            t.write_records(&mut buf).unwrap();
            buf
        })
        .collect();
    let same = csv[0] == csv[1];
    pass &= same;
    detail.push(format!("power study CSV: {}", if same { "identical" } else { "differs" }));
    report(13, "determinism across worker counts", pass, &detail.join("; "));
}
