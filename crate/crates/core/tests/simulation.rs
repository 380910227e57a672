use crt_core::glm::{amce_test, ClusterUnit};
use crt_core::simulation::{
    count_grid, generate, generate_regularity, inflation_design, logistic_inflation_study, power_study, size_grid,
    variance_decomposition, ForcedChoiceDgp, InflationSettings, Method, Planted, PowerSettings, RegularityDgp,
};
use crt_core::statistics::LambdaPolicy;

fn code(v: u16) -> f64 {
    v as f64 - 0.5
}

/// Sample variance and its standard error.
fn var_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (s2, ((m4 - s2 * s2) / n).sqrt())
}

#[test]
fn empirical_component_variances_match_closed_form() {
    let dgp = ForcedChoiceDgp::default().with_interactions(0.1, 12).with_n(1_000_000);
    let d = generate(&dgp, 5, 0).unwrap();
    let ds = &d.data;
    let inter: Vec<f64> = (0..ds.n)
        .map(|r| {
            let (xl, xr) = (code(ds.left[0][r]), code(ds.right[0][r]));
            let w: f64 = d
                .within
                .iter()
                .map(|&k| xl * code(ds.left[k + 1][r]) - xr * code(ds.right[k + 1][r]))
                .sum();
            let b: f64 = d
                .between
                .iter()
                .map(|&k| xl * code(ds.right[k + 1][r]) - xr * code(ds.left[k + 1][r]))
                .sum();
            2.0 * dgp.within_size * w - 2.0 * dgp.between_size * b
        })
        .collect();
    let rest: Vec<f64> = d.eta.iter().zip(&inter).map(|(e, i)| e - i).collect();
    let truth = variance_decomposition(&dgp);
    let (vi, sei) = var_and_se(&inter);
    let (vr, ser) = var_and_se(&rest);
    assert!((vi - truth.interaction).abs() < 4.0 * sei, "{vi} vs {}", truth.interaction);
    assert!((vr - truth.remaining).abs() < 4.0 * ser, "{vr} vs {}", truth.remaining);
}

#[test]
fn null_response_is_a_fair_coin() {
    let dgp = ForcedChoiceDgp {
        beta_z: vec![0.0; 10],
        n_zz: 0,
        ..ForcedChoiceDgp::default().null().with_n(100_000)
    };
    let d = generate(&dgp, 9, 0).unwrap();
    let mean = d.data.y.iter().map(|&v| v as f64).sum::<f64>() / 1e5;
    assert!((mean - 0.5).abs() < 4.0 * (0.25f64 / 1e5).sqrt());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn amce_matches_cell_average_of_the_logit_model() {
    let dgp = ForcedChoiceDgp {
        beta_z: vec![0.0; 10],
        n_zz: 0,
        ..ForcedChoiceDgp::default().with_n(200_000)
    };
    let d = generate(&dgp, 4, 0).unwrap();
    // Average over the four (X^L, X^R) cells of P(left chosen).
    let cells = [0.5f64, -0.5];
    let p_left = |xl: f64| cells.iter().map(|&xr| sigmoid(dgp.beta_x * (xl - xr))).sum::<f64>() / 2.0;
    let truth = p_left(0.5) - p_left(-0.5);
    let est = &amce_test(&d.data, 0, &[], ClusterUnit::Task).unwrap().estimates[0];
    assert!((est.estimate - truth).abs() < 4.0 * est.se, "{} vs {truth}", est.estimate);
}

#[test]
fn grids_carry_the_requested_designs() {
    let g = size_grid(&[0.0, 0.05], 6, 500, false);
    assert_eq!(g[1].dgp.n_within, 3);
    assert_eq!(g[1].dgp.within_size, 0.05);
    assert!((variance_decomposition(&g[1].dgp).fraction - 0.0075 / 0.07125).abs() < 1e-12);
    let h = size_grid(&[0.05], 6, 500, true);
    assert!(h[0].dgp.within_size > h[0].dgp.between_size);
    let c = count_grid(&[0, 12], 0.06, 500, false);
    assert_eq!((c[1].dgp.n_within, c[1].dgp.n_between), (6, 6));
    assert_ne!(g[0].id, h[0].id);
}

#[test]
fn power_study_is_reproducible_and_complete() {
    let grid = size_grid(&[0.0, 0.1], 12, 300, false);
    let methods = [Method::CrtHiernet, Method::CrtDicrt, Method::Amce];
    let settings = PowerSettings {
        reps: 3,
        b: 9,
        lambda: LambdaPolicy::Fixed(0.02),
        ..Default::default()
    };
    let a = power_study(&grid, &methods, &settings).unwrap();
    let b = power_study(&grid, &methods, &settings).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.len(), 2 * 3 * 3);
    assert_eq!(a.summary.len(), 6);
    for r in &a.records {
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        if r.method != Method::Amce {
            assert_eq!((r.p_value * 10.0).round(), r.p_value * 10.0);
        }
    }
    let mut out = Vec::new();
    a.write_records(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("grid_id,method,rep,p_value,"));
    assert_eq!(text.lines().count(), 19);
    let mut out = Vec::new();
    a.write_summary(&mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("crt_dicrt"));
    assert!(power_study(&grid, &[], &settings).is_err());
}

#[test]
fn inflation_design_layout() {
    let (x, y, target) = inflation_design(3, 400, 4, 1, 0);
    assert_eq!(x.ncols(), 1 + 4 * 3 + 6 * 9);
    assert_eq!(target.len(), 3 + 3 * 9);
    assert_eq!(y.len(), 400);
    // Each row has an intercept, at most one dummy per factor and one
    // product per pair.
    for r in 0..400 {
        assert_eq!(x[(r, 0)], 1.0);
        assert!(x.row(r).iter().sum::<f64>() <= 1.0 + 4.0 + 6.0);
    }
}

#[test]
fn inflation_study_shape() {
    let s = InflationSettings {
        num_z: vec![3, 5],
        n: 1000,
        reps: 10,
        ..Default::default()
    };
    let t = logistic_inflation_study(&s).unwrap();
    assert_eq!(t.summary.len(), 2);
    assert_eq!(t.histogram.len(), 20);
    let row = t.row(3).unwrap();
    assert_eq!(row.reps + row.failed_fits, 10);
    let counted: usize = t.histogram.iter().filter(|h| h.num_z == 3).map(|h| h.count).sum();
    assert_eq!(counted, row.reps);
}

#[test]
fn regularity_data_shape_and_determinism() {
    let dgp = RegularityDgp::default().with_size(50, 3).with_planted(Planted::Carryover(0.5));
    let a = generate_regularity(&dgp, 2, 0).unwrap();
    let b = generate_regularity(&dgp, 2, 0).unwrap();
    assert_eq!((a.n, a.j, a.rows()), (50, 3, 150));
    assert_eq!(a.y, b.y);
    assert_eq!(a.left, b.left);
    assert_eq!(&a.task_order[..4], &[1, 2, 3, 1]);
    assert_ne!(generate_regularity(&dgp, 2, 1).unwrap().y, a.y);
    let one = RegularityDgp {
        beta: vec![0.3],
        ..RegularityDgp::default()
    };
    assert!(generate_regularity(&one, 2, 0).is_err());
}

#[test]
fn planted_order_effect_moves_the_left_choice_rate() {
    let dgp = RegularityDgp::default().with_size(20_000, 1).with_planted(Planted::Order(1.0));
    let d = generate_regularity(&dgp, 3, 0).unwrap();
    // P(Y = 1 | left A1 = hi) - P(Y = 1 | left A1 = lo) rises with the
    // planted term on top of the main effect.
    let rate = |lv: u16| {
        let rows: Vec<usize> = (0..d.rows()).filter(|&r| d.left[0][r] == lv).collect();
        rows.iter().map(|&r| d.y[r] as f64).sum::<f64>() / rows.len() as f64
    };
    let null = generate_regularity(&RegularityDgp::default().with_size(20_000, 1), 3, 0).unwrap();
    let rate0 = |lv: u16| {
        let rows: Vec<usize> = (0..null.rows()).filter(|&r| null.left[0][r] == lv).collect();
        rows.iter().map(|&r| null.y[r] as f64).sum::<f64>() / rows.len() as f64
    };
    assert!(rate(1) - rate(0) > rate0(1) - rate0(0) + 0.1);
}
