//! Small hypothesis tests used to judge Monte-Carlo output.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in KS input"));
    v
}

/// One-sided KS test of uniformity against p-values that are too small:
/// `D⁺ = sup (F_n(x) - x)`, exact tail by the Birnbaum-Tingey formula.
pub fn ks_uniform_upper(p: &[f64]) -> (f64, f64) {
    let v = sorted(p);
    let n = v.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (i + 1) as f64 / nf - x)
        .fold(0.0, f64::max);
    (d, smirnov_sf(n, d))
}

/// `P(D⁺_n ≥ d)` under uniformity.
pub fn smirnov_sf(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    if d >= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    let jmax = (nf * (1.0 - d)).floor() as usize;
    let ln_nf = ln_gamma(nf + 1.0);
    let mut s = 0.0;
    for j in 0..=jmax {
        let jf = j as f64;
        let a = 1.0 - d - jf / nf;
        let b = d + jf / nf;
        if a <= 0.0 {
            continue;
        }
        let ln_c = ln_nf - ln_gamma(jf + 1.0) - ln_gamma(nf - jf + 1.0);
        s += (ln_c + (nf - jf) * a.ln() + (jf - 1.0) * b.ln()).exp();
    }
    (d * s).clamp(0.0, 1.0)
}

/// Two-sided KS test of uniformity on [0, 1] (asymptotic with Stephens'
/// small-sample correction).
pub fn ks_uniform(p: &[f64]) -> (f64, f64) {
    let v = sorted(p);
    let n = v.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        d = d.max((i + 1) as f64 / nf - x).max(x - i as f64 / nf);
    }
    let sn = nf.sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    (d, kolmogorov_sf(lam))
}

pub fn kolmogorov_sf(lam: f64) -> f64 {
    if lam < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lam * lam).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sided p-value of the pooled two-proportion z-test.
pub fn two_proportion_z(x1: usize, n1: usize, x2: usize, n2: usize) -> f64 {
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pool = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pool * (1.0 - pool) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return if p1 == p2 { 1.0 } else { 0.0 };
    }
    let z = (p1 - p2) / se;
    let nd = Normal::standard();
    2.0 * (1.0 - nd.cdf(z.abs()))
}

/// Chi-square goodness of fit statistic against equal cell probabilities.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}
