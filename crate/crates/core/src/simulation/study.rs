//! Power and p-value inflation studies.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, variance_decomposition, ForcedChoiceDgp};
use crate::engine::run_crt;
use crate::error::{CrtError, Result};
use crate::glm::{amce_test, fit_logistic, lr_f, ClusterUnit};
use crate::randomization::{RandomizationScheme, ResampleKind, ResamplePlan};
use crate::rng::{stream, stream_seed, Tag};
use crate::statistics::{LambdaPolicy, StatisticKind, StatisticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CrtHiernet,
    CrtDicrt,
    CrtHiernetUnconstrained,
    Amce,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::CrtHiernet => "crt_hiernet",
            Method::CrtDicrt => "crt_dicrt",
            Method::CrtHiernetUnconstrained => "crt_hiernet_unconstrained",
            Method::Amce => "amce",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridPoint {
    pub id: String,
    /// Abscissa of the power curve (interaction size or count).
    pub x: f64,
    pub dgp: ForcedChoiceDgp,
}

/// Grid over interaction size with `n_total` interactions split evenly
/// between within- and between-profile terms.
pub fn size_grid(sizes: &[f64], n_total: usize, n: usize, heterogeneous: bool) -> Vec<GridPoint> {
    sizes
        .iter()
        .map(|&s| {
            let base = ForcedChoiceDgp::default().with_n(n);
            let dgp = if heterogeneous {
                base.with_heterogeneous(s, n_total)
            } else {
                base.with_interactions(s, n_total)
            };
            let tag = if heterogeneous { "hetero" } else { "size" };
            GridPoint {
                id: format!("{tag}={s}"),
                x: s,
                dgp,
            }
        })
        .collect()
}

/// Grid over the number of interactions at a fixed size.
pub fn count_grid(counts: &[usize], size: f64, n: usize, heterogeneous: bool) -> Vec<GridPoint> {
    counts
        .iter()
        .map(|&c| {
            let base = ForcedChoiceDgp::default().with_n(n);
            let dgp = if heterogeneous {
                base.with_heterogeneous(size, c)
            } else {
                base.with_interactions(size, c)
            };
            let tag = if heterogeneous { "hetero_count" } else { "count" };
            GridPoint {
                id: format!("{tag}={c}"),
                x: c as f64,
                dgp,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSettings {
    pub reps: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// λ policy of the HierNet statistics.
    pub lambda: LambdaPolicy,
}

impl Default for PowerSettings {
    fn default() -> Self {
        PowerSettings {
            reps: 200,
            b: 100,
            alpha: 0.05,
            master_seed: 1,
            lambda: LambdaPolicy::CvOnNullDraw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub grid_id: String,
    pub method: Method,
    pub rep: usize,
    pub p_value: f64,
    /// Data for this rep is `generate(dgp, data_seed, rep)`.
    pub data_seed: u64,
    pub crt_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub grid_id: String,
    pub x: f64,
    pub interaction_fraction: f64,
    pub method: Method,
    pub reps: usize,
    pub power: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PowerTable {
    pub records: Vec<RepRecord>,
    pub summary: Vec<PowerSummary>,
}

impl PowerTable {
    pub fn power(&self, grid_id: &str, method: Method) -> Option<f64> {
        self.row(grid_id, method).map(|r| r.power)
    }

    pub fn row(&self, grid_id: &str, method: Method) -> Option<&PowerSummary> {
        self.summary.iter().find(|r| r.grid_id == grid_id && r.method == method)
    }

    pub fn p_values(&self, grid_id: &str, method: Method) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.grid_id == grid_id && r.method == method)
            .map(|r| r.p_value)
            .collect()
    }

    pub fn write_records<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.records)
    }

    pub fn write_summary<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.summary)
    }
}

fn write_csv<W: std::io::Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn method_p_value(
    method: Method,
    ds: &crate::design::ConjointDataset,
    scheme: &RandomizationScheme,
    settings: &PowerSettings,
    crt_seed: u64,
) -> Result<f64> {
    let x = ds.schema.profile_index("X").ok_or_else(|| CrtError::validation("simulated data has no X"))?;
    let kind = match method {
        Method::Amce => return Ok(amce_test(ds, x, &[], ClusterUnit::Task)?.p_value),
        Method::CrtHiernet => StatisticKind::HiernetMain,
        Method::CrtHiernetUnconstrained => StatisticKind::HiernetUnconstrained,
        Method::CrtDicrt => StatisticKind::Dicrt,
    };
    let mut spec = StatisticSpec::new(kind, &["X"]);
    // The d_I statistic cross-validates once, on (Y, Z), by construction.
    if kind != StatisticKind::Dicrt || matches!(settings.lambda, LambdaPolicy::Fixed(_)) {
        spec.options.lambda = settings.lambda;
    }
    let plan = ResamplePlan::new(ResampleKind::Main, settings.b, crt_seed)?;
    Ok(run_crt(ds, scheme, &plan, &spec)?.p_value_float)
}

/// Rejection rates of each method at each grid point. All methods see the
/// same datasets; interaction positions are redrawn for every rep.
pub fn power_study(grid: &[GridPoint], methods: &[Method], settings: &PowerSettings) -> Result<PowerTable> {
    if methods.is_empty() {
        return Err(CrtError::validation("power study needs at least one method"));
    }
    if grid.is_empty() || settings.reps == 0 {
        return Err(CrtError::validation("power study needs grid points and reps"));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..settings.reps).map(move |r| (g, r))).collect();
    let per_job: Vec<Vec<RepRecord>> = jobs
        .par_iter()
        .map(|&(g, rep)| {
            let point = &grid[g];
            let data_seed = stream_seed(settings.master_seed, Tag::Simulation, g as u64, 0);
            let crt_seed = stream_seed(settings.master_seed, Tag::Auxiliary, g as u64, rep as u64);
            let draw = generate(&point.dgp, data_seed, rep as u64)?;
            let scheme = RandomizationScheme::uniform(&draw.data.schema);
            methods
                .iter()
                .map(|&m| {
                    Ok(RepRecord {
                        grid_id: point.id.clone(),
                        method: m,
                        rep,
                        p_value: method_p_value(m, &draw.data, &scheme, settings, crt_seed)?,
                        data_seed,
                        crt_seed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<RepRecord> = per_job.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for point in grid {
        let fraction = variance_decomposition(&point.dgp).fraction;
        for &m in methods {
            let p: Vec<f64> = records
                .iter()
                .filter(|r| r.grid_id == point.id && r.method == m)
                .map(|r| r.p_value)
                .collect();
            let power = p.iter().filter(|&&v| v <= settings.alpha).count() as f64 / p.len() as f64;
            summary.push(PowerSummary {
                grid_id: point.id.clone(),
                x: point.x,
                interaction_fraction: fraction,
                method: m,
                reps: p.len(),
                power,
                se: (power * (1.0 - power) / p.len() as f64).sqrt(),
            });
        }
    }
    Ok(PowerTable { records, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationSettings {
    pub num_z: Vec<usize>,
    pub n: usize,
    pub reps: usize,
    pub levels: usize,
    pub alpha: f64,
    pub bins: usize,
    pub master_seed: u64,
}

impl Default for InflationSettings {
    fn default() -> Self {
        InflationSettings {
            num_z: vec![3, 5, 10, 11, 12, 13],
            n: 5000,
            reps: 200,
            levels: 4,
            alpha: 0.05,
            bins: 10,
            master_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationRecord {
    pub num_z: usize,
    pub rep: usize,
    /// Deviance-based F-test of the target's main effects and interactions.
    pub p_value: f64,
    /// Wald F-test of the same coefficients.
    pub p_wald: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationSummary {
    pub num_z: usize,
    pub n_coef: usize,
    pub reps: usize,
    pub failed_fits: usize,
    pub rejection: f64,
    pub se: f64,
    pub rejection_wald: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub num_z: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InflationTable {
    pub records: Vec<InflationRecord>,
    pub summary: Vec<InflationSummary>,
    pub histogram: Vec<HistogramBin>,
}

impl InflationTable {
    pub fn row(&self, num_z: usize) -> Option<&InflationSummary> {
        self.summary.iter().find(|r| r.num_z == num_z)
    }

    pub fn write_records<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.records)
    }

    pub fn write_summary<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.summary)
    }

    pub fn write_histogram<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.histogram)
    }
}

/// Single-profile null data: `num_z + 1` independent uniform factors with
/// `levels` levels each and a fair-coin response. Columns are an intercept,
/// the treatment-coded main effects and every pairwise product. Returns the
/// design, the response and the columns involving the first factor.
pub fn inflation_design(num_z: usize, n: usize, levels: usize, seed: u64, rep: u64) -> (DMatrix<f64>, Vec<f64>, Vec<usize>) {
    let nf = num_z + 1;
    let d = levels - 1;
    let mut rng = stream(seed, Tag::Simulation, num_z as u64, rep);
    let values: Vec<Vec<usize>> = (0..n).map(|_| (0..nf).map(|_| rng.random_range(0..levels)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2u8) as f64).collect();
    let pairs: Vec<(usize, usize)> = (0..nf).flat_map(|a| ((a + 1)..nf).map(move |b| (a, b))).collect();
    let p = 1 + nf * d + pairs.len() * d * d;
    let mut x = DMatrix::zeros(n, p);
    let main_col = |f: usize, k: usize| 1 + f * d + (k - 1);
    let pair_col = |pi: usize, ka: usize, kb: usize| 1 + nf * d + pi * d * d + (ka - 1) * d + (kb - 1);
    for (r, v) in values.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for f in 0..nf {
            if v[f] > 0 {
                x[(r, main_col(f, v[f]))] = 1.0;
            }
        }
        for (pi, &(a, b)) in pairs.iter().enumerate() {
            if v[a] > 0 && v[b] > 0 {
                x[(r, pair_col(pi, v[a], v[b]))] = 1.0;
            }
        }
    }
    let mut target: Vec<usize> = (1..levels).map(|k| main_col(0, k)).collect();
    for (pi, &(a, _)) in pairs.iter().enumerate() {
        if a == 0 {
            for ka in 1..levels {
                for kb in 1..levels {
                    target.push(pair_col(pi, ka, kb));
                }
            }
        }
    }
    (x, y, target)
}

fn drop_columns(x: &DMatrix<f64>, drop: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..x.ncols()).filter(|c| !drop.contains(c)).collect();
    x.select_columns(&keep)
}

/// Type-I error of the logistic F-test of the target factor when every
/// main effect and pairwise interaction is modeled. Reps whose fits fail
/// (separation) are counted and left out.
pub fn logistic_inflation_study(settings: &InflationSettings) -> Result<InflationTable> {
    if settings.levels < 2 || settings.reps == 0 || settings.bins == 0 {
        return Err(CrtError::validation("inflation study needs ≥ 2 levels, reps and bins"));
    }
    let mut table = InflationTable::default();
    for &nz in &settings.num_z {
        let fits: Vec<Option<InflationRecord>> = (0..settings.reps)
            .into_par_iter()
            .map(|rep| {
                let (x, y, target) = inflation_design(nz, settings.n, settings.levels, settings.master_seed, rep as u64);
                let full = match fit_logistic(&x, &y) {
                    Ok(f) => f,
                    Err(CrtError::Separation) | Err(CrtError::Numerical(_)) | Err(CrtError::RankDeficient(_)) => {
                        return Ok(None)
                    }
                    Err(e) => return Err(e),
                };
                let restricted = match fit_logistic(&drop_columns(&x, &target), &y) {
                    Ok(f) => f,
                    Err(CrtError::Separation) | Err(CrtError::Numerical(_)) | Err(CrtError::RankDeficient(_)) => {
                        return Ok(None)
                    }
                    Err(e) => return Err(e),
                };
                Ok(Some(InflationRecord {
                    num_z: nz,
                    rep,
                    p_value: lr_f(&full, &restricted)?.p,
                    p_wald: full.wald_f(&target)?.p,
                }))
            })
            .collect::<Result<_>>()?;
        let failed = fits.iter().filter(|f| f.is_none()).count();
        let recs: Vec<InflationRecord> = fits.into_iter().flatten().collect();
        let m = recs.len().max(1) as f64;
        let rate = |f: &dyn Fn(&InflationRecord) -> f64| recs.iter().filter(|r| f(r) <= settings.alpha).count() as f64 / m;
        let rejection = rate(&|r| r.p_value);
        let nf = nz + 1;
        let d = settings.levels - 1;
        table.summary.push(InflationSummary {
            num_z: nz,
            n_coef: 1 + nf * d + nf * (nf - 1) / 2 * d * d,
            reps: recs.len(),
            failed_fits: failed,
            rejection,
            se: (rejection * (1.0 - rejection) / m).sqrt(),
            rejection_wald: rate(&|r| r.p_wald),
        });
        let bins = settings.bins;
        for b in 0..bins {
            let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            let count = recs
                .iter()
                .filter(|r| r.p_value >= lo && (r.p_value < hi || (b == bins - 1 && r.p_value <= hi)))
                .count();
            table.histogram.push(HistogramBin {
                num_z: nz,
                lower: lo,
                upper: hi,
                count,
            });
        }
        table.records.extend(recs);
    }
    Ok(table)
}
