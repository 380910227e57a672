//! The CRT loop: observed statistic, `B` resampled statistics, exact p-value.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{apply_coarsening, CoarseningSpec, ConjointDataset};
use crate::error::{CrtError, Result};
use crate::inference::{ks_uniform, ks_uniform_upper};
use crate::randomization::{
    sample_carryover, sample_fatigue_permutation, sample_order_swap, CoarsenedSampler, RandomizationScheme,
    ResampleKind, ResamplePlan, XSampler,
};
use crate::rng::{stream_seed, Tag, AUX_DRAW};
use crate::statistics::{LambdaPolicy, PreparedStatistic, StatisticKind, StatisticSpec};

/// Exact p-value `(1 + #{T_b ≥ T_obs}) / (B + 1)` as numerator and denominator.
pub fn p_value_rational(observed: f64, resampled: &[f64]) -> (u64, u64) {
    let ge = resampled.iter().filter(|&&t| t >= observed).count() as u64;
    (1 + ge, resampled.len() as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrtResult {
    pub observed_statistic: f64,
    pub resampled_statistics: Vec<f64>,
    /// Exact p-value as `"a/b"`.
    pub p_value: String,
    pub p_numerator: u64,
    pub p_denominator: u64,
    pub p_value_float: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub master_seed: u64,
    pub resample_kind: ResampleKind,
    pub statistic: StatisticSpec,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

impl CrtResult {
    fn new(
        observed: f64,
        resampled: Vec<f64>,
        plan: &ResamplePlan,
        spec: &StatisticSpec,
        warnings: Vec<String>,
        wall_time: f64,
    ) -> Self {
        let (a, b) = p_value_rational(observed, &resampled);
        CrtResult {
            observed_statistic: observed,
            resampled_statistics: resampled,
            p_value: format!("{a}/{b}"),
            p_numerator: a,
            p_denominator: b,
            p_value_float: a as f64 / b as f64,
            b: plan.b,
            master_seed: plan.master_seed,
            resample_kind: plan.kind,
            statistic: spec.clone(),
            warnings,
            wall_time,
        }
    }

    /// Pretty JSON with a trailing newline. `wall_time` is the only field
    /// that varies between identical runs; `with_wall_time = false` zeroes
    /// it.
    pub fn to_json(&self, with_wall_time: bool) -> Result<String> {
        let mut r = self.clone();
        if !with_wall_time {
            r.wall_time = 0.0;
        }
        let mut s = serde_json::to_string_pretty(&r).map_err(|e| CrtError::numerical(format!("cannot encode result: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// Recomputes the p-value from the stored statistics.
    pub fn recomputed_p_value(&self) -> (u64, u64) {
        p_value_rational(self.observed_statistic, &self.resampled_statistics)
    }
}

/// Draws resamples of one dataset under one null.
enum Resampler<'a> {
    Main(XSampler),
    Coarsened(CoarsenedSampler),
    Order,
    Carryover(&'a RandomizationScheme),
    Fatigue,
}

impl Resampler<'_> {
    fn draw(&self, ds: &ConjointDataset, b: u64, seed: u64) -> Result<ConjointDataset> {
        Ok(match self {
            Resampler::Main(s) => s.draw(ds, b, seed),
            Resampler::Coarsened(s) => s.draw(ds, b, seed),
            Resampler::Order => sample_order_swap(ds, b, seed).1,
            Resampler::Carryover(scheme) => sample_carryover(ds, scheme, b, seed)?,
            Resampler::Fatigue => sample_fatigue_permutation(ds, b, seed),
        })
    }
}

/// Execution settings that do not affect the result.
#[derive(Clone, Copy, Debug, Default)]
pub struct EngineOptions {
    /// Parallel width; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// The observed data as the statistic sees it, plus the resampler.
struct Setup<'a> {
    data: ConjointDataset,
    resampler: Resampler<'a>,
    warnings: Vec<String>,
}

fn setup<'a>(
    ds: &ConjointDataset,
    scheme: &'a RandomizationScheme,
    plan: &ResamplePlan,
    target: &[String],
    coarsening: Option<&CoarseningSpec>,
) -> Result<Setup<'a>> {
    if plan.b == 0 {
        return Err(CrtError::validation("B must be at least 1"));
    }
    let mut warnings = Vec::new();
    let (data, resampler) = match plan.kind {
        ResampleKind::Main => {
            let xs = ds.schema.resolve_profile(target)?;
            let sampler = XSampler::new(ds, scheme, &xs)?;
            (ds.clone(), Resampler::Main(sampler))
        }
        ResampleKind::Coarsened => {
            let c = coarsening.ok_or_else(|| CrtError::validation("coarsened resampling needs a coarsening"))?;
            let coarse = apply_coarsening(ds, c)?;
            let sampler = CoarsenedSampler::new(&coarse, &ds.schema, scheme, c)?;
            (coarse, Resampler::Coarsened(sampler))
        }
        ResampleKind::Order => (ds.clone(), Resampler::Order),
        ResampleKind::Carryover => {
            if ds.j < 2 {
                return Err(CrtError::validation("carryover test requires J ≥ 2"));
            }
            scheme.validate_against(&ds.schema)?;
            let data = if ds.j % 2 == 1 {
                let msg = format!("odd number of tasks (J = {}); dropping final task", ds.j);
                log::warn!("{msg}");
                warnings.push(msg);
                ds.truncate_tasks(ds.j - 1)
            } else {
                ds.clone()
            };
            (data, Resampler::Carryover(scheme))
        }
        ResampleKind::Fatigue => {
            if ds.j < 2 {
                return Err(CrtError::validation("fatigue test requires J ≥ 2"));
            }
            (ds.clone(), Resampler::Fatigue)
        }
    };
    Ok(Setup {
        data,
        resampler,
        warnings,
    })
}

fn check_finite(t: Result<f64>, b: Option<usize>) -> Result<f64> {
    let t = t?;
    if t.is_nan() {
        let at = b.map_or("observed data".to_string(), |b| format!("resample {b}"));
        return Err(CrtError::numerical(format!("statistic is NaN on {at}; run aborted")));
    }
    Ok(t)
}

/// Runs the CRT with the global thread pool.
pub fn run_crt(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    plan: &ResamplePlan,
    spec: &StatisticSpec,
) -> Result<CrtResult> {
    run_crt_with(ds, scheme, plan, spec, EngineOptions::default())
}

/// Runs the CRT. Resample `b` is a pure function of `(master_seed, b)` so
/// the result does not depend on `opts.workers`.
pub fn run_crt_with(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    plan: &ResamplePlan,
    spec: &StatisticSpec,
    opts: EngineOptions,
) -> Result<CrtResult> {
    let start = Instant::now();
    if !spec.kind.compatible_with(plan.kind) {
        return Err(CrtError::validation(format!(
            "{:?} resampling does not match the {:?} statistic",
            plan.kind, spec.kind
        )));
    }
    let st = setup(ds, scheme, plan, &spec.target, spec.coarsening.as_ref())?;
    let seed = plan.master_seed;
    let aux = if spec.options.lambda == LambdaPolicy::CvOnNullDraw && spec.kind != StatisticKind::Dicrt {
        Some(st.resampler.draw(&st.data, AUX_DRAW, seed)?)
    } else {
        None
    };
    let stat = PreparedStatistic::new(spec, &st.data, aux.as_ref(), seed)?;
    let (observed, resampled) = resample_loop(&st, plan, opts, |d| stat.evaluate(d))?;
    Ok(CrtResult::new(
        observed,
        resampled,
        plan,
        spec,
        st.warnings,
        start.elapsed().as_secs_f64(),
    ))
}

/// Observed and resampled values of an arbitrary statistic under the null
/// named by `plan`. `target` lists the factors of interest for the main
/// null; `coarsening` is required for the coarsened null.
pub fn run_crt_custom<F>(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    plan: &ResamplePlan,
    target: &[String],
    coarsening: Option<&CoarseningSpec>,
    opts: EngineOptions,
    statistic: F,
) -> Result<(f64, Vec<f64>, (u64, u64))>
where
    F: Fn(&ConjointDataset) -> Result<f64> + Sync,
{
    let st = setup(ds, scheme, plan, target, coarsening)?;
    let (obs, res) = resample_loop(&st, plan, opts, statistic)?;
    let p = p_value_rational(obs, &res);
    Ok((obs, res, p))
}

fn resample_loop<F>(st: &Setup<'_>, plan: &ResamplePlan, opts: EngineOptions, statistic: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&ConjointDataset) -> Result<f64> + Sync,
{
    let seed = plan.master_seed;
    let observed = check_finite(statistic(&st.data), None)?;
    let body = || -> Result<Vec<f64>> {
        (0..plan.b)
            .into_par_iter()
            .map(|b| {
                let d = st.resampler.draw(&st.data, b as u64, seed)?;
                check_finite(statistic(&d), Some(b))
            })
            .collect()
    };
    let resampled = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CrtError::validation(format!("cannot start worker pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    Ok((observed, resampled))
}

/// One row of an interaction screen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub variable: String,
    pub observed_statistic: f64,
    pub p_value: String,
    pub p_numerator: u64,
    pub p_denominator: u64,
    pub p_value_float: f64,
}

/// Screens each of `variables` (all other profile factors and covariates
/// when empty) for an interaction with the target of `template`, which must
/// be an interaction-screen statistic. Every variable is tested with the
/// same resamples.
pub fn run_screen(
    ds: &ConjointDataset,
    scheme: &RandomizationScheme,
    plan: &ResamplePlan,
    template: &StatisticSpec,
    variables: &[String],
    opts: EngineOptions,
) -> Result<Vec<ScreenRow>> {
    if template.kind != StatisticKind::InteractionScreen {
        return Err(CrtError::validation("screening needs the interaction_screen statistic"));
    }
    let target = ds.schema.resolve_profile(&template.target)?;
    let variables: Vec<String> = if variables.is_empty() {
        let profile = ds.schema.profile.iter().enumerate().filter(|(f, _)| !target.contains(f)).map(|(_, s)| s.name.clone());
        profile.chain(ds.schema.covariates.iter().map(|c| c.name.clone())).collect()
    } else {
        variables.to_vec()
    };
    variables
        .iter()
        .map(|v| {
            let mut spec = template.clone();
            spec.options.screen_variable = Some(v.clone());
            let r = run_crt_with(ds, scheme, plan, &spec, opts)?;
            Ok(ScreenRow {
                variable: v.clone(),
                observed_statistic: r.observed_statistic,
                p_value: r.p_value,
                p_numerator: r.p_numerator,
                p_denominator: r.p_denominator,
                p_value_float: r.p_value_float,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidityReport {
    pub p_values: Vec<f64>,
    /// `(α, fraction of p-values ≤ α)`.
    pub rejection: Vec<(f64, f64)>,
    /// One-sided KS test against p-values that are too small.
    pub ks_upper_p: f64,
    pub ks_two_sided_p: f64,
}

impl ValidityReport {
    pub fn from_p_values(p_values: Vec<f64>, alphas: &[f64]) -> Self {
        let n = p_values.len().max(1) as f64;
        let rejection = alphas
            .iter()
            .map(|&a| (a, p_values.iter().filter(|&&p| p <= a).count() as f64 / n))
            .collect();
        ValidityReport {
            ks_upper_p: ks_uniform_upper(&p_values).1,
            ks_two_sided_p: ks_uniform(&p_values).1,
            p_values,
            rejection,
        }
    }

    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.rejection.iter().find(|(a, _)| *a == alpha).map(|(_, r)| *r)
    }
}

/// Repeats the CRT on `reps` datasets drawn under the null. `generate(rep)`
/// returns the data and its randomization scheme; rep `r` runs with master
/// seed derived from `(plan.master_seed, r)`.
pub fn run_validity_suite<G>(
    generate: G,
    plan: &ResamplePlan,
    spec: &StatisticSpec,
    reps: usize,
    alphas: &[f64],
) -> Result<ValidityReport>
where
    G: Fn(usize) -> Result<(ConjointDataset, RandomizationScheme)> + Sync,
{
    let p: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (ds, scheme) = generate(rep)?;
            let rep_plan = ResamplePlan {
                master_seed: stream_seed(plan.master_seed, Tag::Auxiliary, rep as u64, 0),
                ..plan.clone()
            };
            Ok(run_crt(&ds, &scheme, &rep_plan, spec)?.p_value_float)
        })
        .collect::<Result<_>>()?;
    Ok(ValidityReport::from_p_values(p, alphas))
}
