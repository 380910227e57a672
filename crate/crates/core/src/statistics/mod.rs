//! CRT test statistics and their per-dataset evaluation.
//!
//! [`StatisticSpec`] says what to compute; [`PreparedStatistic`] holds what
//! can be shared by the observed data and every resample (cached Gram
//! blocks, a fixed λ, the distillation stage) and evaluates one dataset at a
//! time. Evaluation is a pure function of the dataset.

mod coef;
pub mod lasso;

use serde::{Deserialize, Serialize};

pub use coef::{demeaned_ss, t_carryover, t_fatigue, t_hiernet, t_hiernet_respondent, t_hiernet_unconstrained, t_order, HierNetTarget};

use crate::design::{CoarseningSpec, ConjointDataset};
use crate::encoding::{
    build_carryover_augmented, build_design_with, build_symmetry_augmented, response, ColumnKey, DesignMatrix,
    DesignOptions, ExtraTerm, Slot,
};
use crate::error::{CrtError, Result};
use crate::hiernet::{self, cross_validate, HierNetConfig, HierNetFit, HierNetSolver, Mode};
use crate::randomization::ResampleKind;
use lasso::{DistilledStage, LassoTuning, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    #[serde(alias = "hiernet")]
    HiernetMain,
    /// HierNet on the original rows without the left/right symmetry.
    HiernetUnconstrained,
    HiernetRespondent,
    HiernetCoarsened,
    Order,
    Carryover,
    Fatigue,
    Dicrt,
    LassoMain,
    InteractionScreen,
}

impl StatisticKind {
    /// The resampling scheme whose null this statistic is paired with.
    pub fn resample_kind(self) -> ResampleKind {
        match self {
            StatisticKind::HiernetCoarsened => ResampleKind::Coarsened,
            StatisticKind::Order => ResampleKind::Order,
            StatisticKind::Carryover => ResampleKind::Carryover,
            StatisticKind::Fatigue => ResampleKind::Fatigue,
            _ => ResampleKind::Main,
        }
    }

    pub fn compatible_with(self, plan: ResampleKind) -> bool {
        match self {
            // Restricting the levels of a main statistic is allowed under
            // either the plain or the coarsened null.
            StatisticKind::LassoMain => matches!(plan, ResampleKind::Main | ResampleKind::Coarsened),
            k => k.resample_kind() == plan,
        }
    }

    fn uses_hiernet(self) -> bool {
        !matches!(self, StatisticKind::Dicrt | StatisticKind::LassoMain | StatisticKind::InteractionScreen)
    }
}

/// How the regularization strength is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Cross-validate on every dataset, observed and resampled alike.
    #[default]
    CvPerResample,
    /// Cross-validate once on an auxiliary draw from the null and reuse λ.
    CvOnNullDraw,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticOptions {
    /// Number of factors kept by the d_I distillation stage.
    #[serde(rename = "I")]
    pub i: usize,
    /// Factor pairs entered as extra main-effect columns.
    pub extra: Vec<[String; 2]>,
    /// Variable whose interactions with the target are screened.
    pub screen_variable: Option<String>,
    /// Include respondent covariates in the order statistic's fit.
    pub include_v: bool,
    pub lambda: LambdaPolicy,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StatisticOptions {
    fn default() -> Self {
        let h = HierNetConfig::default();
        StatisticOptions {
            i: 2,
            extra: Vec::new(),
            screen_variable: None,
            include_v: false,
            lambda: LambdaPolicy::default(),
            n_lambda: h.n_lambda,
            lambda_min_ratio: h.lambda_min_ratio,
            cv_folds: h.cv_folds,
            tol: h.tol,
            max_iter: h.max_iter,
        }
    }
}

impl StatisticOptions {
    pub fn hiernet_config(&self) -> HierNetConfig {
        HierNetConfig {
            lambda_grid: Vec::new(),
            n_lambda: self.n_lambda,
            lambda_min_ratio: self.lambda_min_ratio,
            tol: self.tol,
            max_iter: self.max_iter,
            cv_folds: self.cv_folds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    #[serde(rename = "statistic")]
    pub kind: StatisticKind,
    /// Factors of interest; empty for the order, carryover and fatigue tests.
    #[serde(default)]
    pub target: Vec<String>,
    #[serde(default)]
    pub options: StatisticOptions,
    /// Level grouping for the coarsened statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarsening: Option<CoarseningSpec>,
}

impl StatisticSpec {
    pub fn new(kind: StatisticKind, target: &[&str]) -> Self {
        StatisticSpec {
            kind,
            target: target.iter().map(|s| s.to_string()).collect(),
            options: StatisticOptions::default(),
            coarsening: None,
        }
    }

    pub fn with_lambda(mut self, policy: LambdaPolicy) -> Self {
        self.options.lambda = policy;
        self
    }

    /// Checks the spec against the schema of the data it will see (the
    /// coarsened schema for coarsened statistics).
    pub fn validate(&self, ds: &ConjointDataset) -> Result<()> {
        let o = &self.options;
        if o.cv_folds < 2 || o.n_lambda == 0 || !(o.lambda_min_ratio > 0.0 && o.lambda_min_ratio < 1.0) {
            return Err(CrtError::validation("invalid λ search settings"));
        }
        if let LambdaPolicy::Fixed(l) = o.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CrtError::validation("fixed λ must be finite and nonnegative"));
            }
        }
        self.resolve(ds).map(|_| ())
    }

    fn resolve(&self, ds: &ConjointDataset) -> Result<Resolved> {
        let schema = &ds.schema;
        let needs_target = !matches!(self.kind, StatisticKind::Order | StatisticKind::Carryover | StatisticKind::Fatigue);
        let targets: Vec<HierNetTarget> = if let Some(c) = &self.coarsening {
            let f = schema
                .profile_index(&c.name)
                .ok_or_else(|| CrtError::validation(format!("coarsened factor '{}' not in data", c.name)))?;
            vec![HierNetTarget {
                factor: f,
                levels: c.tested_levels(),
            }]
        } else {
            schema
                .resolve_profile(&self.target)?
                .into_iter()
                .map(|f| HierNetTarget {
                    factor: f,
                    levels: (0..schema.profile[f].n_levels()).collect(),
                })
                .collect()
        };
        if self.kind == StatisticKind::HiernetCoarsened && self.coarsening.is_none() {
            return Err(CrtError::validation("coarsened statistic needs a coarsening"));
        }
        if needs_target && targets.is_empty() {
            return Err(CrtError::validation("statistic needs a target factor"));
        }
        if matches!(self.kind, StatisticKind::Dicrt | StatisticKind::InteractionScreen) && targets.len() != 1 {
            return Err(CrtError::validation("this statistic takes exactly one target factor"));
        }
        let mut extra = Vec::new();
        for [a, b] in &self.options.extra {
            let ids = schema.resolve_profile(&[a.clone(), b.clone()])?;
            extra.push(ExtraTerm { a: ids[0], b: ids[1] });
        }
        let screen = match (&self.options.screen_variable, self.kind) {
            (Some(v), StatisticKind::InteractionScreen) => Some(resolve_screen(ds, v, targets[0].factor)?),
            (None, StatisticKind::InteractionScreen) => {
                return Err(CrtError::validation("interaction screen needs screen_variable"))
            }
            _ => None,
        };
        if self.kind == StatisticKind::HiernetRespondent && schema.covariates.is_empty() {
            return Err(CrtError::validation("respondent statistic needs respondent covariates"));
        }
        if self.kind == StatisticKind::Fatigue && ds.j < 2 {
            return Err(CrtError::validation("fatigue test requires J ≥ 2"));
        }
        if self.kind == StatisticKind::Carryover && ds.j < 2 {
            return Err(CrtError::validation("carryover test requires J ≥ 2"));
        }
        if self.kind == StatisticKind::Dicrt && self.options.i > ds.n_profile() - 1 {
            return Err(CrtError::validation(format!(
                "I = {} exceeds the {} available conditioning factors",
                self.options.i,
                ds.n_profile() - 1
            )));
        }
        Ok(Resolved { targets, extra, screen })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenVariable {
    Profile(usize),
    Covariate(usize),
}

fn resolve_screen(ds: &ConjointDataset, name: &str, target: usize) -> Result<ScreenVariable> {
    if let Some(f) = ds.schema.profile_index(name) {
        if f == target {
            return Err(CrtError::validation("screen variable must differ from the target"));
        }
        return Ok(ScreenVariable::Profile(f));
    }
    ds.schema
        .covariate_index(name)
        .map(ScreenVariable::Covariate)
        .ok_or_else(|| CrtError::validation(format!("unknown screen variable '{name}'")))
}

#[derive(Clone, Debug)]
struct Resolved {
    targets: Vec<HierNetTarget>,
    extra: Vec<ExtraTerm>,
    screen: Option<ScreenVariable>,
}

enum Lambda {
    Fixed(f64),
    PerDataset,
}

struct HierNetEval {
    solver: Option<HierNetSolver>,
    lambda: Lambda,
}

enum Engine {
    HierNet(HierNetEval),
    Lasso { terms_fixed: Option<Vec<Term>>, lambda: Lambda },
    Dicrt { stage: DistilledStage, terms: Vec<Term> },
}

/// A statistic bound to the data it will be evaluated on.
pub struct PreparedStatistic {
    spec: StatisticSpec,
    resolved: Resolved,
    cfg: HierNetConfig,
    tuning: LassoTuning,
    engine: Engine,
}

impl PreparedStatistic {
    /// `ds` is the observed data. `aux` is an independent draw from the null
    /// resampling distribution, required by [`LambdaPolicy::CvOnNullDraw`].
    /// `seed` fixes the cross-validation folds.
    pub fn new(spec: &StatisticSpec, ds: &ConjointDataset, aux: Option<&ConjointDataset>, seed: u64) -> Result<Self> {
        spec.validate(ds)?;
        let resolved = spec.resolve(ds)?;
        let cfg = spec.options.hiernet_config();
        let tuning = LassoTuning {
            n_lambda: spec.options.n_lambda,
            lambda_min_ratio: spec.options.lambda_min_ratio,
            folds: spec.options.cv_folds,
            seed,
        };
        let mut this = PreparedStatistic {
            spec: spec.clone(),
            resolved,
            cfg,
            tuning,
            engine: Engine::Lasso {
                terms_fixed: None,
                lambda: Lambda::PerDataset,
            },
        };
        let null_draw = || {
            aux.ok_or_else(|| CrtError::validation("λ chosen on a null draw needs an auxiliary dataset"))
        };
        this.engine = match spec.kind {
            k if k.uses_hiernet() => {
                let lambda = match spec.options.lambda {
                    LambdaPolicy::Fixed(l) => Lambda::Fixed(l),
                    LambdaPolicy::CvPerResample => Lambda::PerDataset,
                    LambdaPolicy::CvOnNullDraw => {
                        let (dm, y) = this.design(null_draw()?)?;
                        Lambda::Fixed(cross_validate(&dm, &y, &this.cfg, seed)?.lambda_selected)
                    }
                };
                let solver = if spec.kind == StatisticKind::Order {
                    // Responses change under the swap, so nothing is reusable.
                    None
                } else {
                    let (dm, y) = this.design(ds)?;
                    let varying = this.varying_columns(&dm);
                    let mode = if dm.symmetric { Mode::Symmetric } else { Mode::Full };
                    Some(HierNetSolver::new(&dm, &y, mode, &varying, &this.cfg)?)
                };
                Engine::HierNet(HierNetEval { solver, lambda })
            }
            StatisticKind::Dicrt => {
                let fixed = match spec.options.lambda {
                    LambdaPolicy::Fixed(l) => Some(l),
                    _ => None,
                };
                // The first stage sees only (Y, Z), which resampling leaves alone.
                let stage = lasso::distill(ds, this.resolved.targets[0].factor, spec.options.i, &this.tuning, fixed)?;
                let terms = stage.stage_two_terms(ds);
                Engine::Dicrt { stage, terms }
            }
            _ => {
                let lambda = match spec.options.lambda {
                    LambdaPolicy::Fixed(l) => Lambda::Fixed(l),
                    LambdaPolicy::CvPerResample => Lambda::PerDataset,
                    LambdaPolicy::CvOnNullDraw => {
                        let d = null_draw()?;
                        let terms = this.lasso_terms(d);
                        let x = lasso::antisym_design(d, &terms);
                        Lambda::Fixed(lasso::cv_lambda(d, &x, None, &this.tuning)?)
                    }
                };
                Engine::Lasso {
                    terms_fixed: Some(this.lasso_terms(ds)),
                    lambda,
                }
            }
        };
        Ok(this)
    }

    pub fn spec(&self) -> &StatisticSpec {
        &self.spec
    }

    /// First-stage selection of the d_I statistic, if any.
    pub fn distilled(&self) -> Option<&DistilledStage> {
        match &self.engine {
            Engine::Dicrt { stage, .. } => Some(stage),
            _ => None,
        }
    }

    fn design(&self, ds: &ConjointDataset) -> Result<(DesignMatrix, Vec<f64>)> {
        let opts = |include_v: bool, include_task_order: bool| DesignOptions {
            include_v,
            include_task_order,
            extra: self.resolved.extra.clone(),
        };
        match self.spec.kind {
            StatisticKind::HiernetMain | StatisticKind::HiernetCoarsened => build_symmetry_augmented(ds, &opts(false, false)),
            StatisticKind::HiernetRespondent => build_symmetry_augmented(ds, &opts(true, false)),
            StatisticKind::HiernetUnconstrained => Ok((build_design_with(ds, &opts(false, false))?, response(ds))),
            StatisticKind::Fatigue => build_symmetry_augmented(ds, &opts(false, true)),
            StatisticKind::Carryover => build_carryover_augmented(ds),
            StatisticKind::Order => Ok((build_design_with(ds, &opts(self.spec.options.include_v, false))?, response(ds))),
            _ => Err(CrtError::validation("not a HierNet statistic")),
        }
    }

    /// Design columns that change between resamples.
    fn varying_columns(&self, dm: &DesignMatrix) -> Vec<usize> {
        let targets: Vec<usize> = self.resolved.targets.iter().map(|t| t.factor).collect();
        let extra = &self.resolved.extra;
        let kind = self.spec.kind;
        (0..dm.cols())
            .filter(|&c| match &dm.columns[c].key {
                ColumnKey::Dummy { slot: Slot::Lag, .. } => kind == StatisticKind::Carryover,
                ColumnKey::TaskOrder => kind == StatisticKind::Fatigue,
                ColumnKey::Dummy { factor, .. } => targets.contains(factor),
                ColumnKey::Extra { term, .. } => targets.contains(&extra[*term].a) || targets.contains(&extra[*term].b),
                ColumnKey::Covariate { .. } => false,
            })
            .collect()
    }

    fn lasso_terms(&self, ds: &ConjointDataset) -> Vec<Term> {
        let t = self.resolved.targets[0].factor;
        let mut terms = lasso::main_terms(ds, 0..ds.n_profile());
        match self.resolved.screen {
            Some(ScreenVariable::Profile(f)) => terms.extend(lasso::pair_terms(ds, t, f)),
            Some(ScreenVariable::Covariate(m)) => terms.extend(lasso::respondent_terms(ds, t, m)),
            None => {}
        }
        terms
    }

    /// HierNet fit used by the statistic, for inspection.
    pub fn fit_hiernet(&self, ds: &ConjointDataset) -> Result<HierNetFit> {
        let Engine::HierNet(h) = &self.engine else {
            return Err(CrtError::validation("not a HierNet statistic"));
        };
        let (dm, y) = self.design(ds)?;
        let lambda = match h.lambda {
            Lambda::Fixed(l) => l,
            Lambda::PerDataset => cross_validate(&dm, &y, &self.cfg, self.tuning.seed)?.lambda_selected,
        };
        match &h.solver {
            Some(s) => s.fit(&dm, lambda, None),
            None => {
                let mode = if dm.symmetric { Mode::Symmetric } else { Mode::Full };
                hiernet::fit_with_mode(&dm, &y, lambda, &self.cfg, mode, false)
            }
        }
    }

    /// The statistic on one dataset (observed or resampled).
    pub fn evaluate(&self, ds: &ConjointDataset) -> Result<f64> {
        let r = &self.resolved;
        let value = match &self.engine {
            Engine::HierNet(_) => {
                let fit = self.fit_hiernet(ds)?;
                match self.spec.kind {
                    StatisticKind::HiernetMain | StatisticKind::HiernetCoarsened => t_hiernet(&fit, &r.targets, &r.extra)?,
                    StatisticKind::HiernetRespondent => t_hiernet_respondent(&fit, &r.targets, &r.extra)?,
                    StatisticKind::HiernetUnconstrained => t_hiernet_unconstrained(&fit, &r.targets, &r.extra)?,
                    StatisticKind::Order => t_order(&fit)?,
                    StatisticKind::Carryover => t_carryover(&fit)?,
                    StatisticKind::Fatigue => t_fatigue(&fit)?,
                    _ => unreachable!(),
                }
            }
            Engine::Dicrt { stage, terms } => {
                let fit = lasso::fit_terms(ds, terms, Some(&stage.offset), stage.lambda)?;
                lasso::t_dicrt(terms, &fit.coef)
            }
            Engine::Lasso { terms_fixed, lambda } => {
                let terms = terms_fixed.as_ref().expect("terms set at construction");
                let lam = match lambda {
                    Lambda::Fixed(l) => *l,
                    Lambda::PerDataset => {
                        let x = lasso::antisym_design(ds, terms);
                        lasso::cv_lambda(ds, &x, None, &self.tuning)?
                    }
                };
                let fit = lasso::fit_terms(ds, terms, None, lam)?;
                match self.spec.kind {
                    StatisticKind::LassoMain => r
                        .targets
                        .iter()
                        .map(|t| lasso::t_lasso_main(terms, &fit.coef, t.factor, &t.levels))
                        .sum::<Result<f64>>()?,
                    StatisticKind::InteractionScreen => lasso::t_interaction_screen(terms, &fit.coef),
                    _ => unreachable!(),
                }
            }
        };
        if !value.is_finite() {
            return Err(CrtError::Numerical(format!("{:?} statistic is not finite", self.spec.kind)));
        }
        Ok(value)
    }
}
