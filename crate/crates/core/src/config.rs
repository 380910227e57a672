//! The experiment file: factors and their levels, randomization
//! probabilities, restriction rules, covariates, coarsenings and an optional
//! default test.
//!
//! ```toml
//! [factor.reason]
//! levels = ["work", "persecution"]
//!
//! [factor.origin]
//! levels = ["Mexico", "Germany", "Iraq"]
//! probs = [0.4, 0.4, 0.2]
//!
//! [[restriction]]
//! if_factor = "reason"
//! if_levels = ["persecution"]
//! then_factor = "origin"
//! allowed_levels = ["Iraq"]
//!
//! [covariate.age]
//! ```

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::design::{CoarseningSpec, FactorSpec, Schema};
use crate::error::{CrtError, Result};
use crate::randomization::{RandomizationScheme, RestrictionConfig};
use crate::statistics::StatisticSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub levels: Vec<String>,
    /// Marginal probabilities; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

/// A respondent covariate; numeric unless levels are given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelMap {
    /// One level per source factor.
    pub from: Vec<String>,
    pub to: String,
}

/// A coarsening as written in a file. `groups` assigns each coarsened level
/// to a group; levels left out form singleton groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseningConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sources: Vec<String>,
    pub map: Vec<LevelMap>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub groups: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tested_group: Option<String>,
}

impl CoarseningConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CrtError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read(path)?).map_err(|e| with_path(path, e))
    }

    /// The coarsening with `group` (if given) as the tested group.
    pub fn to_spec(&self, schema: &Schema, group: Option<&str>) -> Result<CoarseningSpec> {
        let tested = group
            .map(str::to_string)
            .or_else(|| self.tested_group.clone())
            .ok_or_else(|| CrtError::validation("coarsening has no tested group; pass one explicitly"))?;
        let mut h_map = std::collections::BTreeMap::new();
        for m in &self.map {
            let g = self.groups.get(&m.to).cloned().unwrap_or_else(|| m.to.clone());
            h_map.insert(m.to.clone(), g);
        }
        if let Some(bad) = self.groups.keys().find(|k| !h_map.contains_key(*k)) {
            return Err(CrtError::validation(format!("group assigned to unknown coarsened level '{bad}'")));
        }
        let spec = CoarseningSpec {
            name: self.name.clone().unwrap_or_else(|| format!("{}_coarse", self.sources.join("_"))),
            sources: self.sources.clone(),
            c_map: self.map.iter().map(|m| (m.from.clone(), m.to.clone())).collect(),
            h_map,
            tested_group: tested,
        };
        spec.validate(schema)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "factor")]
    pub factors: IndexMap<String, FactorConfig>,
    #[serde(rename = "covariate", default, skip_serializing_if = "IndexMap::is_empty")]
    pub covariates: IndexMap<String, CovariateConfig>,
    #[serde(rename = "restriction", default, skip_serializing_if = "Vec::is_empty")]
    pub restrictions: Vec<RestrictionConfig>,
    #[serde(rename = "coarsening", default, skip_serializing_if = "IndexMap::is_empty")]
    pub coarsenings: IndexMap<String, CoarseningConfig>,
    /// Default test for `crt test` when no statistic is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<StatisticSpec>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CrtError::Config(format!("{}: {e}", path.display())))
}

fn with_path(path: &Path, e: CrtError) -> CrtError {
    match e {
        CrtError::Config(m) => CrtError::Config(format!("{}: {m}", path.display())),
        CrtError::Validation(m) => CrtError::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CrtError::Config(e.to_string()))?;
        cfg.scheme()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read(path)?).map_err(|e| with_path(path, e))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CrtError::Config(e.to_string()))
    }

    pub fn schema(&self) -> Result<Schema> {
        let profile = self
            .factors
            .iter()
            .map(|(name, f)| FactorSpec::profile(name, &f.levels.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect();
        let covariates = self
            .covariates
            .iter()
            .map(|(name, c)| match &c.levels {
                Some(l) => FactorSpec::categorical_covariate(name, &l.iter().map(String::as_str).collect::<Vec<_>>()),
                None => FactorSpec::numeric_covariate(name),
            })
            .collect();
        Schema::new(profile, covariates)
    }

    pub fn scheme(&self) -> Result<RandomizationScheme> {
        let schema = self.schema()?;
        let marginals = self.factors.values().map(|f| f.probs.clone()).collect();
        RandomizationScheme::from_config(&schema, marginals, &self.restrictions)
    }

    pub fn coarsening(&self, name: &str, group: Option<&str>) -> Result<CoarseningSpec> {
        let c = self
            .coarsenings
            .get(name)
            .ok_or_else(|| CrtError::validation(format!("no coarsening named '{name}' in the config")))?;
        let mut spec = c.to_spec(&self.schema()?, group)?;
        if c.name.is_none() {
            spec.name = name.to_string();
        }
        Ok(spec)
    }
}
