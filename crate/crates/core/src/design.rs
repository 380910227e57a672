//! In-memory representation of a forced-choice conjoint dataset.
//!
//! Rows are tasks, ordered respondent by respondent and, within a respondent,
//! by task position. Level indices are dense and zero-based; labels only
//! appear at I/O boundaries.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    Profile,
    Covariate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<String>,
    pub kind: FactorKind,
    pub numeric: bool,
}

impl FactorSpec {
    pub fn profile(name: &str, levels: &[&str]) -> Self {
        FactorSpec {
            name: name.to_string(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
            kind: FactorKind::Profile,
            numeric: false,
        }
    }

    pub fn categorical_covariate(name: &str, levels: &[&str]) -> Self {
        FactorSpec {
            kind: FactorKind::Covariate,
            ..FactorSpec::profile(name, levels)
        }
    }

    pub fn numeric_covariate(name: &str) -> Self {
        FactorSpec {
            name: name.to_string(),
            levels: Vec::new(),
            kind: FactorKind::Covariate,
            numeric: true,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(CrtError::validation("factor with empty name"));
        }
        if self.numeric {
            if self.kind == FactorKind::Profile {
                return Err(CrtError::validation(format!(
                    "profile factor '{}' cannot be numeric",
                    self.name
                )));
            }
            return Ok(());
        }
        if self.levels.len() < 2 {
            return Err(CrtError::validation(format!(
                "factor '{}' needs at least two levels",
                self.name
            )));
        }
        if self.levels.len() > u16::MAX as usize {
            return Err(CrtError::validation(format!("factor '{}' has too many levels", self.name)));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.levels {
            if !seen.insert(l.as_str()) {
                return Err(CrtError::validation(format!(
                    "duplicate level '{}' in factor '{}'",
                    l, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Profile factors and respondent covariates, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub profile: Vec<FactorSpec>,
    pub covariates: Vec<FactorSpec>,
}

impl Schema {
    pub fn new(profile: Vec<FactorSpec>, covariates: Vec<FactorSpec>) -> Result<Self> {
        let s = Schema { profile, covariates };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.profile.is_empty() {
            return Err(CrtError::validation("schema has no profile factors"));
        }
        let mut names = std::collections::HashSet::new();
        for f in &self.profile {
            if f.kind != FactorKind::Profile {
                return Err(CrtError::validation(format!("'{}' listed as profile factor", f.name)));
            }
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(CrtError::validation(format!("duplicate factor name '{}'", f.name)));
            }
        }
        for f in &self.covariates {
            if f.kind != FactorKind::Covariate {
                return Err(CrtError::validation(format!("'{}' listed as covariate", f.name)));
            }
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(CrtError::validation(format!("duplicate factor name '{}'", f.name)));
            }
        }
        Ok(())
    }

    pub fn profile_index(&self, name: &str) -> Option<usize> {
        self.profile.iter().position(|f| f.name == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|f| f.name == name)
    }

    /// Resolve profile factor names, failing on unknown names.
    pub fn resolve_profile(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.profile_index(n)
                    .ok_or_else(|| CrtError::validation(format!("unknown profile factor '{n}'")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariate {
    /// Raw values and their standardized version (mean 0, SD 1 over rows).
    Numeric { raw: Vec<f64>, standardized: Vec<f64> },
    Categorical(Vec<u16>),
}

impl Covariate {
    pub fn numeric(raw: Vec<f64>) -> Self {
        let standardized = standardize(&raw);
        Covariate::Numeric { raw, standardized }
    }
}

/// Population standardization; a constant column is only centered.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 1e-12 {
        x.iter().map(|v| (v - mean) / sd).collect()
    } else {
        x.iter().map(|v| v - mean).collect()
    }
}

/// A forced-choice conjoint dataset with `n` respondents and `j` tasks each.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjointDataset {
    pub schema: Schema,
    pub n: usize,
    pub j: usize,
    pub respondent_ids: Vec<String>,
    /// Left-profile level indices, `left[factor][row]`.
    pub left: Vec<Vec<u16>>,
    pub right: Vec<Vec<u16>>,
    /// One column per schema covariate, repeated across a respondent's rows.
    pub covariates: Vec<Covariate>,
    /// 1 when the left profile was chosen.
    pub y: Vec<u8>,
    /// Task position within the respondent's sequence, 1-based.
    pub task_order: Vec<u32>,
}

impl ConjointDataset {
    /// Build and validate a dataset. Rows must be grouped by respondent with
    /// `j` consecutive rows each.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        schema: Schema,
        n: usize,
        j: usize,
        respondent_ids: Vec<String>,
        left: Vec<Vec<u16>>,
        right: Vec<Vec<u16>>,
        covariates: Vec<Covariate>,
        y: Vec<u8>,
        task_order: Vec<u32>,
    ) -> Result<Self> {
        let ds = ConjointDataset {
            schema,
            n,
            j,
            respondent_ids,
            left,
            right,
            covariates,
            y,
            task_order,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn respondent_of(&self, row: usize) -> usize {
        row / self.j
    }

    pub fn n_profile(&self) -> usize {
        self.schema.profile.len()
    }

    pub fn profile_value(&self, factor: usize, side: Side, row: usize) -> usize {
        match side {
            Side::Left => self.left[factor][row] as usize,
            Side::Right => self.right[factor][row] as usize,
        }
    }

    pub fn side(&self, side: Side) -> &Vec<Vec<u16>> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let rows = self.n * self.j;
        if self.j == 0 || self.n == 0 {
            return Err(CrtError::validation("dataset is empty"));
        }
        if self.y.len() != rows || self.task_order.len() != rows {
            return Err(CrtError::validation(format!(
                "expected {rows} rows for n={} J={}",
                self.n, self.j
            )));
        }
        if self.respondent_ids.len() != self.n {
            return Err(CrtError::validation("respondent id count differs from n"));
        }
        let p = self.schema.profile.len();
        if self.left.len() != p || self.right.len() != p {
            return Err(CrtError::validation("profile column count differs from schema"));
        }
        for (f, spec) in self.schema.profile.iter().enumerate() {
            for col in [&self.left[f], &self.right[f]] {
                if col.len() != rows {
                    return Err(CrtError::validation(format!("column '{}' has wrong length", spec.name)));
                }
                if let Some(v) = col.iter().find(|&&v| v as usize >= spec.n_levels()) {
                    return Err(CrtError::validation(format!(
                        "level index {v} out of range for factor '{}'",
                        spec.name
                    )));
                }
            }
        }
        if let Some(v) = self.y.iter().find(|&&v| v > 1) {
            return Err(CrtError::validation(format!("non-binary response {v}")));
        }
        for i in 0..self.n {
            let block = &self.task_order[i * self.j..(i + 1) * self.j];
            let mut sorted: Vec<u32> = block.to_vec();
            sorted.sort_unstable();
            if sorted.iter().enumerate().any(|(t, &v)| v as usize != t + 1) {
                return Err(CrtError::validation(format!(
                    "task order of respondent '{}' is not a permutation of 1..J",
                    self.respondent_ids[i]
                )));
            }
        }
        if self.covariates.len() != self.schema.covariates.len() {
            return Err(CrtError::validation("covariate count differs from schema"));
        }
        for (m, cov) in self.covariates.iter().enumerate() {
            let spec = &self.schema.covariates[m];
            match cov {
                Covariate::Numeric { raw, standardized } => {
                    if !spec.numeric {
                        return Err(CrtError::validation(format!("covariate '{}' is categorical", spec.name)));
                    }
                    if raw.len() != rows || standardized.len() != rows {
                        return Err(CrtError::validation(format!("covariate '{}' has wrong length", spec.name)));
                    }
                    if raw.iter().any(|v| !v.is_finite()) {
                        return Err(CrtError::validation(format!("covariate '{}' is not finite", spec.name)));
                    }
                    self.check_constant_within(|r| raw[r].to_bits(), &spec.name)?;
                }
                Covariate::Categorical(v) => {
                    if spec.numeric {
                        return Err(CrtError::validation(format!("covariate '{}' is numeric", spec.name)));
                    }
                    if v.len() != rows {
                        return Err(CrtError::validation(format!("covariate '{}' has wrong length", spec.name)));
                    }
                    if v.iter().any(|&l| l as usize >= spec.n_levels()) {
                        return Err(CrtError::validation(format!("covariate '{}' level out of range", spec.name)));
                    }
                    self.check_constant_within(|r| v[r] as u64, &spec.name)?;
                }
            }
        }
        Ok(())
    }

    fn check_constant_within(&self, key: impl Fn(usize) -> u64, name: &str) -> Result<()> {
        for i in 0..self.n {
            let first = key(i * self.j);
            if (i * self.j..(i + 1) * self.j).any(|r| key(r) != first) {
                return Err(CrtError::validation(format!(
                    "covariate varies within respondent: '{}' for respondent '{}'",
                    name, self.respondent_ids[i]
                )));
            }
        }
        Ok(())
    }

    /// Copy of the dataset keeping only the first `j_new` tasks (by row
    /// position) of each respondent.
    pub fn truncate_tasks(&self, j_new: usize) -> ConjointDataset {
        let keep: Vec<usize> = (0..self.n)
            .flat_map(|i| (0..j_new).map(move |t| i * self.j + t))
            .collect();
        let pick_u16 = |v: &Vec<u16>| keep.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let covariates = self
            .covariates
            .iter()
            .map(|c| match c {
                Covariate::Numeric { raw, .. } => Covariate::numeric(keep.iter().map(|&r| raw[r]).collect()),
                Covariate::Categorical(v) => Covariate::Categorical(pick_u16(v)),
            })
            .collect();
        // Task positions are renumbered so they remain a permutation of 1..j_new.
        let mut task_order = Vec::with_capacity(keep.len());
        for i in 0..self.n {
            let block: Vec<u32> = (0..j_new).map(|t| self.task_order[i * self.j + t]).collect();
            let mut ranks: Vec<usize> = (0..j_new).collect();
            ranks.sort_by_key(|&t| block[t]);
            let mut order = vec![0u32; j_new];
            for (rank, &t) in ranks.iter().enumerate() {
                order[t] = rank as u32 + 1;
            }
            task_order.extend(order);
        }
        ConjointDataset {
            schema: self.schema.clone(),
            n: self.n,
            j: j_new,
            respondent_ids: self.respondent_ids.clone(),
            left: self.left.iter().map(pick_u16).collect(),
            right: self.right.iter().map(pick_u16).collect(),
            covariates,
            y: keep.iter().map(|&r| self.y[r]).collect(),
            task_order,
        }
    }
}

/// Options for CSV ingestion.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Drop respondents with fewer tasks than the maximum instead of failing.
    pub allow_ragged: bool,
}

/// Summary of rows removed during ingestion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub dropped_ragged: Vec<String>,
    pub dropped_missing_covariate: Vec<String>,
}

/// Load a dataset from CSV with columns `respondent_id`, `task`, `Y`,
/// `<factor>_L`, `<factor>_R` for every profile factor and one column per
/// covariate.
pub fn load_dataset(path: &Path, schema: &Schema, opts: &LoadOptions) -> Result<(ConjointDataset, LoadReport)> {
    let file = std::fs::File::open(path)
        .map_err(|e| CrtError::validation(format!("cannot open '{}': {e}", path.display())))?;
    read_dataset(file, schema, opts)
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    schema: &Schema,
    opts: &LoadOptions,
) -> Result<(ConjointDataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CrtError::validation(format!("missing column '{name}'")))
    };
    let c_id = col("respondent_id")?;
    let c_task = col("task")?;
    let c_y = col("Y")?;
    let mut c_prof = Vec::new();
    for f in &schema.profile {
        c_prof.push((col(&format!("{}_L", f.name))?, col(&format!("{}_R", f.name))?));
    }
    let c_cov: Vec<usize> = schema.covariates.iter().map(|f| col(&f.name)).collect::<Result<_>>()?;

    struct RawRow {
        task: u32,
        y: u8,
        left: Vec<u16>,
        right: Vec<u16>,
        cov: Vec<Option<f64>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRow>> = HashMap::new();
    let mut last_id: Option<String> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let lineno = line + 2;
        let id = rec.get(c_id).unwrap_or("").to_string();
        let task: u32 = rec
            .get(c_task)
            .unwrap_or("")
            .parse()
            .map_err(|_| CrtError::validation(format!("line {lineno}: invalid task value")))?;
        let y_raw = rec.get(c_y).unwrap_or("");
        let y = match y_raw {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(CrtError::validation(format!(
                    "line {lineno}: non-binary response '{other}'"
                )))
            }
        };
        let mut left = Vec::with_capacity(schema.profile.len());
        let mut right = Vec::with_capacity(schema.profile.len());
        for (f, &(cl, cr)) in schema.profile.iter().zip(&c_prof) {
            for (c, out) in [(cl, &mut left), (cr, &mut right)] {
                let label = rec.get(c).unwrap_or("");
                let idx = f.level_index(label).ok_or_else(|| {
                    CrtError::validation(format!(
                        "line {lineno}: unknown level label '{label}' for factor '{}'",
                        f.name
                    ))
                })?;
                out.push(idx as u16);
            }
        }
        let mut cov = Vec::with_capacity(c_cov.len());
        for (f, &c) in schema.covariates.iter().zip(&c_cov) {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() || raw == "NA" {
                cov.push(None);
            } else if f.numeric {
                let v: f64 = raw.parse().map_err(|_| {
                    CrtError::validation(format!("line {lineno}: invalid numeric value '{raw}' for '{}'", f.name))
                })?;
                cov.push(Some(v));
            } else {
                let idx = f.level_index(raw).ok_or_else(|| {
                    CrtError::validation(format!(
                        "line {lineno}: unknown level label '{raw}' for covariate '{}'",
                        f.name
                    ))
                })?;
                cov.push(Some(idx as f64));
            }
        }
        if last_id.as_deref() != Some(id.as_str()) {
            if groups.contains_key(&id) {
                return Err(CrtError::validation(format!(
                    "line {lineno}: tasks of respondent '{id}' are not contiguous"
                )));
            }
            order.push(id.clone());
            last_id = Some(id.clone());
        }
        groups.entry(id).or_default().push(RawRow { task, y, left, right, cov });
    }
    if order.is_empty() {
        return Err(CrtError::validation("dataset has no rows"));
    }

    let j = groups.values().map(|g| g.len()).max().unwrap_or(0);
    let mut report = LoadReport::default();
    let mut kept = Vec::new();
    for id in order {
        let mut g = groups.remove(&id).unwrap_or_default();
        if g.len() != j {
            if opts.allow_ragged {
                report.dropped_ragged.push(id);
                continue;
            }
            return Err(CrtError::validation(format!(
                "ragged task counts: respondent '{id}' has {} tasks, expected {j}",
                g.len()
            )));
        }
        if g.iter().any(|r| r.cov.iter().any(|c| c.is_none())) {
            report.dropped_missing_covariate.push(id);
            continue;
        }
        g.sort_by_key(|r| r.task);
        kept.push((id, g));
    }
    if kept.is_empty() {
        return Err(CrtError::validation("no complete respondents remain"));
    }

    let n = kept.len();
    let p = schema.profile.len();
    let mut left = vec![Vec::with_capacity(n * j); p];
    let mut right = vec![Vec::with_capacity(n * j); p];
    let mut cov_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n * j); schema.covariates.len()];
    let mut y = Vec::with_capacity(n * j);
    let mut task_order = Vec::with_capacity(n * j);
    let mut ids = Vec::with_capacity(n);
    for (id, g) in kept {
        let tasks: Vec<u32> = g.iter().map(|r| r.task).collect();
        // Task labels are normalized to 1..J in their sorted order.
        for (t, r) in g.into_iter().enumerate() {
            task_order.push(t as u32 + 1);
            y.push(r.y);
            for f in 0..p {
                left[f].push(r.left[f]);
                right[f].push(r.right[f]);
            }
            for (m, v) in r.cov.iter().enumerate() {
                cov_cols[m].push(v.unwrap_or(f64::NAN));
            }
        }
        let mut sorted = tasks.clone();
        sorted.dedup();
        if sorted.len() != tasks.len() {
            return Err(CrtError::validation(format!("respondent '{id}' repeats a task index")));
        }
        ids.push(id);
    }
    let covariates = schema
        .covariates
        .iter()
        .zip(cov_cols)
        .map(|(f, v)| {
            if f.numeric {
                Covariate::numeric(v)
            } else {
                Covariate::Categorical(v.iter().map(|&x| x as u16).collect())
            }
        })
        .collect();
    let ds = ConjointDataset::new(schema.clone(), n, j, ids, left, right, covariates, y, task_order)?;
    Ok((ds, report))
}

/// Write a dataset in the format read by [`load_dataset`].
pub fn write_dataset<W: std::io::Write>(ds: &ConjointDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["respondent_id".to_string(), "task".to_string(), "Y".to_string()];
    for f in &ds.schema.profile {
        header.push(format!("{}_L", f.name));
        header.push(format!("{}_R", f.name));
    }
    for f in &ds.schema.covariates {
        header.push(f.name.clone());
    }
    w.write_record(&header)?;
    for r in 0..ds.rows() {
        let mut rec = vec![
            ds.respondent_ids[ds.respondent_of(r)].clone(),
            ds.task_order[r].to_string(),
            ds.y[r].to_string(),
        ];
        for (f, spec) in ds.schema.profile.iter().enumerate() {
            rec.push(spec.levels[ds.left[f][r] as usize].clone());
            rec.push(spec.levels[ds.right[f][r] as usize].clone());
        }
        for (m, cov) in ds.covariates.iter().enumerate() {
            match cov {
                Covariate::Numeric { raw, .. } => rec.push(format!("{:?}", raw[r])),
                Covariate::Categorical(v) => rec.push(ds.schema.covariates[m].levels[v[r] as usize].clone()),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The c and h maps of a coarsening: tuples of source-factor levels map to a
/// coarsened level, coarsened levels map to groups, and one group is tested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseningSpec {
    /// Name of the coarsened factor that replaces the sources.
    pub name: String,
    /// Source profile factors, combined in this order.
    pub sources: Vec<String>,
    /// Source level tuples to coarsened label.
    pub c_map: Vec<(Vec<String>, String)>,
    /// Coarsened label to group identifier.
    pub h_map: BTreeMap<String, String>,
    pub tested_group: String,
}

impl CoarseningSpec {
    /// Identity coarsening of one factor: every level is its own coarsened
    /// level and all levels form the tested group.
    pub fn identity(schema: &Schema, factor: &str) -> Result<Self> {
        let f = schema
            .profile_index(factor)
            .ok_or_else(|| CrtError::validation(format!("unknown profile factor '{factor}'")))?;
        let levels = &schema.profile[f].levels;
        Ok(CoarseningSpec {
            name: factor.to_string(),
            sources: vec![factor.to_string()],
            c_map: levels.iter().map(|l| (vec![l.clone()], l.clone())).collect(),
            h_map: levels.iter().map(|l| (l.clone(), "all".to_string())).collect(),
            tested_group: "all".to_string(),
        })
    }

    /// Coarsened levels in order of first appearance in `c_map`.
    pub fn coarse_levels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, c) in &self.c_map {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    /// Coarsened levels (in [`Self::coarse_levels`] order) belonging to the tested group.
    pub fn tested_levels(&self) -> Vec<usize> {
        self.coarse_levels()
            .iter()
            .enumerate()
            .filter(|(_, l)| self.h_map.get(*l) == Some(&self.tested_group))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.sources.is_empty() {
            return Err(CrtError::validation("coarsening has no source factors"));
        }
        let src = schema.resolve_profile(&self.sources)?;
        for (tuple, _) in &self.c_map {
            if tuple.len() != src.len() {
                return Err(CrtError::validation("coarsening tuple arity differs from sources"));
            }
            for (label, &f) in tuple.iter().zip(&src) {
                if schema.profile[f].level_index(label).is_none() {
                    return Err(CrtError::validation(format!(
                        "coarsening refers to unknown level '{label}' of '{}'",
                        schema.profile[f].name
                    )));
                }
            }
        }
        for c in self.coarse_levels() {
            if !self.h_map.contains_key(&c) {
                return Err(CrtError::validation(format!("h map has no group for coarsened level '{c}'")));
            }
        }
        if self.tested_levels().is_empty() {
            return Err(CrtError::validation(format!(
                "tested group '{}' has no coarsened levels",
                self.tested_group
            )));
        }
        Ok(())
    }

    /// Table from source level indices (mixed radix over sources) to coarsened
    /// level index; `None` where the tuple is not covered.
    pub fn index_table(&self, schema: &Schema) -> Result<(Vec<usize>, Vec<Option<usize>>)> {
        let src = schema.resolve_profile(&self.sources)?;
        let sizes: Vec<usize> = src.iter().map(|&f| schema.profile[f].n_levels()).collect();
        let total: usize = sizes.iter().product();
        let levels = self.coarse_levels();
        let mut table = vec![None; total];
        for (tuple, c) in &self.c_map {
            let mut code = 0;
            for ((label, &f), &k) in tuple.iter().zip(&src).zip(&sizes) {
                let l = schema.profile[f]
                    .level_index(label)
                    .ok_or_else(|| CrtError::validation(format!("unknown level '{label}'")))?;
                code = code * k + l;
            }
            let ci = levels.iter().position(|x| x == c).unwrap_or(0);
            if let Some(prev) = table[code] {
                if prev != ci {
                    return Err(CrtError::validation("coarsening maps one tuple to two levels"));
                }
            }
            table[code] = Some(ci);
        }
        Ok((src, table))
    }
}

/// Encode source-level tuples of a row into the mixed-radix code used by
/// [`CoarseningSpec::index_table`].
pub(crate) fn tuple_code(ds: &ConjointDataset, src: &[usize], side: Side, row: usize) -> usize {
    let mut code = 0;
    for &f in src {
        code = code * ds.schema.profile[f].n_levels() + ds.profile_value(f, side, row);
    }
    code
}

/// Replace the source factors by the coarsened factor, placed at the position
/// of the first source. Both profiles are coarsened identically.
pub fn apply_coarsening(ds: &ConjointDataset, spec: &CoarseningSpec) -> Result<ConjointDataset> {
    spec.validate(&ds.schema)?;
    let (src, table) = spec.index_table(&ds.schema)?;
    let rows = ds.rows();
    let mut new_cols = [Vec::with_capacity(rows), Vec::with_capacity(rows)];
    for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        for r in 0..rows {
            let code = tuple_code(ds, &src, side, r);
            let c = table[code].ok_or_else(|| {
                let labels: Vec<&str> = src
                    .iter()
                    .map(|&f| ds.schema.profile[f].levels[ds.profile_value(f, side, r)].as_str())
                    .collect();
                CrtError::validation(format!("level tuple {labels:?} absent from c map"))
            })?;
            new_cols[s].push(c as u16);
        }
    }
    let first = *src.iter().min().unwrap_or(&0);
    let mut profile = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    let [new_left, new_right] = new_cols;
    let mut new_left = Some(new_left);
    let mut new_right = Some(new_right);
    for f in 0..ds.n_profile() {
        if f == first {
            let levels = spec.coarse_levels();
            profile.push(FactorSpec {
                name: spec.name.clone(),
                levels,
                kind: FactorKind::Profile,
                numeric: false,
            });
            left.push(new_left.take().unwrap_or_default());
            right.push(new_right.take().unwrap_or_default());
        } else if !src.contains(&f) {
            profile.push(ds.schema.profile[f].clone());
            left.push(ds.left[f].clone());
            right.push(ds.right[f].clone());
        }
    }
    let schema = Schema {
        profile,
        covariates: ds.schema.covariates.clone(),
    };
    // A coarsened factor may legitimately collapse to a single level.
    let out = ConjointDataset {
        schema,
        n: ds.n,
        j: ds.j,
        respondent_ids: ds.respondent_ids.clone(),
        left,
        right,
        covariates: ds.covariates.clone(),
        y: ds.y.clone(),
        task_order: ds.task_order.clone(),
    };
    Ok(out)
}
