//! Network evidence: studies, arms, individual and aggregate survival rows,
//! covariate summaries, CSV ingestion and export, pooled IPD correlation and
//! an effect-modifier estimability report.

use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: status must be 0 or 1, got '{value}'")]
    InvalidStatus { path: PathBuf, line: u64, value: String },
    #[error("{path}, line {line}: time must be a positive finite number, got '{value}'")]
    InvalidTime { path: PathBuf, line: u64, value: String },
    #[error("{path}, line {line}: cannot parse '{value}' as a number in column '{column}'")]
    InvalidNumber { path: PathBuf, line: u64, column: String, value: String },
    #[error("{path}: column '{column}' is not a covariate declared in the schema")]
    UnknownCovariate { path: PathBuf, column: String },
    #[error("{path}: schema covariate '{covariate}' has no column")]
    MissingCovariate { path: PathBuf, covariate: String },
    #[error("network is disconnected: treatment groups {0:?} share no study")]
    Disconnected(Vec<Vec<String>>),
    #[error("study '{study}', covariate '{covariate}': proportion out of range (got {value}, need 0 < p < 1)")]
    ProportionOutOfRange { study: String, covariate: String, value: f64 },
    #[error("study '{study}', covariate '{covariate}': {reason}")]
    InvalidSummary { study: String, covariate: String, reason: String },
    #[error("aggregate study '{study}' has no covariate summary for arm '{treatment}'")]
    MissingSummary { study: String, treatment: String },
    #[error("study '{0}' appears in both the individual and aggregate event files")]
    KindConflict(String),
    #[error("covariate summaries given for study '{0}' which has no aggregate event rows")]
    UnknownStudy(String),
    #[error("unknown treatment '{0}'")]
    UnknownTreatment(String),
    #[error("study '{0}' has no arms")]
    EmptyStudy(String),
    #[error("network contains no studies")]
    EmptyNetwork,
    #[error("correlation matrix: {0}")]
    Correlation(String),
    #[error("no individual patient data to pool a covariate correlation from; supply a correlation matrix")]
    NoIpd,
    #[error("study '{study}': {reason}")]
    InvalidRow { study: String, reason: String },
    #[error("covariate '{0}' declared more than once")]
    DuplicateCovariate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateFamily {
    Normal,
    Gamma,
    Bernoulli,
}

impl FromStr for CovariateFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Self::Normal),
            "gamma" => Ok(Self::Gamma),
            "bernoulli" => Ok(Self::Bernoulli),
            other => Err(format!("unknown covariate family '{other}' (normal, gamma, bernoulli)")),
        }
    }
}

impl fmt::Display for CovariateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::Gamma => "gamma",
            Self::Bernoulli => "bernoulli",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateRole {
    Prognostic,
    EffectModifier,
}

impl FromStr for CovariateRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "prognostic" => Ok(Self::Prognostic),
            "effect_modifier" | "effect-modifier" | "prognostic-and-effect-modifying" => Ok(Self::EffectModifier),
            other => Err(format!("unknown covariate role '{other}' (prognostic, effect_modifier)")),
        }
    }
}

impl fmt::Display for CovariateRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Prognostic => "prognostic",
            Self::EffectModifier => "effect_modifier",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    pub name: String,
    pub family: CovariateFamily,
    pub role: CovariateRole,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, family: CovariateFamily, role: CovariateRole) -> Self {
        Self { name: name.into(), family, role }
    }

    pub fn is_effect_modifier(&self) -> bool {
        self.role == CovariateRole::EffectModifier
    }
}

/// Marginal distribution of one covariate in an aggregate population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Bernoulli { p: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Gamma { shape, rate } => shape / rate,
            Marginal::Bernoulli { p } => p,
        }
    }

    /// Gamma parameters from a reported mean and standard deviation.
    pub fn gamma_from_moments(mean: f64, sd: f64) -> Self {
        Marginal::Gamma { shape: (mean / sd).powi(2), rate: mean / (sd * sd) }
    }
}

/// Marginal summaries for every schema covariate plus an optional
/// correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSummary {
    pub marginals: Vec<Marginal>,
    pub correlation: Option<DMatrix<f64>>,
}

impl CovariateSummary {
    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(Marginal::mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Ipd,
    Agd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRow {
    pub time: f64,
    pub status: bool,
    /// Present exactly for individual-level rows.
    pub covariates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    /// Index into [`Network::treatments`].
    pub treatment: usize,
    pub rows: Vec<SurvivalRow>,
    /// Arm-level summary (aggregate studies); takes precedence over the
    /// study-level one.
    pub summary: Option<CovariateSummary>,
}

impl Arm {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub kind: StudyKind,
    /// Arms ordered by treatment index; the first is the study's baseline arm.
    pub arms: Vec<Arm>,
    pub summary: Option<CovariateSummary>,
    /// Optional internal-knot override for spline baselines.
    pub knots: Option<Vec<f64>>,
}

impl Study {
    pub fn n_rows(&self) -> usize {
        self.arms.iter().map(Arm::n).sum()
    }

    /// Effective summary for arm `a`: arm-level if present, else study level.
    pub fn arm_summary(&self, a: usize) -> Option<&CovariateSummary> {
        self.arms[a].summary.as_ref().or(self.summary.as_ref())
    }

    pub fn treatments(&self) -> impl Iterator<Item = usize> + '_ {
        self.arms.iter().map(|a| a.treatment)
    }

    pub fn baseline_treatment(&self) -> usize {
        self.arms[0].treatment
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.arms.iter().flat_map(|a| a.rows.iter().filter(|r| r.status).map(|r| r.time)).collect()
    }

    pub fn censor_times(&self) -> Vec<f64> {
        self.arms.iter().flat_map(|a| a.rows.iter().filter(|r| !r.status).map(|r| r.time)).collect()
    }

    pub fn max_time(&self) -> f64 {
        self.arms.iter().flat_map(|a| a.rows.iter().map(|r| r.time)).fold(0.0, f64::max)
    }
}

/// Validated, immutable network of studies.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub studies: Vec<Study>,
    /// Treatment names; index 0 is the network reference.
    pub treatments: Vec<String>,
    pub schema: Vec<CovariateSpec>,
    /// Network-wide correlation used for aggregate populations lacking
    /// their own.
    pub correlation: Option<DMatrix<f64>>,
}

impl Network {
    /// Validates and assembles a network. Arms are sorted by treatment index.
    pub fn new(
        treatments: Vec<String>,
        schema: Vec<CovariateSpec>,
        mut studies: Vec<Study>,
        correlation: Option<DMatrix<f64>>,
    ) -> Result<Self, DataError> {
        if studies.is_empty() {
            return Err(DataError::EmptyNetwork);
        }
        let mut seen = BTreeSet::new();
        for spec in &schema {
            if !seen.insert(spec.name.clone()) {
                return Err(DataError::DuplicateCovariate(spec.name.clone()));
            }
        }
        let p = schema.len();
        if let Some(c) = &correlation {
            check_correlation(c, p)?;
        }
        for study in &mut studies {
            if study.arms.is_empty() {
                return Err(DataError::EmptyStudy(study.id.clone()));
            }
            study.arms.sort_by_key(|a| a.treatment);
            for arm in &study.arms {
                if arm.treatment >= treatments.len() {
                    return Err(DataError::UnknownTreatment(format!("#{}", arm.treatment)));
                }
                for row in &arm.rows {
                    if !(row.time > 0.0 && row.time.is_finite()) {
                        return Err(DataError::InvalidRow {
                            study: study.id.clone(),
                            reason: format!("time {} is not positive and finite", row.time),
                        });
                    }
                    match (study.kind, &row.covariates) {
                        (StudyKind::Ipd, Some(x)) if x.len() == p && x.iter().all(|v| v.is_finite()) => {}
                        (StudyKind::Agd, None) => {}
                        _ => {
                            return Err(DataError::InvalidRow {
                                study: study.id.clone(),
                                reason: "covariates must be present (length matching the schema) exactly for individual rows"
                                    .into(),
                            })
                        }
                    }
                }
            }
            if study.kind == StudyKind::Agd {
                for a in 0..study.arms.len() {
                    let summary = study.arm_summary(a).ok_or_else(|| DataError::MissingSummary {
                        study: study.id.clone(),
                        treatment: treatments[study.arms[a].treatment].clone(),
                    })?;
                    validate_summary(&study.id, summary, &schema)?;
                }
            }
        }
        check_connected(&treatments, &studies)?;
        Ok(Self { studies, treatments, schema, correlation })
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.schema.len()
    }

    pub fn treatment_index(&self, name: &str) -> Option<usize> {
        self.treatments.iter().position(|t| t == name)
    }

    pub fn study_index(&self, id: &str) -> Option<usize> {
        self.studies.iter().position(|s| s.id == id)
    }

    pub fn effect_modifier_columns(&self) -> Vec<usize> {
        (0..self.schema.len()).filter(|&c| self.schema[c].is_effect_modifier()).collect()
    }

    pub fn has_agd(&self) -> bool {
        self.studies.iter().any(|s| s.kind == StudyKind::Agd)
    }

    pub fn n_rows(&self) -> usize {
        self.studies.iter().map(Study::n_rows).sum()
    }

    /// Correlation applied to an aggregate population: its own, else the
    /// network matrix, else pooled IPD, else the identity (with a warning).
    pub fn resolve_correlation(&self, summary: &CovariateSummary) -> DMatrix<f64> {
        if let Some(c) = &summary.correlation {
            return c.clone();
        }
        if let Some(c) = &self.correlation {
            return c.clone();
        }
        match pool_ipd_correlation(self) {
            Ok(c) => c,
            Err(_) => {
                log::warn!("no correlation supplied and no IPD to pool from; assuming independent covariates");
                DMatrix::identity(self.schema.len(), self.schema.len())
            }
        }
    }

    /// Mean of each covariate across all individuals in the network, using
    /// row counts to weight aggregate arm means.
    pub fn grand_means(&self) -> Vec<f64> {
        let p = self.schema.len();
        let mut sum = vec![0.0; p];
        let mut n = 0.0;
        for study in &self.studies {
            for (a, arm) in study.arms.iter().enumerate() {
                match study.kind {
                    StudyKind::Ipd => {
                        for row in &arm.rows {
                            let x = row.covariates.as_ref().expect("validated IPD row");
                            sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
                        }
                    }
                    StudyKind::Agd => {
                        let means = study.arm_summary(a).expect("validated summary").means();
                        sum.iter_mut().zip(&means).for_each(|(s, m)| *s += m * arm.n() as f64);
                    }
                }
                n += arm.n() as f64;
            }
        }
        if n > 0.0 {
            sum.iter_mut().for_each(|s| *s /= n);
        }
        sum
    }
}

fn check_correlation(c: &DMatrix<f64>, p: usize) -> Result<(), DataError> {
    if c.nrows() != p || c.ncols() != p {
        return Err(DataError::Correlation(format!("expected {p}x{p}, got {}x{}", c.nrows(), c.ncols())));
    }
    for i in 0..p {
        if (c[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(DataError::Correlation("diagonal must be 1".into()));
        }
        for j in 0..p {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-8 || !c[(i, j)].is_finite() || c[(i, j)].abs() > 1.0 + 1e-8 {
                return Err(DataError::Correlation("must be symmetric with entries in [-1, 1]".into()));
            }
        }
    }
    let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
    if min_eig < -1e-8 {
        return Err(DataError::Correlation(format!("not positive semi-definite (smallest eigenvalue {min_eig:.3e})")));
    }
    Ok(())
}

fn validate_summary(study: &str, summary: &CovariateSummary, schema: &[CovariateSpec]) -> Result<(), DataError> {
    if summary.marginals.len() != schema.len() {
        return Err(DataError::InvalidSummary {
            study: study.into(),
            covariate: "*".into(),
            reason: format!("expected {} marginals, got {}", schema.len(), summary.marginals.len()),
        });
    }
    for (spec, m) in schema.iter().zip(&summary.marginals) {
        let bad = |reason: &str| DataError::InvalidSummary {
            study: study.into(),
            covariate: spec.name.clone(),
            reason: reason.into(),
        };
        match (spec.family, *m) {
            (CovariateFamily::Normal, Marginal::Normal { mean, sd }) => {
                if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
                    return Err(bad("normal summary needs a finite mean and sd > 0"));
                }
            }
            (CovariateFamily::Gamma, Marginal::Gamma { shape, rate }) => {
                if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
                    return Err(bad("gamma summary needs positive shape and rate (or positive mean and sd)"));
                }
            }
            (CovariateFamily::Bernoulli, Marginal::Bernoulli { p }) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(DataError::ProportionOutOfRange {
                        study: study.into(),
                        covariate: spec.name.clone(),
                        value: p,
                    });
                }
            }
            _ => return Err(bad("summary does not match the declared marginal family")),
        }
    }
    if let Some(c) = &summary.correlation {
        check_correlation(c, schema.len())?;
    }
    Ok(())
}

fn check_connected(treatments: &[String], studies: &[Study]) -> Result<(), DataError> {
    let mut parent: Vec<usize> = (0..treatments.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut present = BTreeSet::new();
    for study in studies {
        let first = study.arms[0].treatment;
        present.insert(first);
        for arm in &study.arms[1..] {
            present.insert(arm.treatment);
            let (a, b) = (find(&mut parent, first), find(&mut parent, arm.treatment));
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for &t in &present {
        let root = find(&mut parent, t);
        groups.entry(root).or_default().push(treatments[t].clone());
    }
    if groups.len() > 1 {
        return Err(DataError::Disconnected(groups.into_values().collect()));
    }
    Ok(())
}

/// Paths to the ingestion CSVs; any may be absent.
#[derive(Debug, Clone, Default)]
pub struct NetworkFiles {
    pub ipd: Option<PathBuf>,
    pub agd_events: Option<PathBuf>,
    pub agd_covariates: Option<PathBuf>,
    pub correlations: Option<PathBuf>,
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.into(), source })?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|source| DataError::Csv { path: path.into(), source })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| DataError::Csv { path: path.into(), source })?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        Ok(Self { path: path.into(), headers, records })
    }

    fn column(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { path: self.path.clone(), column: name.into() })
    }

    fn number(&self, line: u64, column: &str, value: &str) -> Result<f64, DataError> {
        value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::InvalidNumber {
            path: self.path.clone(),
            line,
            column: column.into(),
            value: value.into(),
        })
    }

    fn time(&self, line: u64, value: &str) -> Result<f64, DataError> {
        value.parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite()).ok_or_else(|| DataError::InvalidTime {
            path: self.path.clone(),
            line,
            value: value.into(),
        })
    }

    fn status(&self, line: u64, value: &str) -> Result<bool, DataError> {
        match value {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(DataError::InvalidStatus { path: self.path.clone(), line, value: value.into() }),
        }
    }
}

type RowsByArm = BTreeMap<String, BTreeMap<String, Vec<SurvivalRow>>>;

fn read_events(table: &Table, schema: Option<&[CovariateSpec]>) -> Result<RowsByArm, DataError> {
    let (s, t, tm, st) =
        (table.column("study")?, table.column("treatment")?, table.column("time")?, table.column("status")?);
    let mut cov_cols = Vec::new();
    if let Some(schema) = schema {
        let fixed = ["study", "treatment", "time", "status"];
        for h in &table.headers {
            if !fixed.contains(&h.as_str()) && !schema.iter().any(|c| &c.name == h) {
                return Err(DataError::UnknownCovariate { path: table.path.clone(), column: h.clone() });
            }
        }
        for spec in schema {
            let idx = table.headers.iter().position(|h| h == &spec.name).ok_or_else(|| {
                DataError::MissingCovariate { path: table.path.clone(), covariate: spec.name.clone() }
            })?;
            cov_cols.push((idx, spec));
        }
    }
    let mut out: RowsByArm = BTreeMap::new();
    for (line, rec) in &table.records {
        let time = table.time(*line, &rec[tm])?;
        let status = table.status(*line, &rec[st])?;
        let covariates = if schema.is_some() {
            let mut x = Vec::with_capacity(cov_cols.len());
            for &(idx, spec) in &cov_cols {
                let v = table.number(*line, &spec.name, &rec[idx])?;
                if spec.family == CovariateFamily::Bernoulli && v != 0.0 && v != 1.0 {
                    return Err(DataError::InvalidNumber {
                        path: table.path.clone(),
                        line: *line,
                        column: spec.name.clone(),
                        value: rec[idx].into(),
                    });
                }
                x.push(v);
            }
            Some(x)
        } else {
            None
        };
        out.entry(rec[s].to_string())
            .or_default()
            .entry(rec[t].to_string())
            .or_default()
            .push(SurvivalRow { time, status, covariates });
    }
    Ok(out)
}

/// Summary statistics keyed by (study, optional treatment, covariate).
type RawSummaries = BTreeMap<(String, Option<String>), HashMap<String, HashMap<String, f64>>>;

fn read_summaries(table: &Table) -> Result<RawSummaries, DataError> {
    let (s, c, st, v) =
        (table.column("study")?, table.column("covariate")?, table.column("stat")?, table.column("value")?);
    let tr = table.headers.iter().position(|h| h == "treatment");
    let mut out: RawSummaries = BTreeMap::new();
    for (line, rec) in &table.records {
        let stat = rec[st].to_ascii_lowercase();
        if !["mean", "sd", "prop", "shape", "rate"].contains(&stat.as_str()) {
            return Err(DataError::InvalidNumber {
                path: table.path.clone(),
                line: *line,
                column: "stat".into(),
                value: rec[st].into(),
            });
        }
        let value = table.number(*line, "value", &rec[v])?;
        let treatment = tr.map(|i| rec[i].to_string()).filter(|t| !t.is_empty());
        out.entry((rec[s].to_string(), treatment))
            .or_default()
            .entry(rec[c].to_string())
            .or_default()
            .insert(stat, value);
    }
    Ok(out)
}

fn build_summary(
    study: &str,
    stats: &HashMap<String, HashMap<String, f64>>,
    schema: &[CovariateSpec],
) -> Result<CovariateSummary, DataError> {
    let mut marginals = Vec::with_capacity(schema.len());
    for spec in schema {
        let missing = |what: &str| DataError::InvalidSummary {
            study: study.into(),
            covariate: spec.name.clone(),
            reason: format!("missing statistic '{what}'"),
        };
        let st = stats.get(&spec.name).ok_or_else(|| missing("mean/prop"))?;
        let get = |k: &str| st.get(k).copied().ok_or_else(|| missing(k));
        let m = match spec.family {
            CovariateFamily::Normal => Marginal::Normal { mean: get("mean")?, sd: get("sd")? },
            CovariateFamily::Gamma => match (st.get("shape"), st.get("rate")) {
                (Some(&shape), Some(&rate)) => Marginal::Gamma { shape, rate },
                _ => {
                    let (mean, sd) = (get("mean")?, get("sd")?);
                    if !(mean > 0.0 && sd > 0.0) {
                        return Err(DataError::InvalidSummary {
                            study: study.into(),
                            covariate: spec.name.clone(),
                            reason: "gamma mean and sd must be positive".into(),
                        });
                    }
                    Marginal::gamma_from_moments(mean, sd)
                }
            },
            CovariateFamily::Bernoulli => {
                Marginal::Bernoulli { p: st.get("prop").or_else(|| st.get("mean")).copied().ok_or_else(|| missing("prop"))? }
            }
        };
        marginals.push(m);
    }
    for name in stats.keys() {
        if !schema.iter().any(|c| &c.name == name) {
            return Err(DataError::InvalidSummary {
                study: study.into(),
                covariate: name.clone(),
                reason: "not declared in the covariate schema".into(),
            });
        }
    }
    Ok(CovariateSummary { marginals, correlation: None })
}

/// Reads a target-population covariate summary: rows of
/// `covariate,stat,value` (any other columns are ignored), with the same
/// statistics as the aggregate covariate file.
pub fn read_population_summary(path: &Path, schema: &[CovariateSpec], label: &str) -> Result<CovariateSummary, DataError> {
    let table = Table::read(path)?;
    let (c, st, v) = (table.column("covariate")?, table.column("stat")?, table.column("value")?);
    let mut stats: HashMap<String, HashMap<String, f64>> = HashMap::new();
    for (line, rec) in &table.records {
        let stat = rec[st].to_ascii_lowercase();
        if !["mean", "sd", "prop", "shape", "rate"].contains(&stat.as_str()) {
            return Err(DataError::InvalidNumber {
                path: table.path.clone(),
                line: *line,
                column: "stat".into(),
                value: rec[st].into(),
            });
        }
        let value = table.number(*line, "value", &rec[v])?;
        stats.entry(rec[c].to_string()).or_default().insert(stat, value);
    }
    build_summary(label, &stats, schema)
}

/// Reads a square correlation matrix with a header row of covariate names,
/// reordered to the schema order.
pub fn read_correlation(path: &Path, schema: &[CovariateSpec]) -> Result<DMatrix<f64>, DataError> {
    let table = Table::read(path)?;
    let p = schema.len();
    let names: Vec<&String> = table.headers.iter().filter(|h| !h.is_empty() && h.as_str() != "covariate").collect();
    let offset = table.headers.len() - names.len();
    if names.len() != p || table.records.len() != p {
        return Err(DataError::Correlation(format!("{} must be a {p}x{p} matrix with a header row", path.display())));
    }
    let mut m = DMatrix::zeros(p, p);
    let order: Vec<usize> = schema
        .iter()
        .map(|s| names.iter().position(|n| *n == &s.name))
        .collect::<Option<_>>()
        .ok_or_else(|| DataError::Correlation("header must name every schema covariate".into()))?;
    for (i, &oi) in order.iter().enumerate() {
        let (line, rec) = &table.records[oi];
        for (j, &oj) in order.iter().enumerate() {
            m[(i, j)] = table.number(*line, names[oj], &rec[offset + oj])?;
        }
    }
    check_correlation(&m, p)?;
    Ok(m)
}

/// Loads and validates a network from the CSV ingestion files. Treatments
/// are ordered with `reference` first (default: the alphabetically first),
/// then alphabetically.
pub fn load_network(files: &NetworkFiles, schema: &[CovariateSpec], reference: Option<&str>) -> Result<Network, DataError> {
    let ipd = match &files.ipd {
        Some(p) => read_events(&Table::read(p)?, Some(schema))?,
        None => BTreeMap::new(),
    };
    let agd = match &files.agd_events {
        Some(p) => read_events(&Table::read(p)?, None)?,
        None => BTreeMap::new(),
    };
    let summaries = match &files.agd_covariates {
        Some(p) => read_summaries(&Table::read(p)?)?,
        None => BTreeMap::new(),
    };
    let correlation = files.correlations.as_deref().map(|p| read_correlation(p, schema)).transpose()?;

    let mut names: BTreeSet<String> = BTreeSet::new();
    for arms in ipd.values().chain(agd.values()) {
        names.extend(arms.keys().cloned());
    }
    let mut treatments: Vec<String> = names.into_iter().collect();
    if let Some(r) = reference {
        let pos = treatments.iter().position(|t| t == r).ok_or_else(|| DataError::UnknownTreatment(r.into()))?;
        let r = treatments.remove(pos);
        treatments.insert(0, r);
    }
    let index: HashMap<String, usize> = treatments.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();

    let mut studies = Vec::new();
    for (id, arms) in ipd {
        if agd.contains_key(&id) {
            return Err(DataError::KindConflict(id));
        }
        studies.push(Study {
            id,
            kind: StudyKind::Ipd,
            arms: arms
                .into_iter()
                .map(|(t, rows)| Arm { treatment: index[&t], rows, summary: None })
                .collect(),
            summary: None,
            knots: None,
        });
    }
    for (sid, _) in summaries.keys() {
        if !agd.contains_key(sid) {
            return Err(DataError::UnknownStudy(sid.clone()));
        }
    }
    for (id, arms) in agd {
        let study_summary =
            summaries.get(&(id.clone(), None)).map(|s| build_summary(&id, s, schema)).transpose()?;
        let mut built = Vec::new();
        for (t, rows) in arms {
            let summary =
                summaries.get(&(id.clone(), Some(t.clone()))).map(|s| build_summary(&id, s, schema)).transpose()?;
            built.push(Arm { treatment: index[&t], rows, summary });
        }
        studies.push(Study { id, kind: StudyKind::Agd, arms: built, summary: study_summary, knots: None });
    }
    Network::new(treatments, schema.to_vec(), studies, correlation)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv { path: path.into(), source }
}

/// Writes the network back out as ingestion CSVs in `dir`. Returns the
/// paths written.
pub fn write_network(network: &Network, dir: &Path) -> Result<NetworkFiles, DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.into(), source })?;
    let mut files = NetworkFiles::default();

    let ipd_path = dir.join("ipd.csv");
    let mut w = csv::Writer::from_path(&ipd_path).map_err(csv_err(&ipd_path))?;
    let mut header = vec!["study".to_string(), "treatment".into(), "time".into(), "status".into()];
    header.extend(network.schema.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(csv_err(&ipd_path))?;
    for study in network.studies.iter().filter(|s| s.kind == StudyKind::Ipd) {
        for arm in &study.arms {
            for row in &arm.rows {
                let mut rec = vec![
                    study.id.clone(),
                    network.treatments[arm.treatment].clone(),
                    row.time.to_string(),
                    u8::from(row.status).to_string(),
                ];
                rec.extend(row.covariates.iter().flatten().map(f64::to_string));
                w.write_record(&rec).map_err(csv_err(&ipd_path))?;
            }
        }
    }
    w.flush().map_err(|source| DataError::Io { path: ipd_path.clone(), source })?;
    files.ipd = Some(ipd_path);

    let ev_path = dir.join("agd_events.csv");
    let mut w = csv::Writer::from_path(&ev_path).map_err(csv_err(&ev_path))?;
    w.write_record(["study", "treatment", "time", "status"]).map_err(csv_err(&ev_path))?;
    for study in network.studies.iter().filter(|s| s.kind == StudyKind::Agd) {
        for arm in &study.arms {
            for row in &arm.rows {
                w.write_record([
                    study.id.as_str(),
                    network.treatments[arm.treatment].as_str(),
                    &row.time.to_string(),
                    if row.status { "1" } else { "0" },
                ])
                .map_err(csv_err(&ev_path))?;
            }
        }
    }
    w.flush().map_err(|source| DataError::Io { path: ev_path.clone(), source })?;
    files.agd_events = Some(ev_path);

    let cov_path = dir.join("agd_covariates.csv");
    let mut w = csv::Writer::from_path(&cov_path).map_err(csv_err(&cov_path))?;
    w.write_record(["study", "treatment", "covariate", "stat", "value"]).map_err(csv_err(&cov_path))?;
    let mut write_summary = |study: &str, treatment: &str, s: &CovariateSummary| -> Result<(), DataError> {
        for (spec, m) in network.schema.iter().zip(&s.marginals) {
            let stats: Vec<(&str, f64)> = match *m {
                Marginal::Normal { mean, sd } => vec![("mean", mean), ("sd", sd)],
                Marginal::Gamma { shape, rate } => vec![("shape", shape), ("rate", rate)],
                Marginal::Bernoulli { p } => vec![("prop", p)],
            };
            for (stat, v) in stats {
                w.write_record([study, treatment, spec.name.as_str(), stat, &v.to_string()])
                    .map_err(csv_err(&cov_path))?;
            }
        }
        Ok(())
    };
    for study in network.studies.iter().filter(|s| s.kind == StudyKind::Agd) {
        if let Some(s) = &study.summary {
            write_summary(&study.id, "", s)?;
        }
        for arm in &study.arms {
            if let Some(s) = &arm.summary {
                write_summary(&study.id, &network.treatments[arm.treatment], s)?;
            }
        }
    }
    w.flush().map_err(|source| DataError::Io { path: cov_path.clone(), source })?;
    files.agd_covariates = Some(cov_path);

    if let Some(c) = &network.correlation {
        let path = dir.join("correlations.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(network.schema.iter().map(|s| s.name.as_str())).map_err(csv_err(&path))?;
        for i in 0..c.nrows() {
            w.write_record((0..c.ncols()).map(|j| c[(i, j)].to_string())).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|source| DataError::Io { path: path.clone(), source })?;
        files.correlations = Some(path);
    }
    Ok(files)
}

/// Pearson correlation matrix of the rows of `x` (n × p). Columns with zero
/// variance get zero correlation with everything else.
pub fn pearson(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let s: f64 = (0..n).map(|r| (x[(r, i)] - means[i]) * (x[(r, j)] - means[j])).sum();
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
                r[(i, j)] = if d > 0.0 { cov[(i, j)] / d } else { 0.0 };
            }
        }
    }
    r
}

/// Projects a symmetric matrix onto the positive semi-definite cone by
/// clipping negative eigenvalues, then rescales to unit diagonal. Matrices
/// that are already PSD are returned unchanged.
pub fn nearest_psd_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return m.clone();
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            r[(i, j)] = if i == j { 1.0 } else { r[(i, j)] / (d[i] * d[j]) };
        }
    }
    r
}

/// Size-weighted average of the per-study Pearson correlations across IPD
/// studies, projected to PSD if needed.
pub fn pool_ipd_correlation(network: &Network) -> Result<DMatrix<f64>, DataError> {
    let p = network.schema.len();
    let mut acc = DMatrix::zeros(p, p);
    let mut total = 0.0;
    for study in network.studies.iter().filter(|s| s.kind == StudyKind::Ipd) {
        let rows: Vec<&Vec<f64>> =
            study.arms.iter().flat_map(|a| a.rows.iter().filter_map(|r| r.covariates.as_ref())).collect();
        if rows.len() < 2 {
            continue;
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        acc += pearson(&x) * rows.len() as f64;
        total += rows.len() as f64;
    }
    if total == 0.0 {
        return Err(DataError::NoIpd);
    }
    acc /= total;
    Ok(nearest_psd_correlation(&acc))
}

/// Whether one effect-modifier interaction can be estimated independently.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionStatus {
    pub treatment: String,
    pub covariate: String,
    pub independent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimabilityReport {
    pub interactions: Vec<InteractionStatus>,
    /// True when every non-reference interaction is identifiable.
    pub independent_ok: bool,
    /// True when a single interaction vector shared across all non-reference
    /// treatments is identifiable.
    pub shared_ok: bool,
    pub message: String,
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.max() * (m.nrows().max(m.ncols()) as f64) * 1e-10;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Checks identifiability of treatment-by-effect-modifier interactions from
/// the linear-predictor design: one row per individual in IPD studies and
/// one row per aggregate arm at its mean covariates, with columns for study
/// intercepts, relative effects, prognostic coefficients and interactions.
/// An interaction is estimable when its column is not in the span of the
/// others — from within-study covariate variation in IPD, or from a
/// treatment observed across enough covariate-distinct aggregate
/// populations.
pub fn validate_estimability(network: &Network) -> EstimabilityReport {
    let em = network.effect_modifier_columns();
    if em.is_empty() {
        return EstimabilityReport {
            interactions: Vec::new(),
            independent_ok: true,
            shared_ok: true,
            message: "no interactions; plain NMA regression".into(),
        };
    }
    let j = network.studies.len();
    let k = network.n_treatments();
    let p = network.schema.len();
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (si, study) in network.studies.iter().enumerate() {
        for (a, arm) in study.arms.iter().enumerate() {
            match study.kind {
                StudyKind::Agd => {
                    let means = study.arm_summary(a).map(CovariateSummary::means).unwrap_or_else(|| vec![0.0; p]);
                    rows.push((si, arm.treatment, means));
                }
                StudyKind::Ipd => {
                    rows.extend(arm.rows.iter().map(|r| (si, arm.treatment, r.covariates.clone().unwrap_or_default())));
                }
            }
        }
    }
    let base = j + (k - 1) + p;
    let design = |shared: bool| -> DMatrix<f64> {
        let n_int = if shared { em.len() } else { (k - 1) * em.len() };
        DMatrix::from_fn(rows.len(), base + n_int, |r, c| {
            let (si, t, ref x) = rows[r];
            if c < j {
                f64::from(u8::from(c == si))
            } else if c < j + k - 1 {
                f64::from(u8::from(t == c - j + 1))
            } else if c < base {
                x[c - j - (k - 1)]
            } else {
                let c = c - base;
                let (tk, col) = if shared { (None, c) } else { (Some(c / em.len() + 1), c % em.len()) };
                let hit = t != 0 && tk.is_none_or(|tk| tk == t);
                if hit { x[em[col]] } else { 0.0 }
            }
        })
    };
    let column_estimable = |m: &DMatrix<f64>, c: usize| -> bool {
        let full = matrix_rank(m);
        let reduced = m.clone().remove_column(c);
        full == matrix_rank(&reduced) + 1
    };
    let indep = design(false);
    let mut interactions = Vec::new();
    for t in 1..k {
        for (ci, &col) in em.iter().enumerate() {
            interactions.push(InteractionStatus {
                treatment: network.treatments[t].clone(),
                covariate: network.schema[col].name.clone(),
                independent: column_estimable(&indep, base + (t - 1) * em.len() + ci),
            });
        }
    }
    let independent_ok = interactions.iter().all(|i| i.independent);
    let shared = design(true);
    let shared_ok = (0..em.len()).all(|c| column_estimable(&shared, base + c));
    let flagged: BTreeSet<&str> =
        interactions.iter().filter(|i| !i.independent).map(|i| i.treatment.as_str()).collect();
    let message = if independent_ok {
        "all independent interactions estimable".to_string()
    } else {
        format!(
            "interactions for treatment(s) {} are not independently identifiable; {}",
            flagged.into_iter().collect::<Vec<_>>().join(", "),
            if shared_ok {
                "the shared effect-modifier option is required"
            } else {
                "even a shared interaction vector is not identifiable from the available data"
            }
        )
    };
    EstimabilityReport { interactions, independent_ok, shared_ok, message }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<CovariateSpec> {
        vec![
            CovariateSpec::new("x1", CovariateFamily::Normal, CovariateRole::EffectModifier),
            CovariateSpec::new("x3", CovariateFamily::Bernoulli, CovariateRole::Prognostic),
        ]
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_ipd_study_without_agd() {
        let dir = tempfile::tempdir().unwrap();
        let ipd = write(dir.path(), "ipd.csv", "study,treatment,time,status,x1,x3\nS,A,1.0,1,0.5,1\nS,B,2.0,0,-0.2,0\n");
        let agd = write(dir.path(), "agd.csv", "study,treatment,time,status\n");
        let files = NetworkFiles { ipd: Some(ipd), agd_events: Some(agd), ..Default::default() };
        let net = load_network(&files, &schema(), None).unwrap();
        assert_eq!(net.studies.len(), 1);
        assert!(!net.has_agd());
        assert_eq!(net.treatments, vec!["A", "B"]);
    }

    #[test]
    fn ingestion_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("study,treatment,time\nS,A,1\n", "missing"),
            ("study,treatment,time,status,x1,x3\nS,A,1,2,0,0\nS,B,1,1,0,0\n", "status"),
            ("study,treatment,time,status,x1,x3,x9\nS,A,1,1,0,0,0\n", "unknown"),
        ];
        for (body, kind) in cases {
            let ipd = write(dir.path(), "ipd.csv", body);
            let err = load_network(&NetworkFiles { ipd: Some(ipd), ..Default::default() }, &schema(), None).unwrap_err();
            match kind {
                "missing" => assert!(matches!(err, DataError::MissingColumn { .. }), "{err}"),
                "status" => assert!(matches!(err, DataError::InvalidStatus { .. }), "{err}"),
                _ => assert!(matches!(err, DataError::UnknownCovariate { .. }), "{err}"),
            }
        }
        let ipd = write(dir.path(), "ipd.csv", "study,treatment,time,status,x1,x3\nS1,A,1,1,0,0\nS1,B,1,1,0,0\nS2,C,1,1,0,0\nS2,D,1,0,0,1\n");
        let err = load_network(&NetworkFiles { ipd: Some(ipd), ..Default::default() }, &schema(), None).unwrap_err();
        assert!(matches!(err, DataError::Disconnected(_)), "{err}");
    }

    #[test]
    fn proportion_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let agd = write(dir.path(), "agd.csv", "study,treatment,time,status\nT,A,1,1\nT,B,2,0\n");
        let cov = write(dir.path(), "cov.csv", "study,covariate,stat,value\nT,x1,mean,0\nT,x1,sd,1\nT,x3,prop,1.2\n");
        let files = NetworkFiles { agd_events: Some(agd), agd_covariates: Some(cov), ..Default::default() };
        let err = load_network(&files, &schema(), None).unwrap_err();
        assert!(err.to_string().contains("proportion out of range"));
    }

    #[test]
    fn arm_level_summary_wins() {
        let dir = tempfile::tempdir().unwrap();
        let agd = write(dir.path(), "agd.csv", "study,treatment,time,status\nT,A,1,1\nT,B,2,0\n");
        let cov = write(
            dir.path(),
            "cov.csv",
            "study,treatment,covariate,stat,value\nT,,x1,mean,0\nT,,x1,sd,1\nT,,x3,prop,0.5\nT,B,x1,mean,3\nT,B,x1,sd,1\nT,B,x3,prop,0.2\n",
        );
        let files = NetworkFiles { agd_events: Some(agd), agd_covariates: Some(cov), ..Default::default() };
        let net = load_network(&files, &schema(), None).unwrap();
        let s = &net.studies[0];
        assert_eq!(s.arm_summary(0).unwrap().means(), vec![0.0, 0.5]);
        assert_eq!(s.arm_summary(1).unwrap().means(), vec![3.0, 0.2]);
    }

    #[test]
    fn gamma_moment_matching() {
        let Marginal::Gamma { shape, rate } = Marginal::gamma_from_moments(2.0, 1.0) else { panic!() };
        assert!((shape - 4.0).abs() < 1e-12 && (rate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psd_projection() {
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(nearest_psd_correlation(&ok), ok);
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let fixed = nearest_psd_correlation(&bad);
        assert!(SymmetricEigen::new(fixed.clone()).eigenvalues.min() > -1e-12);
        let again = nearest_psd_correlation(&fixed);
        assert!((again - &fixed).abs().max() < 1e-12);
    }

    #[test]
    fn pooling_requires_ipd() {
        let study = Study {
            id: "T".into(),
            kind: StudyKind::Agd,
            arms: vec![Arm {
                treatment: 0,
                rows: vec![SurvivalRow { time: 1.0, status: true, covariates: None }],
                summary: None,
            }],
            summary: Some(CovariateSummary {
                marginals: vec![Marginal::Normal { mean: 0.0, sd: 1.0 }, Marginal::Bernoulli { p: 0.5 }],
                correlation: None,
            }),
            knots: None,
        };
        let net = Network::new(vec!["A".into()], schema(), vec![study], None).unwrap();
        assert!(matches!(pool_ipd_correlation(&net), Err(DataError::NoIpd)));
    }

    #[test]
    fn one_covariate_correlation_is_unit() {
        let rows = (0..20)
            .map(|i| SurvivalRow { time: 1.0 + i as f64, status: true, covariates: Some(vec![i as f64]) })
            .collect();
        let study = Study {
            id: "S".into(),
            kind: StudyKind::Ipd,
            arms: vec![Arm { treatment: 0, rows, summary: None }],
            summary: None,
            knots: None,
        };
        let schema = vec![CovariateSpec::new("x", CovariateFamily::Normal, CovariateRole::Prognostic)];
        let net = Network::new(vec!["A".into()], schema, vec![study], None).unwrap();
        assert_eq!(pool_ipd_correlation(&net).unwrap(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(validate_estimability(&net).message, "no interactions; plain NMA regression");
    }

    fn em_schema() -> Vec<CovariateSpec> {
        vec![CovariateSpec::new("x", CovariateFamily::Normal, CovariateRole::EffectModifier)]
    }

    fn agd_study(id: &str, treatments: [usize; 2], mean: f64) -> Study {
        let rows = || (1..4).map(|i| SurvivalRow { time: f64::from(i), status: true, covariates: None }).collect();
        Study {
            id: id.into(),
            kind: StudyKind::Agd,
            arms: treatments.iter().map(|&t| Arm { treatment: t, rows: rows(), summary: None }).collect(),
            summary: Some(CovariateSummary { marginals: vec![Marginal::Normal { mean, sd: 1.0 }], correlation: None }),
            knots: None,
        }
    }

    #[test]
    fn individual_data_identify_interactions_within_study() {
        let arm = |t: usize| Arm {
            treatment: t,
            rows: (0..10)
                .map(|i| SurvivalRow { time: 1.0 + f64::from(i), status: true, covariates: Some(vec![f64::from(i * (t as i32 + 2)).sin()]) })
                .collect(),
            summary: None,
        };
        let ab = Study { id: "AB".into(), kind: StudyKind::Ipd, arms: vec![arm(0), arm(1)], summary: None, knots: None };
        let net = Network::new(
            vec!["A".into(), "B".into(), "C".into()],
            em_schema(),
            vec![ab, agd_study("AC", [0, 2], 1.0)],
            None,
        )
        .unwrap();
        let report = validate_estimability(&net);
        let status: Vec<(&str, bool)> = report.interactions.iter().map(|i| (i.treatment.as_str(), i.independent)).collect();
        assert_eq!(status, vec![("B", true), ("C", false)]);
        assert!(!report.independent_ok && report.shared_ok);
        assert!(report.message.contains("treatment(s) C") && report.message.contains("shared effect-modifier option is required"));
    }

    #[test]
    fn aggregate_interactions_need_distinct_populations() {
        let studies = |means: [f64; 4]| {
            means.iter().enumerate().map(|(i, &m)| agd_study(&format!("S{i}"), [0, 1], m)).collect::<Vec<_>>()
        };
        let distinct = Network::new(vec!["A".into(), "B".into()], em_schema(), studies([0.0, 0.5, 1.0, 2.0]), None).unwrap();
        let report = validate_estimability(&distinct);
        assert!(report.independent_ok && report.shared_ok, "{}", report.message);
        let same = Network::new(vec!["A".into(), "B".into()], em_schema(), studies([1.0; 4]), None).unwrap();
        let report = validate_estimability(&same);
        assert!(!report.independent_ok && !report.shared_ok);
        assert!(report.message.contains("not identifiable from the available data"));
    }
}
