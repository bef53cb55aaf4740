//! Simulation of two-study survival networks from Weibull proportional
//! hazards models by CDF inversion, with administrative and random
//! censoring, plus a Kaplan–Meier estimator for checking the output.

use crate::data::{
    write_network, Arm, CovariateFamily, CovariateRole, CovariateSpec, CovariateSummary, DataError, Marginal, Network,
    NetworkFiles, Study, StudyKind, SurvivalRow,
};
use crate::integration::{IntegrationError, IntegrationGrid};
use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("cannot write {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// One simulated study.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStudy {
    pub id: String,
    /// Treatment index of each arm.
    pub arms: Vec<usize>,
    pub arm_sizes: Vec<usize>,
    /// Independent covariate distributions, in schema order.
    pub covariates: Vec<Marginal>,
    /// Weibull shape ν.
    pub shape: f64,
    /// Baseline log rate μ.
    pub mu: f64,
    /// Whether the study is released only as aggregate data in the
    /// multilevel network.
    pub aggregate: bool,
}

/// A full data-generating scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub treatments: Vec<String>,
    pub schema: Vec<CovariateSpec>,
    pub studies: Vec<SimStudy>,
    pub beta1: Vec<f64>,
    /// Interaction coefficients per treatment (zero for the reference).
    pub beta2: Vec<Vec<f64>>,
    /// Treatment effects per treatment (zero for the reference).
    pub gamma: Vec<f64>,
    /// Everyone still at risk is censored at this time.
    pub admin_censor: Option<f64>,
    /// Fraction of each study's subjects additionally censored at a uniform
    /// fraction of their time, chosen among those not already censored.
    pub uniform_censor_fraction: f64,
    pub seed: u64,
}

/// Description of the random censoring mechanism, recorded with outputs.
pub const CENSORING_MECHANISM: &str = "select round(fraction * n) subjects per study uniformly at random among those \
    not already censored; replace each time t by U*t with U ~ Uniform(0, 1) and mark it censored";

impl SimScenario {
    /// Two-study A/B/C scenario: an AB study (500 randomised 1:1, individual
    /// data) and an AC study (400 randomised 1:1, aggregate data), with three
    /// covariates that are all prognostic and effect-modifying, shared
    /// interactions for B and C, Weibull shapes 0.8 and 1.2 and
    /// administrative censoring at t = 1 plus 10% random censoring.
    pub fn app_c(seed: u64) -> Self {
        let schema = vec![
            CovariateSpec::new("x1", CovariateFamily::Normal, CovariateRole::EffectModifier),
            CovariateSpec::new("x2", CovariateFamily::Gamma, CovariateRole::EffectModifier),
            CovariateSpec::new("x3", CovariateFamily::Bernoulli, CovariateRole::EffectModifier),
        ];
        let b2 = vec![-0.2, -0.2, -0.1];
        Self {
            treatments: vec!["A".into(), "B".into(), "C".into()],
            schema,
            studies: vec![
                SimStudy {
                    id: "AB".into(),
                    arms: vec![0, 1],
                    arm_sizes: vec![250, 250],
                    covariates: vec![
                        Marginal::Normal { mean: 0.0, sd: 0.5 },
                        Marginal::Gamma { shape: 4.0, rate: 2.0 },
                        Marginal::Bernoulli { p: 0.2 },
                    ],
                    shape: 0.8,
                    mu: 6.2f64.ln(),
                    aggregate: false,
                },
                SimStudy {
                    id: "AC".into(),
                    arms: vec![0, 2],
                    arm_sizes: vec![200, 200],
                    covariates: vec![
                        Marginal::Normal { mean: 1.0, sd: 0.4 },
                        Marginal::Gamma { shape: 6.0, rate: 2.0 },
                        Marginal::Bernoulli { p: 0.7 },
                    ],
                    shape: 1.2,
                    mu: 5.8f64.ln(),
                    aggregate: true,
                },
            ],
            beta1: vec![0.1, 0.05, -0.25],
            beta2: vec![vec![0.0; 3], b2.clone(), b2],
            gamma: vec![0.0, -1.2, -0.5],
            admin_censor: Some(1.0),
            uniform_censor_fraction: 0.1,
            seed,
        }
    }

    /// Named preset lookup.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "appC" | "appc" | "app_c" => Some(Self::app_c(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidScenario(m));
        let p = self.schema.len();
        let nt = self.treatments.len();
        if self.beta1.len() != p || self.beta2.len() != nt || self.beta2.iter().any(|b| b.len() != p) {
            return bad(format!("coefficient vectors must have {p} covariates and {nt} treatments"));
        }
        if self.gamma.len() != nt {
            return bad(format!("gamma must have {nt} entries"));
        }
        if !(0.0..=1.0).contains(&self.uniform_censor_fraction) {
            return bad("uniform censoring fraction must lie in [0, 1]".into());
        }
        if self.admin_censor.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return bad("administrative censoring time must be positive".into());
        }
        for s in &self.studies {
            if s.arms.len() != s.arm_sizes.len() || s.arms.is_empty() {
                return bad(format!("study {}: one size per arm required", s.id));
            }
            if s.arms.iter().any(|&k| k >= nt) {
                return bad(format!("study {}: unknown treatment index", s.id));
            }
            if s.covariates.len() != p {
                return bad(format!("study {}: one covariate distribution per schema entry required", s.id));
            }
            if !(s.shape > 0.0 && s.shape.is_finite() && s.mu.is_finite()) {
                return bad(format!("study {}: shape must be positive and μ finite", s.id));
            }
            if s.arm_sizes.contains(&0) {
                return bad(format!("study {}: empty arm", s.id));
            }
        }
        Ok(())
    }

    /// Individual linear predictor μ_j + x'(β₁ + β₂,k) + γ_k.
    pub fn linear_predictor(&self, study: usize, treatment: usize, x: &[f64]) -> f64 {
        let s = &self.studies[study];
        s.mu + self.gamma[treatment]
            + x.iter().zip(&self.beta1).zip(&self.beta2[treatment]).map(|((v, b1), b2)| v * (b1 + b2)).sum::<f64>()
    }

    /// True generating parameters, named as the Weibull model reports them
    /// (interactions under the shared name when they are equal across
    /// non-reference treatments).
    pub fn truth(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.studies.iter().map(|s| (format!("mu[{}]", s.id), s.mu)).collect();
        out.extend(self.schema.iter().zip(&self.beta1).map(|(c, b)| (format!("beta1[{}]", c.name), *b)));
        let shared = self.beta2[1..].windows(2).all(|w| w[0] == w[1]);
        if shared && self.beta2.len() > 1 {
            out.extend(self.schema.iter().zip(&self.beta2[1]).map(|(c, b)| (format!("beta2[shared][{}]", c.name), *b)));
        } else {
            for (k, t) in self.treatments.iter().enumerate().skip(1) {
                out.extend(self.schema.iter().zip(&self.beta2[k]).map(|(c, b)| (format!("beta2[{t}][{}]", c.name), *b)));
            }
        }
        out.extend(self.treatments.iter().zip(&self.gamma).skip(1).map(|(t, g)| (format!("gamma[{t}]"), *g)));
        out.extend(self.studies.iter().map(|s| (format!("shape[{}]", s.id), s.shape)));
        out
    }

    /// True population-average survival of treatment `k` in study `j`'s
    /// population at time `t` (no censoring), by quasi-Monte Carlo over the
    /// covariate distribution with `n_points` points.
    pub fn true_survival(&self, j: usize, k: usize, times: &[f64], n_points: usize) -> Result<Vec<f64>, SimulationError> {
        let s = &self.studies[j];
        let summary = CovariateSummary { marginals: s.covariates.clone(), correlation: None };
        let p = self.schema.len();
        let grid = IntegrationGrid::build(&summary, &self.schema, &DMatrix::identity(p, p), n_points, 0)?;
        let rates: Vec<f64> = grid.rows().map(|x| self.linear_predictor(j, k, x).exp()).collect();
        Ok(times
            .iter()
            .map(|&t| rates.iter().map(|r| (-r * t.powf(s.shape)).exp()).sum::<f64>() / rates.len() as f64)
            .collect())
    }
}

/// Weibull PH event time by CDF inversion: t = (−ln U / e^η)^{1/ν}.
pub fn weibull_inverse(u: f64, eta: f64, shape: f64) -> f64 {
    (-u.ln() / eta.exp()).powf(1.0 / shape)
}

/// Outputs of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    /// Every study with individual data.
    pub full_ipd: Network,
    /// Studies flagged `aggregate` reduced to event times and covariate
    /// summaries.
    pub mlnmr: Network,
    pub truth: Vec<(String, f64)>,
}

fn draw_covariate<R: Rng>(m: &Marginal, rng: &mut R) -> f64 {
    match *m {
        Marginal::Normal { mean, sd } => Normal::new(mean, sd).expect("validated normal").sample(rng),
        Marginal::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).expect("validated gamma").sample(rng),
        Marginal::Bernoulli { p } => f64::from(u8::from(Bernoulli::new(p).expect("validated proportion").sample(rng))),
    }
}

/// Summary statistics of simulated covariates: sample mean and sd for
/// continuous covariates (gamma by moments), proportion for binary ones.
pub fn summarise_covariates(schema: &[CovariateSpec], rows: &[&SurvivalRow]) -> CovariateSummary {
    let n = rows.len() as f64;
    let marginals = schema
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let xs: Vec<f64> = rows.iter().map(|r| r.covariates.as_ref().expect("individual rows")[c]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            match spec.family {
                CovariateFamily::Normal => Marginal::Normal { mean, sd },
                CovariateFamily::Gamma => Marginal::gamma_from_moments(mean, sd),
                CovariateFamily::Bernoulli => Marginal::Bernoulli { p: mean },
            }
        })
        .collect();
    CovariateSummary { marginals, correlation: None }
}

/// Simulates every study of the scenario. Deterministic for a given seed.
pub fn simulate(scenario: &SimScenario) -> Result<SimulatedData, SimulationError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut ipd_studies = Vec::new();
    let mut ml_studies = Vec::new();
    for (j, s) in scenario.studies.iter().enumerate() {
        let mut arms: Vec<Arm> = Vec::with_capacity(s.arms.len());
        for (&k, &n) in s.arms.iter().zip(&s.arm_sizes) {
            let rows = (0..n)
                .map(|_| {
                    let x: Vec<f64> = s.covariates.iter().map(|m| draw_covariate(m, &mut rng)).collect();
                    let u = 1.0 - rng.random::<f64>();
                    let t = weibull_inverse(u, scenario.linear_predictor(j, k, &x), s.shape);
                    let (time, status) = match scenario.admin_censor {
                        Some(c) if t > c => (c, false),
                        _ => (t, true),
                    };
                    SurvivalRow { time, status, covariates: Some(x) }
                })
                .collect();
            arms.push(Arm { treatment: k, rows, summary: None });
        }
        // Additional random censoring among subjects not yet censored.
        let total: usize = s.arm_sizes.iter().sum();
        let n_censor = (scenario.uniform_censor_fraction * total as f64).round() as usize;
        let open: Vec<(usize, usize)> = arms
            .iter()
            .enumerate()
            .flat_map(|(a, arm)| arm.rows.iter().enumerate().filter(|(_, r)| r.status).map(move |(i, _)| (a, i)))
            .collect();
        let chosen = sample_indices(&mut rng, open.len(), n_censor.min(open.len()));
        for idx in chosen {
            let (a, i) = open[idx];
            let row = &mut arms[a].rows[i];
            let u = 1.0 - rng.random::<f64>();
            row.time *= u;
            row.status = false;
        }

        let study = Study { id: s.id.clone(), kind: StudyKind::Ipd, arms, summary: None, knots: None };
        if s.aggregate {
            let all: Vec<&SurvivalRow> = study.arms.iter().flat_map(|a| &a.rows).collect();
            let study_summary = summarise_covariates(&scenario.schema, &all);
            let agd_arms = study
                .arms
                .iter()
                .map(|a| Arm {
                    treatment: a.treatment,
                    rows: a.rows.iter().map(|r| SurvivalRow { covariates: None, ..r.clone() }).collect(),
                    summary: Some(summarise_covariates(&scenario.schema, &a.rows.iter().collect::<Vec<_>>())),
                })
                .collect();
            ml_studies.push(Study {
                id: s.id.clone(),
                kind: StudyKind::Agd,
                arms: agd_arms,
                summary: Some(study_summary),
                knots: None,
            });
        } else {
            ml_studies.push(study.clone());
        }
        ipd_studies.push(study);
    }
    let full_ipd = Network::new(scenario.treatments.clone(), scenario.schema.clone(), ipd_studies, None)?;
    let mlnmr = Network::new(scenario.treatments.clone(), scenario.schema.clone(), ml_studies, None)?;
    Ok(SimulatedData { full_ipd, mlnmr, truth: scenario.truth() })
}

impl SimulatedData {
    /// Writes the multilevel network's ingestion CSVs to `dir`, the full
    /// individual data to `dir/full_ipd/`, `truth.csv` and a metadata file
    /// describing the censoring mechanism.
    pub fn write(&self, scenario: &SimScenario, dir: &Path) -> Result<NetworkFiles, SimulationError> {
        let files = write_network(&self.mlnmr, dir)?;
        write_network(&self.full_ipd, &dir.join("full_ipd"))?;
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SimulationError::Io { path: path.clone(), source }
        };
        let truth_path = dir.join("truth.csv");
        let mut w = csv::Writer::from_path(&truth_path).map_err(|e| DataError::Csv { path: truth_path.clone(), source: e })?;
        let csv_err = |e| DataError::Csv { path: truth_path.clone(), source: e };
        w.write_record(["parameter", "value"]).map_err(csv_err)?;
        for (name, v) in &self.truth {
            w.write_record([name.as_str(), &v.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(io(&truth_path))?;

        let meta_path = dir.join("simulation.txt");
        let mut f = std::fs::File::create(&meta_path).map_err(io(&meta_path))?;
        writeln!(f, "seed = {}", scenario.seed).map_err(io(&meta_path))?;
        let admin = scenario.admin_censor.map_or_else(|| "\"none\"".to_string(), |t| format!("{t:?}"));
        writeln!(f, "admin_censor = {admin}").map_err(io(&meta_path))?;
        writeln!(f, "uniform_censor_fraction = {}", scenario.uniform_censor_fraction).map_err(io(&meta_path))?;
        writeln!(f, "censoring_mechanism = \"{CENSORING_MECHANISM}\"").map_err(io(&meta_path))?;
        Ok(files)
    }
}

/// One step of a Kaplan–Meier curve.
#[derive(Debug, Clone, PartialEq)]
pub struct KmStep {
    pub time: f64,
    pub n_risk: usize,
    pub n_event: usize,
    pub n_censor: usize,
    /// Survival just after `time`.
    pub survival: f64,
}

/// Product-limit estimate, one step per distinct time (events before
/// censorings at tied times). Censor-only times are kept as marks with an
/// unchanged survival.
pub fn km_curve(rows: &[SurvivalRow]) -> Vec<KmStep> {
    let mut sorted: Vec<(f64, bool)> = rows.iter().map(|r| (r.time, r.status)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut d, mut c) = (0, 0);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        s *= 1.0 - d as f64 / at_risk as f64;
        out.push(KmStep { time: t, n_risk: at_risk, n_event: d, n_censor: c, survival: s });
        at_risk -= d + c;
    }
    out
}

/// Evaluates a Kaplan–Meier step function at `t`.
pub fn km_at(curve: &[KmStep], t: f64) -> f64 {
    curve.iter().take_while(|s| s.time <= t).last().map_or(1.0, |s| s.survival)
}
