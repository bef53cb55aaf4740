//! The multilevel network meta-regression posterior for survival data.
//!
//! Individual rows contribute log S + c·log h at their own covariates;
//! aggregate rows contribute the log of the survival likelihood averaged
//! over quasi-Monte Carlo integration points of their arm's covariate
//! distribution. Gradients are exact (hand-derived chain rule for the
//! proportional-hazards families, forward-mode duals for the rest).

pub mod prior;

use crate::data::{CovariateFamily, Network, StudyKind};
use crate::integration::{IntegrationError, IntegrationGrid};
use crate::special::{Dual, Scalar};
use crate::spline::{softmax, KnotSequence, SplineBasis, SplineError};
use crate::survival::{log_surv_haz, ph_log_baseline, Family, SplineBasisValues};
pub use prior::{Prior, Priors};
use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("integration grid for study '{study}': {source}")]
    Integration { study: String, source: IntegrationError },
    #[error("spline baseline for {stratum}: {source}")]
    Spline { stratum: String, source: SplineError },
    #[error("random effects need at least two studies on some comparison")]
    RandomEffectsUnsupported,
    #[error("unknown study index {0}")]
    UnknownStudy(usize),
    #[error("treatment '{treatment}' is not in study '{study}'")]
    TreatmentNotInStudy { study: String, treatment: String },
    #[error("covariate vector has length {got}, expected {expected}")]
    CovariateLength { expected: usize, got: usize },
    #[error("study '{study}' is not an {expected} study")]
    WrongStudyKind { study: String, expected: &'static str },
    #[error("non-finite log likelihood contribution in study '{study}', row {row}")]
    NonFiniteRow { study: String, row: usize },
    #[error("non-finite log posterior or gradient in parameter block '{block}' ({name})")]
    NonFinite { block: &'static str, name: String },
    #[error("parameter vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("shared effect-modifier class map names unknown treatment '{0}'")]
    UnknownClassTreatment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effects {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineStrata {
    Study,
    StudyArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consistency {
    Consistency,
    UnrelatedMeanEffects,
}

/// How treatment-by-effect-modifier interactions are shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EffectModifierSharing {
    /// One interaction vector per non-reference treatment.
    Independent,
    /// A single vector shared by every non-reference treatment.
    SharedAll,
    /// Treatment name → class name; unmapped treatments get their own class.
    Classes(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub family: Family,
    pub sharing: EffectModifierSharing,
    pub effects: Effects,
    pub strata: BaselineStrata,
    pub consistency: Consistency,
    /// M-spline order (ignored for piecewise exponential, which uses 1).
    pub spline_order: usize,
    /// Default number of internal knots for spline baselines.
    pub n_knots: usize,
    pub priors: Priors,
    /// Integration points per aggregate arm.
    pub n_int: usize,
    /// Sobol' points skipped before the grid starts.
    pub int_skip: u64,
    /// Center continuous covariates at the network grand mean.
    pub center: bool,
}

impl ModelOptions {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            sharing: EffectModifierSharing::Independent,
            effects: Effects::Fixed,
            strata: BaselineStrata::Study,
            consistency: Consistency::Consistency,
            spline_order: 4,
            n_knots: 7,
            priors: Priors::default(),
            n_int: 64,
            int_skip: 0,
            center: true,
        }
    }
}

/// Positions of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub mu: Range<usize>,
    pub beta1: Range<usize>,
    pub beta2: Range<usize>,
    pub gamma: Range<usize>,
    pub aux: Range<usize>,
    pub spline: Range<usize>,
    pub tau: Option<usize>,
    pub re: Range<usize>,
    pub names: Vec<String>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn block_of(&self, i: usize) -> &'static str {
        if self.mu.contains(&i) {
            "intercept"
        } else if self.beta1.contains(&i) {
            "beta1"
        } else if self.beta2.contains(&i) {
            "beta2"
        } else if self.gamma.contains(&i) {
            "gamma"
        } else if self.aux.contains(&i) {
            "aux"
        } else if self.spline.contains(&i) {
            "spline"
        } else if self.tau == Some(i) {
            "tau"
        } else {
            "random_effects"
        }
    }
}

#[derive(Debug, Clone)]
enum StratumKind {
    /// Exponential families: no auxiliary parameters.
    Plain,
    /// Scalar log-scale auxiliaries starting at `offset`.
    Params { offset: usize, n: usize },
    /// Spline coefficients: `dim − 1` walk innovations then log rw_sd.
    Spline { basis: Box<SplineBasis>, values: Vec<SplineBasisValues>, offset: usize },
}

#[derive(Debug, Clone)]
struct Stratum {
    label: String,
    times: Vec<f64>,
    kind: StratumKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EffectIndex {
    None,
    Gamma(usize),
    Ume(usize),
}

#[derive(Debug, Clone)]
struct ArmData {
    study: usize,
    treatment: usize,
    stratum: usize,
    effect: EffectIndex,
    class: Option<usize>,
    /// Random-effect row: (first innovation index, position among
    /// non-baseline arms, study index into `re_factors`).
    re: Option<(usize, usize, usize)>,
    obs_offset: usize,
    body: ArmBody,
}

#[derive(Debug, Clone)]
struct IpdRow {
    t: usize,
    status: bool,
}

#[derive(Debug, Clone)]
struct AgdGroup {
    t: usize,
    status: bool,
    mult: f64,
}

#[derive(Debug, Clone)]
enum ArmBody {
    Ipd { rows: Vec<IpdRow>, x: Vec<f64> },
    Agd { groups: Vec<AgdGroup>, row_group: Vec<usize>, grid: IntegrationGrid, x: Vec<f64> },
}

/// The bound posterior: data, grids and options.
#[derive(Debug, Clone)]
pub struct Model {
    network: Network,
    options: ModelOptions,
    layout: Layout,
    centering: Vec<f64>,
    em: Vec<usize>,
    class_of: Vec<Option<usize>>,
    class_names: Vec<String>,
    ume_pairs: Vec<(usize, usize)>,
    strata: Vec<Stratum>,
    arms: Vec<ArmData>,
    /// Lower Cholesky factor of the multi-arm random-effect correlation per
    /// study (unit diagonal, 0.5 off-diagonal).
    re_factors: Vec<Vec<Vec<f64>>>,
    obs_study: Vec<usize>,
    n_obs: usize,
}

/// Baseline hazard parameters for one stratum on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub family: Family,
    /// Positive auxiliaries (shape/scale), constrained.
    pub aux: Vec<f64>,
    /// Simplex spline coefficients, with the stratum's basis.
    pub spline: Option<(SplineBasis, Vec<f64>)>,
}

struct Scratch {
    grad: Vec<f64>,
    g_cum: Vec<Vec<f64>>,
    g_lh: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(network: &Network, options: ModelOptions) -> Result<Self, LikelihoodError> {
        let network = network.clone();
        let family = options.family;
        let p = network.n_covariates();
        let k = network.n_treatments();
        let em = network.effect_modifier_columns();
        let centering: Vec<f64> = if options.center {
            network
                .grand_means()
                .into_iter()
                .zip(&network.schema)
                .map(|(m, s)| if s.family == CovariateFamily::Bernoulli { 0.0 } else { m })
                .collect()
        } else {
            vec![0.0; p]
        };

        // Interaction classes.
        let mut class_of = vec![None; k];
        let mut class_names: Vec<String> = Vec::new();
        if !em.is_empty() {
            for t in 1..k {
                let name = match &options.sharing {
                    EffectModifierSharing::Independent => network.treatments[t].clone(),
                    EffectModifierSharing::SharedAll => "shared".to_string(),
                    EffectModifierSharing::Classes(map) => {
                        map.get(&network.treatments[t]).cloned().unwrap_or_else(|| network.treatments[t].clone())
                    }
                };
                let idx = class_names.iter().position(|c| c == &name).unwrap_or_else(|| {
                    class_names.push(name);
                    class_names.len() - 1
                });
                class_of[t] = Some(idx);
            }
            if let EffectModifierSharing::Classes(map) = &options.sharing {
                if let Some(bad) = map.keys().find(|t| network.treatment_index(t).is_none()) {
                    return Err(LikelihoodError::UnknownClassTreatment(bad.clone()));
                }
            }
        }
        let n_classes = class_names.len();

        // Relative-effect parameters.
        let mut ume_pairs = Vec::new();
        if options.consistency == Consistency::UnrelatedMeanEffects {
            for s in &network.studies {
                let b = s.baseline_treatment();
                for t in s.treatments().skip(1) {
                    if !ume_pairs.contains(&(b, t)) {
                        ume_pairs.push((b, t));
                    }
                }
            }
            ume_pairs.sort_unstable();
        }
        if options.effects == Effects::Random {
            let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for s in &network.studies {
                let ts: Vec<usize> = s.treatments().collect();
                for (i, &a) in ts.iter().enumerate() {
                    for &b in &ts[i + 1..] {
                        *counts.entry((a, b)).or_default() += 1;
                    }
                }
            }
            if !counts.values().any(|&c| c >= 2) {
                return Err(LikelihoodError::RandomEffectsUnsupported);
            }
        }

        // Layout.
        let mut names = Vec::new();
        let mu = 0..network.studies.len();
        names.extend(network.studies.iter().map(|s| format!("mu[{}]", s.id)));
        let beta1 = names.len()..names.len() + p;
        names.extend(network.schema.iter().map(|c| format!("beta1[{}]", c.name)));
        let beta2 = names.len()..names.len() + n_classes * em.len();
        for c in &class_names {
            names.extend(em.iter().map(|&e| format!("beta2[{c}][{}]", network.schema[e].name)));
        }
        let gamma_start = names.len();
        if options.consistency == Consistency::Consistency {
            names.extend(network.treatments[1..].iter().map(|t| format!("gamma[{t}]")));
        } else {
            names.extend(
                ume_pairs
                    .iter()
                    .map(|&(b, t)| format!("d[{}:{}]", network.treatments[b], network.treatments[t])),
            );
        }
        let gamma = gamma_start..names.len();

        // Strata.
        let mut strata = Vec::new();
        let mut stratum_of: Vec<Vec<usize>> = Vec::new();
        for (j, study) in network.studies.iter().enumerate() {
            let mut per_arm = Vec::new();
            match options.strata {
                BaselineStrata::Study => {
                    let idx = strata.len();
                    let times: Vec<f64> = study.arms.iter().flat_map(|a| a.rows.iter().map(|r| r.time)).collect();
                    strata.push((study.id.clone(), j, times, study.event_times(), study.censor_times()));
                    per_arm.extend(std::iter::repeat_n(idx, study.arms.len()));
                }
                BaselineStrata::StudyArm => {
                    for arm in &study.arms {
                        per_arm.push(strata.len());
                        let label = format!("{}:{}", study.id, network.treatments[arm.treatment]);
                        let times: Vec<f64> = arm.rows.iter().map(|r| r.time).collect();
                        let ev = arm.rows.iter().filter(|r| r.status).map(|r| r.time).collect();
                        let ce = arm.rows.iter().filter(|r| !r.status).map(|r| r.time).collect();
                        strata.push((label, j, times, ev, ce));
                    }
                }
            }
            stratum_of.push(per_arm);
        }
        let aux_start = names.len();
        let aux_names = family.aux_names();
        for (label, ..) in &strata {
            names.extend(aux_names.iter().map(|a| format!("{a}[{label}]")));
        }
        let aux = aux_start..names.len();
        let spline_start = names.len();
        let mut built_strata = Vec::with_capacity(strata.len());
        for (si, (label, j, mut times, events, censors)) in strata.into_iter().enumerate() {
            times.sort_by(|a, b| a.total_cmp(b));
            times.dedup();
            let kind = if family.is_spline() {
                let order = if family == Family::PiecewiseExp { 1 } else { options.spline_order };
                let spline_err = |source| LikelihoodError::Spline { stratum: label.clone(), source };
                let knots = match &network.studies[j].knots {
                    Some(internal) => {
                        KnotSequence::new(0.0, internal.clone(), times.last().copied().unwrap_or(1.0), order)
                    }
                    None => KnotSequence::from_event_times(&events, &censors, options.n_knots, order),
                }
                .map_err(spline_err)?;
                let basis = SplineBasis::new(knots).map_err(spline_err)?;
                let values = times.iter().map(|&t| SplineBasisValues::new(&basis, t)).collect();
                let offset = names.len();
                for l in 0..basis.dimension() - 1 {
                    names.push(format!("rw_z[{label}][{}]", l + 1));
                }
                names.push(format!("log_rw_sd[{label}]"));
                StratumKind::Spline { basis: Box::new(basis), values, offset }
            } else if family.n_aux() == 0 {
                StratumKind::Plain
            } else {
                StratumKind::Params { offset: aux_start + si * family.n_aux(), n: family.n_aux() }
            };
            built_strata.push(Stratum { label, times, kind });
        }
        let spline = spline_start..names.len();

        // Random effects.
        let mut tau = None;
        let re_start;
        let mut re_factors = Vec::new();
        let mut re_offsets = vec![None; network.studies.len()];
        if options.effects == Effects::Random {
            tau = Some(names.len());
            names.push("log_tau".into());
            re_start = names.len();
            for (j, s) in network.studies.iter().enumerate() {
                let q = s.arms.len() - 1;
                if q == 0 {
                    continue;
                }
                re_offsets[j] = Some((names.len(), re_factors.len()));
                for arm in &s.arms[1..] {
                    names.push(format!("re_z[{}][{}]", s.id, network.treatments[arm.treatment]));
                }
                let corr = nalgebra::DMatrix::from_fn(q, q, |a, b| if a == b { 1.0 } else { 0.5 });
                let l = corr.cholesky().expect("compound symmetric matrix is positive definite").l();
                re_factors.push((0..q).map(|a| (0..=a).map(|b| l[(a, b)]).collect()).collect());
            }
        } else {
            re_start = names.len();
        }
        let re = re_start..names.len();
        let layout = Layout { mu, beta1, beta2, gamma, aux, spline, tau, re, names };

        // Arms and observations.
        let mut arms = Vec::new();
        let mut obs_study = Vec::new();
        for (j, study) in network.studies.iter().enumerate() {
            let b = study.baseline_treatment();
            let corr = match study.kind {
                StudyKind::Agd => Some(network.resolve_correlation(study.arm_summary(0).expect("validated"))),
                StudyKind::Ipd => None,
            };
            for (a, arm) in study.arms.iter().enumerate() {
                let stratum = stratum_of[j][a];
                let times = &built_strata[stratum].times;
                let t_index = |t: f64| times.binary_search_by(|v| v.total_cmp(&t)).expect("time registered");
                let effect = match options.consistency {
                    Consistency::Consistency if arm.treatment > 0 => EffectIndex::Gamma(gamma_start + arm.treatment - 1),
                    Consistency::UnrelatedMeanEffects if arm.treatment != b => {
                        let pos = ume_pairs.iter().position(|&pr| pr == (b, arm.treatment)).expect("pair registered");
                        EffectIndex::Ume(gamma_start + pos)
                    }
                    _ => EffectIndex::None,
                };
                let re = match (a, re_offsets[j]) {
                    (0, _) | (_, None) => None,
                    (a, Some((off, fi))) => Some((off, a - 1, fi)),
                };
                let body = match study.kind {
                    StudyKind::Ipd => {
                        let rows = arm.rows.iter().map(|r| IpdRow { t: t_index(r.time), status: r.status }).collect();
                        let x = arm
                            .rows
                            .iter()
                            .flat_map(|r| {
                                r.covariates.as_ref().expect("validated").iter().zip(&centering).map(|(v, m)| v - m)
                            })
                            .collect();
                        ArmBody::Ipd { rows, x }
                    }
                    StudyKind::Agd => {
                        let summary = study.arm_summary(a).expect("validated");
                        let c = summary.correlation.clone().or_else(|| corr.clone()).expect("agd correlation");
                        let grid = IntegrationGrid::build(summary, &network.schema, &c, options.n_int, options.int_skip)
                            .map_err(|source| LikelihoodError::Integration { study: study.id.clone(), source })?;
                        let mut groups: Vec<AgdGroup> = Vec::new();
                        let mut key: BTreeMap<(usize, bool), usize> = BTreeMap::new();
                        let mut row_group = Vec::with_capacity(arm.n());
                        for r in &arm.rows {
                            let ti = t_index(r.time);
                            let g = *key.entry((ti, r.status)).or_insert_with(|| {
                                groups.push(AgdGroup { t: ti, status: r.status, mult: 0.0 });
                                groups.len() - 1
                            });
                            groups[g].mult += 1.0;
                            row_group.push(g);
                        }
                        let x = centred_points(&grid, &centering);
                        ArmBody::Agd { groups, row_group, grid, x }
                    }
                };
                arms.push(ArmData {
                    study: j,
                    treatment: arm.treatment,
                    stratum,
                    effect,
                    class: class_of[arm.treatment],
                    re,
                    obs_offset: obs_study.len(),
                    body,
                });
                obs_study.extend(std::iter::repeat_n(j, arm.n()));
            }
        }
        let n_obs = obs_study.len();
        Ok(Self {
            network,
            options,
            layout,
            centering,
            em,
            class_of,
            class_names,
            ume_pairs,
            strata: built_strata,
            arms,
            re_factors,
            obs_study,
            n_obs,
        })
    }

    /// A copy with every aggregate grid rebuilt at `n_int` points along the
    /// same Sobol' stream.
    pub fn with_n_int(&self, n_int: usize) -> Result<Self, LikelihoodError> {
        let mut m = self.clone();
        m.options.n_int = n_int;
        for arm in &mut m.arms {
            if let ArmBody::Agd { grid, x, .. } = &mut arm.body {
                *grid = grid.with_points(n_int).map_err(|source| LikelihoodError::Integration {
                    study: self.network.studies[arm.study].id.clone(),
                    source,
                })?;
                *x = centred_points(grid, &m.centering);
            }
        }
        Ok(m)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn n_int(&self) -> usize {
        self.options.n_int
    }

    pub fn centering(&self) -> &[f64] {
        &self.centering
    }

    pub fn n_observations(&self) -> usize {
        self.n_obs
    }

    /// Study index of each observation, in network row order.
    pub fn observation_studies(&self) -> &[usize] {
        &self.obs_study
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Spline bases per stratum label (empty for parametric families).
    pub fn spline_bases(&self) -> Vec<(&str, &SplineBasis)> {
        self.strata
            .iter()
            .filter_map(|s| match &s.kind {
                StratumKind::Spline { basis, .. } => Some((s.label.as_str(), basis.as_ref())),
                _ => None,
            })
            .collect()
    }

    fn check_dim(&self, theta: &[f64]) -> Result<(), LikelihoodError> {
        if theta.len() != self.dim() {
            return Err(LikelihoodError::Dimension { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// Full interaction vector (length p, zeros off the effect modifiers) for
    /// treatment `k`.
    fn beta2_full(&self, theta: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.network.n_covariates()];
        if let Some(c) = self.class_of.get(k).copied().flatten() {
            let base = self.layout.beta2.start + c * self.em.len();
            for (e, &col) in self.em.iter().enumerate() {
                out[col] = theta[base + e];
            }
        }
        out
    }

    /// Treatment effect for arm of treatment `k` in study `j` (relative to
    /// the reference treatment for consistency models; to the study baseline
    /// under unrelated mean effects), excluding random-effect deviations.
    fn effect_value(&self, theta: &[f64], j: usize, k: usize) -> Option<f64> {
        match self.options.consistency {
            Consistency::Consistency => Some(if k == 0 { 0.0 } else { theta[self.layout.gamma.start + k - 1] }),
            Consistency::UnrelatedMeanEffects => {
                let b = self.network.studies[j].baseline_treatment();
                if k == b {
                    Some(0.0)
                } else {
                    self.ume_pairs.iter().position(|&pr| pr == (b, k)).map(|i| theta[self.layout.gamma.start + i])
                }
            }
        }
    }

    fn arm_re(&self, theta: &[f64], arm: &ArmData) -> f64 {
        match (arm.re, self.layout.tau) {
            (Some((off, pos, fi)), Some(ti)) => {
                let tau = theta[ti].exp();
                let row = &self.re_factors[fi][pos];
                tau * row.iter().enumerate().map(|(b, l)| l * theta[off + b]).sum::<f64>()
            }
            _ => 0.0,
        }
    }

    /// Intercept part and coefficient vector of the linear predictor for
    /// treatment `k` with study `j`'s baseline, on centered covariates.
    pub fn predictor_parts(&self, theta: &[f64], j: usize, k: usize) -> Result<(f64, Vec<f64>), LikelihoodError> {
        if j >= self.network.studies.len() {
            return Err(LikelihoodError::UnknownStudy(j));
        }
        let effect = self.effect_value(theta, j, k).ok_or_else(|| LikelihoodError::TreatmentNotInStudy {
            study: self.network.studies[j].id.clone(),
            treatment: self.network.treatments.get(k).cloned().unwrap_or_default(),
        })?;
        let b2 = self.beta2_full(theta, k);
        let coef = self.layout.beta1.clone().zip(b2).map(|(i, v)| theta[i] + v).collect();
        Ok((theta[self.layout.mu.start + j] + effect, coef))
    }

    /// Pieces of the relative effect of `b` versus `a` under consistency:
    /// the effect difference at the centering values and the interaction
    /// difference for each effect-modifier column (in
    /// `Network::effect_modifier_columns` order). `None` under unrelated
    /// mean effects.
    pub fn relative_effect_parts(&self, theta: &[f64], a: usize, b: usize) -> Option<(f64, Vec<f64>)> {
        if self.options.consistency != Consistency::Consistency {
            return None;
        }
        let nt = self.network.n_treatments();
        if a >= nt || b >= nt || theta.len() != self.dim() {
            return None;
        }
        let gamma = |k: usize| if k == 0 { 0.0 } else { theta[self.layout.gamma.start + k - 1] };
        let (fa, fb) = (self.beta2_full(theta, a), self.beta2_full(theta, b));
        Some((gamma(b) - gamma(a), self.em.iter().map(|&c| fb[c] - fa[c]).collect()))
    }

    /// Linear predictor for treatment `k` in study `j` at covariates `x` on
    /// their original scale (random-effect deviations included).
    pub fn linear_predictor(&self, theta: &[f64], j: usize, k: usize, x: &[f64]) -> Result<f64, LikelihoodError> {
        self.check_dim(theta)?;
        let study = self.network.studies.get(j).ok_or(LikelihoodError::UnknownStudy(j))?;
        let arm = self.arms.iter().find(|a| a.study == j && a.treatment == k).ok_or_else(|| {
            LikelihoodError::TreatmentNotInStudy {
                study: study.id.clone(),
                treatment: self.network.treatments.get(k).cloned().unwrap_or_default(),
            }
        })?;
        if x.len() != self.centering.len() {
            return Err(LikelihoodError::CovariateLength { expected: self.centering.len(), got: x.len() });
        }
        let (base, coef) = self.predictor_parts(theta, j, k)?;
        let lin: f64 = x.iter().zip(&self.centering).zip(&coef).map(|((v, m), c)| (v - m) * c).sum();
        Ok(base + self.arm_re(theta, arm) + lin)
    }

    /// Baseline hazard parameters for the stratum of study `j` (and arm of
    /// treatment `k` when stratified by arm).
    pub fn baseline_params(&self, theta: &[f64], j: usize, k: Option<usize>) -> Result<BaselineParams, LikelihoodError> {
        let arm = self
            .arms
            .iter()
            .find(|a| a.study == j && k.is_none_or(|k| a.treatment == k))
            .or_else(|| self.arms.iter().find(|a| a.study == j))
            .ok_or(LikelihoodError::UnknownStudy(j))?;
        let stratum = &self.strata[arm.stratum];
        Ok(match &stratum.kind {
            StratumKind::Plain => BaselineParams { family: self.options.family, aux: vec![], spline: None },
            StratumKind::Params { offset, n } => BaselineParams {
                family: self.options.family,
                aux: theta[*offset..offset + n].iter().map(|a| a.exp()).collect(),
                spline: None,
            },
            StratumKind::Spline { basis, offset, .. } => {
                let (alpha, _) = spline_coefficients(basis, &theta[*offset..*offset + basis.dimension()]);
                BaselineParams { family: self.options.family, aux: vec![], spline: Some((basis.as_ref().clone(), alpha)) }
            }
        })
    }

    /// Log posterior density (up to a constant) at unconstrained `theta`.
    pub fn log_posterior(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_gradient(theta, &mut g)
    }

    /// Log posterior and its gradient, with a diagnostic for non-finite
    /// values naming the parameter block.
    pub fn log_posterior_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), LikelihoodError> {
        self.check_dim(theta)?;
        let mut g = vec![0.0; self.dim()];
        let lp = self.log_density_gradient(theta, &mut g);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(LikelihoodError::NonFinite { block: self.layout.block_of(i), name: self.layout.names[i].clone() });
        }
        if !lp.is_finite() {
            let pointwise = self.pointwise_loglik(theta);
            if let Some(i) = pointwise.iter().position(|v| !v.is_finite()) {
                let j = self.obs_study[i];
                let first = self.obs_study.iter().position(|&s| s == j).unwrap_or(0);
                return Err(LikelihoodError::NonFiniteRow { study: self.network.studies[j].id.clone(), row: i - first });
            }
            let i = theta.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(LikelihoodError::NonFinite { block: self.layout.block_of(i), name: self.layout.names[i].clone() });
        }
        Ok((lp, g))
    }

    /// Unchecked log posterior; writes the gradient into `grad`. Non-finite
    /// values are returned as-is (the sampler treats them as divergences).
    pub fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut scratch = Scratch {
            grad: vec![0.0; self.dim()],
            g_cum: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
            g_lh: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
        };
        let ll = self.evaluate(theta, &mut scratch, None);
        let lp = self.log_prior_grad(theta, &mut scratch.grad);
        grad.copy_from_slice(&scratch.grad);
        ll + lp
    }

    /// Total log likelihood (no prior).
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut scratch = Scratch {
            grad: vec![0.0; self.dim()],
            g_cum: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
            g_lh: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
        };
        self.evaluate(theta, &mut scratch, None)
    }

    /// Log likelihood contribution of every observation, in network row
    /// order. Aggregate rows carry their marginal contribution; rows tied on
    /// (time, status) within an arm receive identical values.
    pub fn pointwise_loglik(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_obs];
        let mut scratch = Scratch {
            grad: vec![0.0; self.dim()],
            g_cum: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
            g_lh: self.strata.iter().map(|s| vec![0.0; s.times.len()]).collect(),
        };
        self.evaluate(theta, &mut scratch, Some(&mut out));
        out
    }

    fn study_rows(&self, theta: &[f64], j: usize) -> Result<Vec<f64>, LikelihoodError> {
        self.check_dim(theta)?;
        if j >= self.network.studies.len() {
            return Err(LikelihoodError::UnknownStudy(j));
        }
        let all = self.pointwise_loglik(theta);
        let rows: Vec<f64> = all.iter().zip(&self.obs_study).filter(|(_, &s)| s == j).map(|(v, _)| *v).collect();
        if let Some(row) = rows.iter().position(|v| !v.is_finite()) {
            return Err(LikelihoodError::NonFiniteRow { study: self.network.studies[j].id.clone(), row });
        }
        Ok(rows)
    }

    /// Log likelihood of an individual-level study.
    pub fn ipd_loglik(&self, theta: &[f64], j: usize) -> Result<f64, LikelihoodError> {
        let study = self.network.studies.get(j).ok_or(LikelihoodError::UnknownStudy(j))?;
        if study.kind != StudyKind::Ipd {
            return Err(LikelihoodError::WrongStudyKind { study: study.id.clone(), expected: "individual-level" });
        }
        Ok(self.study_rows(theta, j)?.iter().sum())
    }

    /// Quasi-Monte Carlo marginal log likelihood of an aggregate study.
    pub fn agd_marginal_loglik(&self, theta: &[f64], j: usize) -> Result<f64, LikelihoodError> {
        let study = self.network.studies.get(j).ok_or(LikelihoodError::UnknownStudy(j))?;
        if study.kind != StudyKind::Agd {
            return Err(LikelihoodError::WrongStudyKind { study: study.id.clone(), expected: "aggregate" });
        }
        Ok(self.study_rows(theta, j)?.iter().sum())
    }

    /// Log prior including transform Jacobians.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_prior_grad(theta, &mut g)
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let pr = &self.options.priors;
        let l = &self.layout;
        let mut total = 0.0;
        let mut add = |i: usize, (v, d): (f64, f64), grad: &mut [f64]| {
            total += v;
            grad[i] += d;
        };
        for i in l.mu.clone() {
            add(i, pr.intercept.log_density_grad(theta[i]), grad);
        }
        for i in l.beta1.clone() {
            add(i, pr.beta1.log_density_grad(theta[i]), grad);
        }
        for i in l.beta2.clone() {
            add(i, pr.beta2.log_density_grad(theta[i]), grad);
        }
        for i in l.gamma.clone() {
            add(i, pr.gamma.log_density_grad(theta[i]), grad);
        }
        for i in l.aux.clone() {
            add(i, pr.aux.log_density_grad_log_scale(theta[i]), grad);
        }
        for s in &self.strata {
            if let StratumKind::Spline { basis, offset, .. } = &s.kind {
                let n = basis.dimension() - 1;
                for i in *offset..offset + n {
                    add(i, std_normal(theta[i]), grad);
                }
                add(offset + n, pr.rw_sd.log_density_grad_log_scale(theta[offset + n]), grad);
            }
        }
        if let Some(t) = l.tau {
            add(t, pr.tau.log_density_grad_log_scale(theta[t]), grad);
        }
        for i in l.re.clone() {
            add(i, std_normal(theta[i]), grad);
        }
        total
    }

    fn evaluate(&self, theta: &[f64], scratch: &mut Scratch, mut pointwise: Option<&mut [f64]>) -> f64 {
        let family = self.options.family;
        let p = self.network.n_covariates();
        let ph = family.is_ph();

        // Baselines per stratum: cumulative hazard and log hazard per unique
        // time (proportional-hazards families only).
        let mut cum: Vec<Vec<f64>> = Vec::with_capacity(self.strata.len());
        let mut log_h: Vec<Vec<f64>> = Vec::with_capacity(self.strata.len());
        let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(self.strata.len());
        for s in &self.strata {
            let mut c = Vec::new();
            let mut h = Vec::new();
            let mut alpha = Vec::new();
            if ph {
                match &s.kind {
                    StratumKind::Spline { basis, values, offset } => {
                        let (a, _) = spline_coefficients(basis, &theta[*offset..*offset + basis.dimension()]);
                        for v in values {
                            let (cc, hh) = v.baseline(&a);
                            c.push(cc);
                            h.push(hh.ln());
                        }
                        alpha = a;
                    }
                    _ => {
                        let aux: Vec<f64> = match &s.kind {
                            StratumKind::Params { offset, n } => theta[*offset..offset + n].to_vec(),
                            _ => vec![],
                        };
                        for &t in &s.times {
                            let (lc, lh) = ph_log_baseline(family, &aux, t).expect("PH family");
                            c.push(lc.exp());
                            h.push(lh);
                        }
                    }
                }
            }
            cum.push(c);
            log_h.push(h);
            alphas.push(alpha);
        }
        for g in scratch.g_cum.iter_mut().chain(scratch.g_lh.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }

        let mut total = 0.0;
        let mut g_coef = vec![0.0; p];
        for arm in &self.arms {
            let (mut base, coef) = self.predictor_parts(theta, arm.study, arm.treatment).expect("arm effect");
            base += self.arm_re(theta, arm);
            let stratum = &self.strata[arm.stratum];
            let aux_log: Vec<f64> = match &stratum.kind {
                StratumKind::Params { offset, n } => theta[*offset..offset + n].to_vec(),
                _ => vec![],
            };
            let mut g_base = 0.0;
            g_coef.iter_mut().for_each(|v| *v = 0.0);
            let mut g_aux = [0.0; 2];
            match &arm.body {
                ArmBody::Ipd { rows, x } => {
                    for (i, row) in rows.iter().enumerate() {
                        let xi = &x[i * p..(i + 1) * p];
                        let eta = base + dot(xi, &coef);
                        let (ld, g_eta) = if ph {
                            let e = cum[arm.stratum][row.t] * eta.exp();
                            scratch.g_cum[arm.stratum][row.t] -= e;
                            if row.status {
                                scratch.g_lh[arm.stratum][row.t] += 1.0;
                                (-e + log_h[arm.stratum][row.t] + eta, 1.0 - e)
                            } else {
                                (-e, -e)
                            }
                        } else {
                            let (ld, d) = aft_dual(family, &aux_log, eta, stratum.times[row.t], row.status);
                            g_aux[0] += d[1];
                            g_aux[1] += d[2];
                            (ld, d[0])
                        };
                        total += ld;
                        if let Some(out) = pointwise.as_deref_mut() {
                            out[arm.obs_offset + i] = ld;
                        }
                        g_base += g_eta;
                        for (g, xv) in g_coef.iter_mut().zip(xi) {
                            *g += g_eta * xv;
                        }
                    }
                }
                ArmBody::Agd { groups, row_group, grid, x } => {
                    let n = grid.n_points();
                    let ln_n = (n as f64).ln();
                    let etas: Vec<f64> = (0..n).map(|q| base + dot(&x[q * p..(q + 1) * p], &coef)).collect();
                    let exp_eta: Vec<f64> = if ph { etas.iter().map(|e| e.exp()).collect() } else { vec![] };
                    let mut g_point = vec![0.0; n];
                    let mut ld = vec![0.0; n];
                    let mut d_eta = vec![0.0; n];
                    let mut d_aux = vec![[0.0; 2]; n];
                    let mut contrib = vec![0.0; groups.len()];
                    for (gi, grp) in groups.iter().enumerate() {
                        if ph {
                            let h0 = cum[arm.stratum][grp.t];
                            let lh = if grp.status { log_h[arm.stratum][grp.t] } else { 0.0 };
                            let c = f64::from(u8::from(grp.status));
                            for q in 0..n {
                                let e = h0 * exp_eta[q];
                                ld[q] = -e + c * (lh + etas[q]);
                                d_eta[q] = c - e;
                            }
                        } else {
                            for q in 0..n {
                                let (v, d) = aft_dual(family, &aux_log, etas[q], stratum.times[grp.t], grp.status);
                                ld[q] = v;
                                d_eta[q] = d[0];
                                d_aux[q] = [d[1], d[2]];
                            }
                        }
                        let m = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for v in ld.iter_mut() {
                            *v = (*v - m).exp();
                            sum += *v;
                        }
                        let l = m + sum.ln() - ln_n;
                        contrib[gi] = l;
                        total += grp.mult * l;
                        let scale = grp.mult / sum;
                        let mut g_cum_t = 0.0;
                        for q in 0..n {
                            let w = ld[q] * scale;
                            g_point[q] += w * d_eta[q];
                            if ph {
                                g_cum_t += w * (d_eta[q] - f64::from(u8::from(grp.status)));
                            } else {
                                g_aux[0] += w * d_aux[q][0];
                                g_aux[1] += w * d_aux[q][1];
                            }
                        }
                        if ph {
                            scratch.g_cum[arm.stratum][grp.t] += g_cum_t;
                            if grp.status {
                                scratch.g_lh[arm.stratum][grp.t] += grp.mult;
                            }
                        }
                    }
                    if let Some(out) = pointwise.as_deref_mut() {
                        for (i, &g) in row_group.iter().enumerate() {
                            out[arm.obs_offset + i] = contrib[g];
                        }
                    }
                    for q in 0..n {
                        g_base += g_point[q];
                        for (g, xv) in g_coef.iter_mut().zip(&x[q * p..(q + 1) * p]) {
                            *g += g_point[q] * xv;
                        }
                    }
                }
            }
            self.chain_arm(theta, arm, g_base, &g_coef, &mut scratch.grad);
            if let StratumKind::Params { offset, n } = &stratum.kind {
                if !ph {
                    for i in 0..*n {
                        scratch.grad[offset + i] += g_aux[i];
                    }
                }
            }
        }

        // Chain per-time baseline derivatives to the auxiliary parameters.
        if ph {
            for (si, s) in self.strata.iter().enumerate() {
                match &s.kind {
                    StratumKind::Params { offset, .. } => {
                        let a = Dual::<1>::variable(theta[*offset], 0);
                        let mut g = 0.0;
                        for (ti, &t) in s.times.iter().enumerate() {
                            let (lc, lh) = ph_log_baseline(family, &[a], t).expect("PH family");
                            // g_cum holds d/d log H0 (already multiplied by H0).
                            g += scratch.g_cum[si][ti] * lc.d[0] + scratch.g_lh[si][ti] * lh.d[0];
                        }
                        scratch.grad[*offset] += g;
                    }
                    StratumKind::Spline { basis, values, offset } => {
                        let alpha = &alphas[si];
                        let dim = basis.dimension();
                        let mut g_star = vec![0.0; dim - 1];
                        for (ti, v) in values.iter().enumerate() {
                            let h0 = cum[si][ti];
                            let haz = log_h[si][ti].exp();
                            let gc = scratch.g_cum[si][ti];
                            let gh = scratch.g_lh[si][ti];
                            if gc == 0.0 && gh == 0.0 {
                                continue;
                            }
                            for l in 0..dim - 1 {
                                let s_idx = l + 1;
                                g_star[l] += alpha[s_idx]
                                    * (gc * (v.cumulative_basis(s_idx) / h0 - 1.0) + gh * (v.mspline[s_idx] / haz - 1.0));
                            }
                        }
                        chain_spline(basis, &theta[*offset..*offset + dim], &g_star, &mut scratch.grad[*offset..*offset + dim]);
                    }
                    StratumKind::Plain => {}
                }
            }
        }
        total
    }

    fn chain_arm(&self, theta: &[f64], arm: &ArmData, g_base: f64, g_coef: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        grad[l.mu.start + arm.study] += g_base;
        match arm.effect {
            EffectIndex::Gamma(i) | EffectIndex::Ume(i) => grad[i] += g_base,
            EffectIndex::None => {}
        }
        for (i, g) in l.beta1.clone().zip(g_coef) {
            grad[i] += g;
        }
        if let Some(c) = arm.class {
            let base = l.beta2.start + c * self.em.len();
            for (e, &col) in self.em.iter().enumerate() {
                grad[base + e] += g_coef[col];
            }
        }
        if let (Some((off, pos, fi)), Some(ti)) = (arm.re, l.tau) {
            let tau = theta[ti].exp();
            let row = &self.re_factors[fi][pos];
            let mut dev = 0.0;
            for (b, lv) in row.iter().enumerate() {
                grad[off + b] += g_base * tau * lv;
                dev += lv * theta[off + b];
            }
            grad[ti] += g_base * tau * dev;
        }
    }

    /// Reported parameter values: constrained auxiliaries and coefficients
    /// on the original covariate scale.
    pub fn report_values(&self, theta: &[f64]) -> Vec<(String, f64)> {
        let l = &self.layout;
        let m = &self.centering;
        let beta1: Vec<f64> = theta[l.beta1.clone()].to_vec();
        let mut out = Vec::new();
        for (j, s) in self.network.studies.iter().enumerate() {
            let shift = match self.options.consistency {
                Consistency::Consistency => dot(m, &beta1),
                Consistency::UnrelatedMeanEffects => {
                    let b2 = self.beta2_full(theta, s.baseline_treatment());
                    m.iter().zip(&beta1).zip(&b2).map(|((m, a), b)| m * (a + b)).sum()
                }
            };
            out.push((format!("mu[{}]", s.id), theta[l.mu.start + j] - shift));
        }
        for (i, c) in l.beta1.clone().zip(&self.network.schema) {
            out.push((format!("beta1[{}]", c.name), theta[i]));
        }
        for i in l.beta2.clone() {
            out.push((l.names[i].clone(), theta[i]));
        }
        match self.options.consistency {
            Consistency::Consistency => {
                for k in 1..self.network.n_treatments() {
                    let b2 = self.beta2_full(theta, k);
                    out.push((format!("gamma[{}]", self.network.treatments[k]), theta[l.gamma.start + k - 1] - dot(m, &b2)));
                }
            }
            Consistency::UnrelatedMeanEffects => {
                for (i, &(b, k)) in self.ume_pairs.iter().enumerate() {
                    let (bk, bb) = (self.beta2_full(theta, k), self.beta2_full(theta, b));
                    let shift: f64 = m.iter().zip(bk.iter().zip(&bb)).map(|(m, (x, y))| m * (x - y)).sum();
                    out.push((l.names[l.gamma.start + i].clone(), theta[l.gamma.start + i] - shift));
                }
            }
        }
        for i in l.aux.clone() {
            out.push((l.names[i].clone(), theta[i].exp()));
        }
        for s in &self.strata {
            if let StratumKind::Spline { basis, offset, .. } = &s.kind {
                let dim = basis.dimension();
                out.push((format!("rw_sd[{}]", s.label), theta[offset + dim - 1].exp()));
                let (alpha, _) = spline_coefficients(basis, &theta[*offset..*offset + dim]);
                for (i, a) in alpha.iter().enumerate() {
                    out.push((format!("alpha[{}][{}]", s.label, i + 1), *a));
                }
            }
        }
        if let Some(t) = l.tau {
            out.push(("tau".into(), theta[t].exp()));
        }
        out
    }
}

fn centred_points(grid: &IntegrationGrid, centering: &[f64]) -> Vec<f64> {
    grid.rows().flat_map(|r| r.iter().zip(centering).map(|(v, m)| v - m).collect::<Vec<_>>()).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn std_normal(z: f64) -> (f64, f64) {
    (-0.5 * z * z - 0.918_938_533_204_672_8, -z)
}

/// Log density of one observation for an AFT family with derivatives in
/// (η, log aux₁, log aux₂).
fn aft_dual(family: Family, aux_log: &[f64], eta: f64, t: f64, status: bool) -> (f64, [f64; 3]) {
    let e = Dual::<3>::variable(eta, 0);
    let aux: Vec<Dual<3>> = aux_log.iter().enumerate().map(|(i, &a)| Dual::variable(a, i + 1)).collect();
    let (ls, lh) = log_surv_haz(family, &aux, e, t);
    let ld = if status { ls + lh } else { ls };
    (ld.val(), ld.d)
}

/// Maps walk innovations `z` (length dim − 1) and log rw_sd (last element)
/// to simplex coefficients; also returns the inverse-softmax coefficients.
pub fn spline_coefficients(basis: &SplineBasis, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = basis.dimension() - 1;
    let sigma = raw[n].exp();
    let w = basis.prior_weights();
    let c = basis.prior_mean();
    let mut star = Vec::with_capacity(n);
    let mut walk = 0.0;
    for l in 0..n {
        walk += sigma * w[l].sqrt() * raw[l];
        star.push(c[l] + walk);
    }
    (softmax(&star), star)
}

/// Chains a gradient with respect to the inverse-softmax coefficients back to
/// the walk innovations and log rw_sd.
fn chain_spline(basis: &SplineBasis, raw: &[f64], g_star: &[f64], grad: &mut [f64]) {
    let n = g_star.len();
    let sigma = raw[n].exp();
    let w = basis.prior_weights();
    let mut tail = 0.0;
    let mut g_log_sigma = 0.0;
    for l in (0..n).rev() {
        tail += g_star[l];
        let step = sigma * w[l].sqrt();
        grad[l] += tail * step;
        g_log_sigma += tail * step * raw[l];
    }
    grad[n] += g_log_sigma;
}

/// Reference marginal log likelihood of one aggregate observation: the log
/// of the average individual density over integration points, evaluated by
/// log-sum-exp.
pub fn marginal_log_likelihood<F: Fn(&[f64]) -> f64>(grid: &IntegrationGrid, log_density: F) -> f64 {
    let vals: Vec<f64> = grid.rows().map(log_density).collect();
    crate::special::log_sum_exp(&vals) - (grid.n_points() as f64).ln()
}
