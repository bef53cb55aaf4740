//! Population-average estimands computed per posterior draw: conditional
//! relative effects at mean effect-modifier values, and marginal survival,
//! hazard, cumulative hazard, quantiles, restricted mean survival and
//! marginal contrasts obtained by integrating individual-level curves over
//! the population's covariate distribution.

use crate::data::{CovariateSummary, StudyKind};
use crate::integration::{IntegrationError, IntegrationGrid};
use crate::likelihood::{Consistency, LikelihoodError, Model};
use crate::sampler::diagnostics::quantile_sorted;
use crate::special::log_sum_exp;
use crate::survival::{Aux, Family, SurvivalError, SurvivalModel};
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error(
        "population '{0}' has no baseline: include reference-arm data for it as a single-arm study, \
         or borrow the baseline of a study in the network"
    )]
    MissingBaseline(String),
    #[error("population '{population}' is missing the mean of effect modifier '{covariate}'")]
    MissingEffectModifierMean { population: String, covariate: String },
    #[error("unknown treatment index {0}")]
    UnknownTreatment(usize),
    #[error("quantile level {0} must lie in (0, 1)")]
    InvalidAlpha(f64),
    #[error("time {0} must be finite and non-negative")]
    InvalidTime(f64),
    #[error("restricted mean time horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error(
        "an infinite time horizon needs a finite mean survival time; spline baselines are only defined up to the \
         upper boundary knot (constant-hazard extrapolation beyond it is a policy choice), so give a finite horizon"
    )]
    InfiniteHorizonSpline,
    #[error("mean survival time is infinite for this draw (log-logistic shape {0} ≤ 1)")]
    InfiniteMean(f64),
    #[error("conditional relative effects between arbitrary treatments require the consistency model")]
    RequiresConsistency,
    #[error("covariate grid has {got} columns, expected {expected}")]
    GridColumns { expected: usize, got: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// A target population: its covariate distribution (as integration points),
/// covariate means, and the study whose baseline it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPopulation {
    pub label: String,
    pub grid: IntegrationGrid,
    /// Covariate means on the original scale (only effect-modifier entries
    /// are used by conditional effects).
    pub means: Vec<Option<f64>>,
    /// Study providing the baseline intercept and hazard shape.
    pub baseline_study: Option<usize>,
}

impl TargetPopulation {
    /// The population of study `j`: its individual covariates, or
    /// integration points from its covariate summary.
    pub fn from_study(model: &Model, j: usize, n_points: usize) -> Result<Self, PopulationError> {
        let network = model.network();
        let study = network.studies.get(j).ok_or(LikelihoodError::UnknownStudy(j))?;
        let p = network.n_covariates();
        let grid = match study.kind {
            StudyKind::Ipd => {
                let rows: Vec<Vec<f64>> = study
                    .arms
                    .iter()
                    .flat_map(|a| a.rows.iter().map(|r| r.covariates.clone().unwrap_or_default()))
                    .collect();
                if p == 0 {
                    IntegrationGrid::from_points(vec![vec![]; rows.len().max(1)])
                } else {
                    IntegrationGrid::from_points(rows)
                }
            }
            StudyKind::Agd => {
                let summary = study.summary.as_ref().or_else(|| study.arm_summary(0)).expect("validated summary");
                let corr = network.resolve_correlation(summary);
                IntegrationGrid::build(summary, &network.schema, &corr, n_points, 0)?
            }
        };
        let means = match study.kind {
            StudyKind::Ipd => (0..p).map(|c| Some(grid.column_mean(c))).collect(),
            StudyKind::Agd => {
                let s = study.summary.as_ref().or_else(|| study.arm_summary(0)).expect("validated summary");
                s.means().into_iter().map(Some).collect()
            }
        };
        Ok(Self { label: study.id.clone(), grid, means, baseline_study: Some(j) })
    }

    /// A population described by a covariate summary, optionally borrowing
    /// the baseline of study `baseline_study`.
    pub fn from_summary(
        model: &Model,
        label: &str,
        summary: &CovariateSummary,
        correlation: Option<&DMatrix<f64>>,
        n_points: usize,
        baseline_study: Option<usize>,
    ) -> Result<Self, PopulationError> {
        let network = model.network();
        let corr = correlation.cloned().unwrap_or_else(|| network.resolve_correlation(summary));
        let grid = IntegrationGrid::build(summary, &network.schema, &corr, n_points, 0)?;
        Ok(Self {
            label: label.to_string(),
            grid,
            means: summary.means().into_iter().map(Some).collect(),
            baseline_study,
        })
    }

    fn baseline(&self) -> Result<usize, PopulationError> {
        self.baseline_study.ok_or_else(|| PopulationError::MissingBaseline(self.label.clone()))
    }
}

/// Per-draw values of an estimand, on a time grid or as a scalar (one
/// column). NaN marks "not reached" quantiles and masked hazards.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimandDraws {
    pub name: String,
    pub population: String,
    pub treatment: String,
    /// Time points for curves; `None` for scalar estimands.
    pub times: Option<Vec<f64>>,
    /// `draws × points`.
    pub values: Vec<Vec<f64>>,
    /// Notes such as the extrapolation horizon or masking.
    pub notes: Vec<String>,
}

/// Summary of one column of an estimand across draws.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimandSummary {
    pub time: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q025: f64,
    pub q10: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub q975: f64,
    /// Draws for which the value is undefined (NaN).
    pub n_missing: usize,
}

impl EstimandDraws {
    pub fn n_points(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }

    /// Mean, sd and 50/80/95% central intervals per point, over defined
    /// draws.
    pub fn summaries(&self) -> Vec<EstimandSummary> {
        (0..self.n_points())
            .map(|i| {
                let col = self.column(i);
                let mut defined: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                let n_missing = col.len() - defined.len();
                defined.sort_by(f64::total_cmp);
                let time = self.times.as_ref().map(|t| t[i]);
                if defined.is_empty() {
                    let nan = f64::NAN;
                    return EstimandSummary {
                        time,
                        mean: nan,
                        sd: nan,
                        median: nan,
                        q025: nan,
                        q10: nan,
                        q25: nan,
                        q75: nan,
                        q90: nan,
                        q975: nan,
                        n_missing,
                    };
                }
                let n = defined.len() as f64;
                let mean = defined.iter().sum::<f64>() / n;
                let sd = if defined.len() > 1 {
                    (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                let q = |p| quantile_sorted(&defined, p);
                EstimandSummary {
                    time,
                    mean,
                    sd,
                    median: q(0.5),
                    q025: q(0.025),
                    q10: q(0.1),
                    q25: q(0.25),
                    q75: q(0.75),
                    q90: q(0.9),
                    q975: q(0.975),
                    n_missing,
                }
            })
            .collect()
    }
}

/// The marginal survival machinery for one draw, population and treatment:
/// an individual-level survival model and one linear predictor per
/// integration point.
#[derive(Debug, Clone)]
pub struct MarginalCurve<'a> {
    model: SurvivalModel<'a>,
    etas: Vec<f64>,
    ln_n: f64,
}

impl<'a> MarginalCurve<'a> {
    pub fn new(family: Family, aux: Aux<'a>, etas: Vec<f64>) -> Result<Self, PopulationError> {
        let model = SurvivalModel::new(family, aux)?;
        let ln_n = (etas.len() as f64).ln();
        Ok(Self { model, etas, ln_n })
    }

    fn check(t: f64) -> Result<(), PopulationError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(PopulationError::InvalidTime(t));
        }
        Ok(())
    }

    /// log S̄(t) by log-sum-exp over integration points.
    pub fn log_survival(&self, t: f64) -> Result<f64, PopulationError> {
        Self::check(t)?;
        let logs: Vec<f64> = self.etas.iter().map(|&e| self.model.log_survival(e, t)).collect::<Result<_, _>>()?;
        Ok(log_sum_exp(&logs) - self.ln_n)
    }

    /// Population-average survival S̄(t) (exactly 1 at t = 0).
    pub fn survival(&self, t: f64) -> Result<f64, PopulationError> {
        Ok(self.log_survival(t)?.exp())
    }

    /// H̄(t) = −log S̄(t).
    pub fn cumulative_hazard(&self, t: f64) -> Result<f64, PopulationError> {
        Ok(-self.survival(t)?.ln())
    }

    /// Survival-weighted average hazard; `None` where S̄ has underflowed.
    pub fn hazard(&self, t: f64) -> Result<Option<f64>, PopulationError> {
        Self::check(t)?;
        let mut log_s = Vec::with_capacity(self.etas.len());
        let mut log_sh = Vec::with_capacity(self.etas.len());
        for &e in &self.etas {
            let (ls, lh) = self.model.log_surv_haz(e, t)?;
            log_s.push(ls);
            log_sh.push(ls + lh);
        }
        let denom = log_sum_exp(&log_s);
        if denom == f64::NEG_INFINITY || (denom - self.ln_n).exp() == 0.0 {
            return Ok(None);
        }
        Ok(Some((log_sum_exp(&log_sh) - denom).exp()))
    }

    /// Smallest t with S̄(t) = 1 − α, or `None` if S̄ stays above 1 − α up to
    /// `horizon`.
    pub fn quantile(&self, alpha: f64, horizon: f64) -> Result<Option<f64>, PopulationError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(PopulationError::InvalidAlpha(alpha));
        }
        let target = 1.0 - alpha;
        let f = |t: f64| self.survival(t).map(|s| s - target);
        if f(horizon)? > 0.0 {
            return Ok(None);
        }
        // Bracket by geometric expansion from a small starting point.
        let mut lo = 0.0;
        let mut hi = horizon / 1024.0;
        while f(hi)? > 0.0 {
            lo = hi;
            hi = (hi * 2.0).min(horizon);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(Some(0.5 * (lo + hi)))
    }

    /// ∫₀^{t*} S̄(t) dt by adaptive Simpson quadrature; `t* = ∞` uses the
    /// substitution t = u/(1 − u).
    pub fn rmst(&self, t_star: f64) -> Result<f64, PopulationError> {
        if !(t_star > 0.0) {
            return Err(PopulationError::InvalidHorizon(t_star));
        }
        if t_star.is_infinite() {
            let g = |u: f64| -> Result<f64, PopulationError> {
                if u >= 1.0 {
                    return Ok(0.0);
                }
                let t = u / (1.0 - u);
                Ok(self.survival(t)? / (1.0 - u).powi(2))
            };
            return adaptive_simpson(&g, 0.0, 1.0, 1e-9);
        }
        adaptive_simpson(&|t| self.survival(t), 0.0, t_star, 1e-9 * t_star)
    }
}

/// Adaptive Simpson integration of `f` over [a, b] to absolute tolerance
/// `tol`.
pub fn adaptive_simpson<E, F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, E>
where
    F: Fn(f64) -> Result<f64, E>,
{
    fn recurse<E, F: Fn(f64) -> Result<f64, E>>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64, E> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    // Start from a few panels so narrow features are not missed.
    let panels = 8;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (f0, fm, f1) = (f(x0)?, f(0.5 * (x0 + x1))?, f(x1)?);
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += recurse(f, x0, x1, f0, fm, f1, whole, tol / panels as f64, 40)?;
    }
    Ok(total)
}

/// Evenly spaced times from 0 to the population's largest observed time.
pub fn default_time_grid(model: &Model, population: &TargetPopulation, n: usize) -> Vec<f64> {
    let t_max = population
        .baseline_study
        .map(|j| model.network().studies[j].max_time())
        .unwrap_or_else(|| model.network().studies.iter().map(|s| s.max_time()).fold(0.0, f64::max));
    (0..n).map(|i| t_max * i as f64 / (n - 1).max(1) as f64).collect()
}

/// Extrapolation horizon: the upper boundary knot for spline baselines,
/// otherwise five times the largest observed time.
pub fn extrapolation_horizon(model: &Model, population: &TargetPopulation) -> f64 {
    let j = population.baseline_study.unwrap_or(0);
    if model.options().family.is_spline() {
        if let Ok(b) = model.baseline_params(&vec![0.0; model.dim()], j, None) {
            if let Some((basis, _)) = b.spline {
                return basis.knots().upper();
            }
        }
    }
    5.0 * model.network().studies[j].max_time()
}

fn treatment_name(model: &Model, k: usize) -> Result<String, PopulationError> {
    model.network().treatments.get(k).cloned().ok_or(PopulationError::UnknownTreatment(k))
}

/// Linear predictors at each integration point for treatment `k`.
fn population_etas(model: &Model, theta: &[f64], pop: &TargetPopulation, k: usize) -> Result<Vec<f64>, PopulationError> {
    let j = pop.baseline()?;
    let (base, coef) = model.predictor_parts(theta, j, k)?;
    let m = model.centering();
    if pop.grid.n_covariates() != m.len() {
        return Err(PopulationError::GridColumns { expected: m.len(), got: pop.grid.n_covariates() });
    }
    Ok(pop
        .grid
        .rows()
        .map(|x| base + x.iter().zip(m).zip(&coef).map(|((v, c), b)| (v - c) * b).sum::<f64>())
        .collect())
}

/// Runs `f` on the marginal curve of each draw in parallel.
fn per_draw<F>(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    f: F,
) -> Result<Vec<Vec<f64>>, PopulationError>
where
    F: Fn(&MarginalCurve<'_>, &[f64]) -> Result<Vec<f64>, PopulationError> + Sync,
{
    treatment_name(model, k)?;
    let j = pop.baseline()?;
    let family = model.options().family;
    draws
        .par_iter()
        .map(|theta| {
            let etas = population_etas(model, theta, pop, k)?;
            let params = model.baseline_params(theta, j, None)?;
            let curve = match &params.spline {
                Some((basis, alpha)) => MarginalCurve::new(family, Aux::Spline { basis, alpha }, etas)?,
                None => MarginalCurve::new(family, Aux::Params(&params.aux), etas)?,
            };
            f(&curve, theta)
        })
        .collect()
}

fn curve_draws(
    name: &str,
    model: &Model,
    pop: &TargetPopulation,
    k: usize,
    times: &[f64],
    values: Vec<Vec<f64>>,
) -> Result<EstimandDraws, PopulationError> {
    let mut notes = Vec::new();
    let horizon = extrapolation_horizon(model, pop);
    let observed = pop.baseline_study.map_or(0.0, |j| model.network().studies[j].max_time());
    if times.iter().any(|&t| t > observed) {
        notes.push(format!("times beyond {observed} are extrapolated (horizon {horizon})"));
    }
    Ok(EstimandDraws {
        name: name.into(),
        population: pop.label.clone(),
        treatment: treatment_name(model, k)?,
        times: Some(times.to_vec()),
        values,
        notes,
    })
}

/// Relative effect d_ab(P) of `b` versus `a` at the population's mean
/// effect-modifier values. Only effect-modifier means are read.
pub fn conditional_effect(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    a: usize,
    b: usize,
) -> Result<EstimandDraws, PopulationError> {
    if model.options().consistency != Consistency::Consistency {
        return Err(PopulationError::RequiresConsistency);
    }
    let network = model.network();
    let (na, nb) = (treatment_name(model, a)?, treatment_name(model, b)?);
    let em = network.effect_modifier_columns();
    let mut em_means = Vec::with_capacity(em.len());
    for &c in &em {
        let mean = pop.means.get(c).copied().flatten().ok_or_else(|| PopulationError::MissingEffectModifierMean {
            population: pop.label.clone(),
            covariate: network.schema[c].name.clone(),
        })?;
        em_means.push(mean - model.centering()[c]);
    }
    let values = draws
        .iter()
        .map(|theta| {
            let (d0, diff) = model
                .relative_effect_parts(theta, a, b)
                .ok_or(LikelihoodError::Dimension { expected: model.dim(), got: theta.len() })?;
            let mut d = d0;
            for (x, g) in em_means.iter().zip(&diff) {
                d += x * g;
            }
            Ok(vec![d])
        })
        .collect::<Result<_, PopulationError>>()?;
    Ok(EstimandDraws {
        name: "loghr".into(),
        population: pop.label.clone(),
        treatment: format!("{nb} vs {na}"),
        times: None,
        values,
        notes: vec![],
    })
}

pub fn marginal_survival(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    times: &[f64],
) -> Result<EstimandDraws, PopulationError> {
    let values = per_draw(model, draws, pop, k, |c, _| times.iter().map(|&t| c.survival(t)).collect())?;
    curve_draws("survival", model, pop, k, times, values)
}

pub fn marginal_cumhaz(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    times: &[f64],
) -> Result<EstimandDraws, PopulationError> {
    let values = per_draw(model, draws, pop, k, |c, _| times.iter().map(|&t| c.cumulative_hazard(t)).collect())?;
    curve_draws("cumhaz", model, pop, k, times, values)
}

/// Marginal hazard; points where S̄ has underflowed are NaN and noted.
pub fn marginal_hazard(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    times: &[f64],
) -> Result<EstimandDraws, PopulationError> {
    let values = per_draw(model, draws, pop, k, |c, _| {
        times.iter().map(|&t| c.hazard(t).map(|h| h.unwrap_or(f64::NAN))).collect()
    })?;
    let mut out = curve_draws("hazard", model, pop, k, times, values)?;
    let masked = out.values.iter().flatten().filter(|v| v.is_nan()).count();
    if masked > 0 {
        out.notes.push(format!("{masked} draw-time values masked where the marginal survival underflowed"));
    }
    Ok(out)
}

/// Per-draw survival quantile; NaN marks "not reached" within the horizon.
pub fn survival_quantile(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    alpha: f64,
) -> Result<EstimandDraws, PopulationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PopulationError::InvalidAlpha(alpha));
    }
    let horizon = extrapolation_horizon(model, pop);
    let values =
        per_draw(model, draws, pop, k, |c, _| Ok(vec![c.quantile(alpha, horizon)?.unwrap_or(f64::NAN)]))?;
    let missing = values.iter().filter(|v| v[0].is_nan()).count();
    let mut notes = Vec::new();
    if missing > 0 {
        notes.push(format!("not reached within the search horizon {horizon} in {missing} draws"));
    }
    Ok(EstimandDraws {
        name: format!("quantile_{alpha}"),
        population: pop.label.clone(),
        treatment: treatment_name(model, k)?,
        times: None,
        values,
        notes,
    })
}

/// Restricted mean survival time up to `t_star` (which may be infinite for
/// parametric families with a finite mean).
pub fn rmst(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    k: usize,
    t_star: f64,
) -> Result<EstimandDraws, PopulationError> {
    let family = model.options().family;
    if t_star.is_infinite() && family.is_spline() {
        return Err(PopulationError::InfiniteHorizonSpline);
    }
    let j = pop.baseline()?;
    let values = per_draw(model, draws, pop, k, |c, theta| {
        if t_star.is_infinite() && family == Family::LogLogistic {
            let shape = model.baseline_params(theta, j, None)?.aux[0];
            if shape <= 1.0 {
                return Err(PopulationError::InfiniteMean(shape));
            }
        }
        Ok(vec![c.rmst(t_star)?])
    })?;
    Ok(EstimandDraws {
        name: format!("rmst_{t_star}"),
        population: pop.label.clone(),
        treatment: treatment_name(model, k)?,
        times: None,
        values,
        notes: vec![],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContrastKind {
    HazardRatio,
    MedianRatio,
    MedianDifference,
    RmstDifference(f64),
}

/// Per-draw contrast of treatment `b` against `a` on the underlying marginal
/// estimands.
pub fn marginal_contrast(
    model: &Model,
    draws: &[&[f64]],
    pop: &TargetPopulation,
    a: usize,
    b: usize,
    kind: ContrastKind,
    times: &[f64],
) -> Result<EstimandDraws, PopulationError> {
    let (ea, eb, name) = match kind {
        ContrastKind::HazardRatio => (
            marginal_hazard(model, draws, pop, a, times)?,
            marginal_hazard(model, draws, pop, b, times)?,
            "hr",
        ),
        ContrastKind::MedianRatio | ContrastKind::MedianDifference => (
            survival_quantile(model, draws, pop, a, 0.5)?,
            survival_quantile(model, draws, pop, b, 0.5)?,
            if kind == ContrastKind::MedianRatio { "median_ratio" } else { "median_difference" },
        ),
        ContrastKind::RmstDifference(t) => {
            (rmst(model, draws, pop, a, t)?, rmst(model, draws, pop, b, t)?, "rmst_difference")
        }
    };
    let values = ea
        .values
        .iter()
        .zip(&eb.values)
        .map(|(va, vb)| {
            va.iter()
                .zip(vb)
                .map(|(x, y)| match kind {
                    ContrastKind::HazardRatio | ContrastKind::MedianRatio => y / x,
                    _ => y - x,
                })
                .collect()
        })
        .collect();
    let mut notes = ea.notes;
    notes.extend(eb.notes);
    notes.dedup();
    Ok(EstimandDraws {
        name: name.into(),
        population: pop.label.clone(),
        treatment: format!("{} vs {}", eb.treatment, ea.treatment),
        times: ea.times,
        values,
        notes,
    })
}
