//! Predictive model comparison: Pareto-smoothed importance-sampling
//! leave-one-out cross-validation, WAIC, and ELPD differences.

use crate::special::log_sum_exp;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error("log-likelihood matrix is empty")]
    Empty,
    #[error("log-likelihood matrix is ragged: draw {draw} has {got} observations, expected {expected}")]
    Ragged { draw: usize, expected: usize, got: usize },
    #[error("models are scored on different observations ({0} vs {1})")]
    MismatchedObservations(usize, usize),
    #[error("grouping labels {got} observations but the reports have {expected}")]
    GroupingLength { expected: usize, got: usize },
    #[error("at least one model is required for comparison")]
    NoModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Loo,
    Waic,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Loo => "looic",
            Criterion::Waic => "waic",
        }
    }
}

/// Expected log pointwise predictive density with its effective number of
/// parameters and information criterion (−2·elpd).
#[derive(Debug, Clone, PartialEq)]
pub struct ElpdReport {
    pub criterion_kind: Criterion,
    pub elpd: f64,
    pub se_elpd: f64,
    pub p_eff: f64,
    pub se_p_eff: f64,
    pub criterion: f64,
    pub se_criterion: f64,
    pub pointwise_elpd: Vec<f64>,
    pub pointwise_p: Vec<f64>,
    /// Monte Carlo standard error of each pointwise elpd.
    pub pointwise_mcse: Vec<f64>,
    /// Pareto shape diagnostics (LOO only).
    pub pareto_k: Option<Vec<f64>>,
    pub n_draws: usize,
    pub warnings: Vec<String>,
}

impl ElpdReport {
    pub fn n_observations(&self) -> usize {
        self.pointwise_elpd.len()
    }

    /// Observations with Pareto k̂ above 0.7.
    pub fn high_pareto_k(&self) -> Vec<usize> {
        self.pareto_k
            .as_ref()
            .map(|k| k.iter().enumerate().filter(|(_, &v)| v > 0.7).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }
}

fn columns(log_lik: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ComparisonError> {
    let first = log_lik.first().ok_or(ComparisonError::Empty)?;
    let n = first.len();
    if n == 0 {
        return Err(ComparisonError::Empty);
    }
    if let Some((draw, row)) = log_lik.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(ComparisonError::Ragged { draw, expected: n, got: row.len() });
    }
    Ok((0..n).into_par_iter().map(|i| log_lik.iter().map(|r| r[i]).collect()).collect())
}

fn sum_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sum: f64 = x.iter().sum();
    if x.len() < 2 {
        return (sum, 0.0);
    }
    let mean = sum / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (sum, (n * var).sqrt())
}

fn assemble(
    kind: Criterion,
    elpd_i: Vec<f64>,
    p_i: Vec<f64>,
    mcse_i: Vec<f64>,
    pareto_k: Option<Vec<f64>>,
    n_draws: usize,
) -> ElpdReport {
    let (elpd, se_elpd) = sum_and_se(&elpd_i);
    let (p_eff, se_p_eff) = sum_and_se(&p_i);
    let mut warnings = Vec::new();
    if n_draws < 400 {
        warnings.push(format!("only {n_draws} draws; at least 400 are recommended"));
    }
    if let Some(k) = &pareto_k {
        let high = k.iter().filter(|&&v| v > 0.7).count();
        if high > 0 {
            warnings.push(format!("{high} observations have Pareto k above 0.7; the estimate may be unreliable"));
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", kind.name());
    }
    ElpdReport {
        criterion_kind: kind,
        elpd,
        se_elpd,
        p_eff,
        se_p_eff,
        criterion: -2.0 * elpd,
        se_criterion: 2.0 * se_elpd,
        pointwise_elpd: elpd_i,
        pointwise_p: p_i,
        pointwise_mcse: mcse_i,
        pareto_k,
        n_draws,
        warnings,
    }
}

fn log_mean_exp(x: &[f64]) -> f64 {
    log_sum_exp(x) - (x.len() as f64).ln()
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Profile-likelihood (Zhang & Stephens) estimate of the generalized
/// Pareto shape `k` and scale `sigma` for sorted positive exceedances, with
/// the shape weakly regularised towards 0.5.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let x_star = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> =
        (1..=m).map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star).collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let b = -t;
            let k = x.iter().map(|v| (b * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((b / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp(&profile);
    let theta_hat: f64 = theta.iter().zip(&profile).map(|(t, l)| t * (l - lse).exp()).sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    sigma * (-k * (-p).ln_1p()).exp_m1() / k
}

/// Pareto-smoothed log importance weights (normalised) and k̂ for one
/// observation's raw log ratios.
pub fn psis_log_weights(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let mut k_hat = f64::INFINITY;
    if tail_len >= 5 && tail_len < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail_ids = &order[s - tail_len..];
        let tail: Vec<f64> = tail_ids.iter().map(|&i| lw[i]).collect();
        if (tail[tail_len - 1] - tail[0]).abs() < f64::EPSILON / 100.0 {
            k_hat = 0.0;
        } else {
            let cutoff = lw[order[s - tail_len - 1]];
            let exp_cutoff = cutoff.exp();
            let exceed: Vec<f64> = tail.iter().map(|v| v.exp() - exp_cutoff).collect();
            let (k, sigma) = gpd_fit(&exceed);
            if k.is_finite() {
                for (j, &i) in tail_ids.iter().enumerate() {
                    let p = (j as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, k, sigma) + exp_cutoff).ln();
                }
            }
            k_hat = k;
        }
    }
    for v in lw.iter_mut() {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    (lw, k_hat)
}

/// PSIS-LOO from a `draws × observations` log-likelihood matrix.
pub fn loo(log_lik: &[Vec<f64>]) -> Result<ElpdReport, ComparisonError> {
    let cols = columns(log_lik)?;
    let s = log_lik.len();
    let per_obs: Vec<(f64, f64, f64, f64)> = cols
        .par_iter()
        .map(|ll| {
            if is_constant(ll) {
                return (ll[0], 0.0, 0.0, 0.0);
            }
            let lpd = log_mean_exp(ll);
            let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_log_weights(&ratios);
            let terms: Vec<f64> = lw.iter().zip(ll).map(|(w, l)| w + l).collect();
            let elpd = log_sum_exp(&terms);
            // Delta-method Monte Carlo error of the weighted predictive density.
            let e = elpd.exp();
            let var: f64 = lw.iter().zip(ll).map(|(w, l)| (2.0 * w).exp() * (l.exp() - e).powi(2)).sum();
            let mcse = if e > 0.0 { var.sqrt() / e } else { f64::INFINITY };
            (elpd, lpd - elpd, mcse, k)
        })
        .collect();
    let elpd_i = per_obs.iter().map(|v| v.0).collect();
    let p_i = per_obs.iter().map(|v| v.1).collect();
    let mcse_i = per_obs.iter().map(|v| v.2).collect();
    let k = per_obs.iter().map(|v| v.3).collect();
    Ok(assemble(Criterion::Loo, elpd_i, p_i, mcse_i, Some(k), s))
}

/// WAIC from a `draws × observations` log-likelihood matrix.
pub fn waic(log_lik: &[Vec<f64>]) -> Result<ElpdReport, ComparisonError> {
    let cols = columns(log_lik)?;
    let s = log_lik.len();
    let per_obs: Vec<(f64, f64, f64)> = cols
        .par_iter()
        .map(|ll| {
            if is_constant(ll) {
                return (ll[0], 0.0, 0.0);
            }
            let n = ll.len() as f64;
            let lppd = log_mean_exp(ll);
            let mean = ll.iter().sum::<f64>() / n;
            let p = ll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let lik: Vec<f64> = ll.iter().map(|v| (v - lppd).exp()).collect();
            let var_lik = lik.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
            (lppd - p, p, (var_lik / n).sqrt())
        })
        .collect();
    let elpd_i = per_obs.iter().map(|v| v.0).collect();
    let p_i = per_obs.iter().map(|v| v.1).collect();
    let mcse_i = per_obs.iter().map(|v| v.2).collect();
    Ok(assemble(Criterion::Waic, elpd_i, p_i, mcse_i, None, s))
}

/// One row of a comparison table: a model relative to the best model.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    /// Group label ("overall" or a study id).
    pub group: String,
    pub elpd: f64,
    pub se_elpd: f64,
    pub p_eff: f64,
    pub criterion: f64,
    /// elpd(model) − elpd(best); zero for the best model.
    pub elpd_diff: f64,
    pub se_diff: f64,
}

/// Difference of `a` minus `b` in total elpd with its standard error, over
/// the selected observations.
pub fn elpd_difference(a: &ElpdReport, b: &ElpdReport, subset: Option<&[usize]>) -> Result<(f64, f64), ComparisonError> {
    if a.n_observations() != b.n_observations() {
        return Err(ComparisonError::MismatchedObservations(a.n_observations(), b.n_observations()));
    }
    let diffs: Vec<f64> = match subset {
        Some(idx) => idx.iter().map(|&i| a.pointwise_elpd[i] - b.pointwise_elpd[i]).collect(),
        None => a.pointwise_elpd.iter().zip(&b.pointwise_elpd).map(|(x, y)| x - y).collect(),
    };
    Ok(sum_and_se(&diffs))
}

/// Compares models overall and, when `groups` gives a label per
/// observation, within each group. Rows are ordered best-first per group.
pub fn compare(
    reports: &[(String, ElpdReport)],
    groups: Option<&[String]>,
) -> Result<Vec<ComparisonRow>, ComparisonError> {
    let (_, first) = reports.first().ok_or(ComparisonError::NoModels)?;
    let n = first.n_observations();
    for (_, r) in reports {
        if r.n_observations() != n {
            return Err(ComparisonError::MismatchedObservations(n, r.n_observations()));
        }
    }
    let mut sets: Vec<(String, Vec<usize>)> = vec![("overall".to_string(), (0..n).collect())];
    if let Some(g) = groups {
        if g.len() != n {
            return Err(ComparisonError::GroupingLength { expected: n, got: g.len() });
        }
        let mut labels: Vec<&String> = Vec::new();
        for l in g {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        for l in labels {
            sets.push((l.clone(), (0..n).filter(|&i| &g[i] == l).collect()));
        }
    }
    let mut rows = Vec::new();
    for (label, idx) in &sets {
        let subset = |r: &ElpdReport| -> (f64, f64, f64) {
            let e: Vec<f64> = idx.iter().map(|&i| r.pointwise_elpd[i]).collect();
            let (elpd, se) = sum_and_se(&e);
            let p: f64 = idx.iter().map(|&i| r.pointwise_p[i]).sum();
            (elpd, se, p)
        };
        let stats: Vec<(f64, f64, f64)> = reports.iter().map(|(_, r)| subset(r)).collect();
        let best = (0..reports.len()).max_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0)).expect("non-empty");
        let mut order: Vec<usize> = (0..reports.len()).collect();
        order.sort_by(|&a, &b| stats[b].0.total_cmp(&stats[a].0));
        for m in order {
            let (diff, se_diff) = if m == best {
                (0.0, 0.0)
            } else {
                elpd_difference(&reports[m].1, &reports[best].1, Some(idx))?
            };
            rows.push(ComparisonRow {
                model: reports[m].0.clone(),
                group: label.clone(),
                elpd: stats[m].0,
                se_elpd: stats[m].1,
                p_eff: stats[m].2,
                criterion: -2.0 * stats[m].0,
                elpd_diff: diff,
                se_diff,
            });
        }
    }
    Ok(rows)
}
