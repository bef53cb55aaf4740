//! End-to-end model fitting: binds a network to a model, runs the
//! integration-adequacy managed sampler, and summarises the posterior on the
//! reporting scale.

use crate::comparison::{loo, waic, ComparisonError, ElpdReport};
use crate::data::Network;
use crate::likelihood::{LikelihoodError, Model, ModelOptions};
use crate::sampler::{
    integration_adequacy_run, summarise, AdequacyConfig, AdequacyError, AuditEntry, ParameterSummary,
    PosteriorDraws, SamplerConfig, TargetFamily,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("model: {0}")]
    Model(#[from] LikelihoodError),
    #[error("sampling: {0}")]
    Adequacy(#[from] AdequacyError),
    #[error("model comparison: {0}")]
    Comparison(#[from] ComparisonError),
}

/// The model at any number of integration points.
struct ModelTargets<'a> {
    base: &'a Model,
}

impl TargetFamily for ModelTargets<'_> {
    type Target = Model;

    fn target(&self, n_int: usize) -> Result<Model, String> {
        if n_int == self.base.n_int() {
            return Ok(self.base.clone());
        }
        self.base.with_n_int(n_int).map_err(|e| e.to_string())
    }

    fn needs_integration(&self) -> bool {
        self.base.network().has_agd()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.base.parameter_names().to_vec()
    }
}

/// A fitted model: the model at the accepted number of integration points
/// and its posterior draws (with the pointwise log likelihood attached).
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Model,
    pub draws: PosteriorDraws,
    pub audit: Vec<AuditEntry>,
    /// Whether integration adequacy was checked (aggregate data present).
    pub adequacy_checked: bool,
}

/// Fits `options` to `network`. The initial number of integration points
/// is `adequacy.initial_n_int`.
pub fn fit(
    network: &Network,
    options: ModelOptions,
    sampler: &SamplerConfig,
    adequacy: &AdequacyConfig,
) -> Result<Fit, FitError> {
    let options = ModelOptions { n_int: adequacy.initial_n_int, ..options };
    let base = Model::new(network, options)?;
    let outcome = integration_adequacy_run(&ModelTargets { base: &base }, sampler, adequacy)?;
    let model = if outcome.n_int == base.n_int() { base } else { base.with_n_int(outcome.n_int)? };
    let mut draws = outcome.draws;
    draws.attach_log_lik(|theta| model.pointwise_loglik(theta));
    Ok(Fit { model, draws, audit: outcome.audit, adequacy_checked: outcome.checked })
}

impl Fit {
    /// Per-chain draws on the reporting scale, with their names.
    pub fn report_draws(&self) -> (Vec<String>, Vec<Vec<Vec<f64>>>) {
        let names = self
            .draws
            .iter()
            .next()
            .map(|d| self.model.report_values(d).into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default();
        let chains = self
            .draws
            .map_chains(|d| self.model.report_values(d).into_iter().map(|(_, v)| v).collect::<Vec<f64>>());
        (names, chains)
    }

    /// Posterior summaries on the reporting scale.
    pub fn summaries(&self) -> Vec<ParameterSummary> {
        let (names, chains) = self.report_draws();
        (0..names.len())
            .map(|i| {
                let traces: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|d| d[i]).collect()).collect();
                summarise(&names[i], &traces)
            })
            .collect()
    }

    /// All draws as slices, chain-major.
    pub fn draw_refs(&self) -> Vec<&[f64]> {
        self.draws.iter().collect()
    }

    fn log_lik(&self) -> &[Vec<f64>] {
        self.draws.log_lik.as_deref().expect("log likelihood attached at fit time")
    }

    pub fn loo(&self) -> Result<ElpdReport, FitError> {
        Ok(loo(self.log_lik())?)
    }

    pub fn waic(&self) -> Result<ElpdReport, FitError> {
        Ok(waic(self.log_lik())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, Study, StudyKind, SurvivalRow};
    use crate::survival::Family;

    fn exp_network(rate_a: f64, rate_b: f64) -> Network {
        // Deterministic exponential quantiles so the MLE is known.
        let rows = |rate: f64| -> Vec<SurvivalRow> {
            (0..200)
                .map(|i| {
                    let u = (i as f64 + 0.5) / 200.0;
                    SurvivalRow { time: -(1.0 - u).ln() / rate, status: true, covariates: Some(vec![]) }
                })
                .collect()
        };
        let study = Study {
            id: "S".into(),
            kind: StudyKind::Ipd,
            arms: vec![
                Arm { treatment: 0, rows: rows(rate_a), summary: None },
                Arm { treatment: 1, rows: rows(rate_b), summary: None },
            ],
            summary: None,
            knots: None,
        };
        Network::new(vec!["A".into(), "B".into()], vec![], vec![study], None).unwrap()
    }

    #[test]
    fn exponential_fit_recovers_rates() {
        let net = exp_network(2.0, 0.5);
        let cfg = SamplerConfig { chains: 2, warmup: 300, samples: 300, seed: 3, ..SamplerConfig::default() };
        let fit = fit(&net, ModelOptions::new(Family::ExpPh), &cfg, &AdequacyConfig::default()).unwrap();
        assert!(!fit.adequacy_checked);
        assert!(fit.audit.is_empty());
        let s = fit.summaries();
        let get = |n: &str| s.iter().find(|p| p.name == n).unwrap();
        // Posterior mean of the log rate is close to log(n / Σt).
        let mu = get("mu[S]");
        let total_a: f64 = net.studies[0].arms[0].rows.iter().map(|r| r.time).sum();
        let mle = (200.0 / total_a).ln();
        assert!((mu.mean - mle).abs() < 3.0 * mu.sd, "{} vs {mle}", mu.mean);
        let g = get("gamma[B]");
        assert!((g.mean - (0.25f64).ln()).abs() < 0.3);
        assert!(g.rhat.value < 1.05);
        let l = fit.loo().unwrap();
        assert_eq!(l.n_observations(), 400);
        assert!(l.elpd.is_finite());
    }
}
