//! No-U-Turn Hamiltonian Monte Carlo with windowed warmup adaptation,
//! convergence diagnostics, and the integration-adequacy procedure.

pub mod adequacy;
pub mod diagnostics;
mod nuts;

use crate::likelihood::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use adequacy::{
    classify, integration_adequacy_run, AdequacyBranch, AdequacyConfig, AdequacyError, AdequacyOutcome, AuditEntry,
    TargetFamily,
};
pub use diagnostics::{ess, rhat, rhat_classic, summarise, Diagnostic, ParameterSummary};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `theta`; writes the gradient into `grad`. Non-finite
    /// values are allowed and are treated as divergent.
    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    /// Human-readable location of a non-finite density or gradient.
    fn describe_non_finite(&self, theta: &[f64]) -> String {
        let mut g = vec![0.0; self.dim()];
        let lp = self.log_density_gradient(theta, &mut g);
        match g.iter().position(|v| !v.is_finite()) {
            Some(i) => format!("gradient component {i} is not finite"),
            None => format!("log density is {lp}"),
        }
    }
}

impl LogDensity for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        Model::log_density_gradient(self, theta, grad)
    }

    fn describe_non_finite(&self, theta: &[f64]) -> String {
        match self.log_posterior_and_gradient(theta) {
            Err(e) => e.to_string(),
            Ok((lp, _)) => format!("log posterior is {lp}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite initial density after {attempts} attempts ({detail})")]
    InitialDensity { chain: usize, attempts: usize, detail: String },
    #[error("chain {chain}: step size adaptation failed ({detail})")]
    StepSize { chain: usize, detail: String },
    #[error(
        "{divergent} of {total} post-warmup transitions diverged ({:.1}%); increase the target acceptance \
         rate, lengthen warmup, or reparameterise / tighten priors",
        100.0 * *divergent as f64 / *total as f64
    )]
    TooManyDivergences { divergent: usize, total: usize },
}

/// Sampler settings shared by all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
    /// Initial values are drawn uniformly from (−radius, radius).
    pub init_radius: f64,
    /// Post-warmup divergent fraction above which sampling fails.
    pub max_divergent_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            seed: 1,
            target_accept: 0.8,
            max_depth: 10,
            init_radius: 2.0,
            max_divergent_fraction: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.chains < 1 {
            return bad("at least one chain is required");
        }
        if self.warmup < 150 {
            return bad("warmup must be at least 150 iterations");
        }
        if self.samples < 1 {
            return bad("at least one post-warmup sample is required");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if self.max_depth == 0 {
            return bad("maximum tree depth must be positive");
        }
        Ok(())
    }
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `samples × dim` unconstrained draws.
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub divergent: Vec<bool>,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

impl ChainDraws {
    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }
}

/// Draws from all chains, plus the per-draw pointwise log likelihood when
/// attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    /// `total draws × observations`, in chain-major draw order.
    pub log_lik: Option<Vec<Vec<f64>>>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_samples(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// Every draw in chain-major order.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    /// Per-chain traces of parameter `i`.
    pub fn parameter(&self, i: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| d[i]).collect()).collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(ChainDraws::divergences).sum()
    }

    /// Applies `f` to every draw (in parallel) and stores the result as the
    /// pointwise log-likelihood matrix.
    pub fn attach_log_lik<F>(&mut self, f: F)
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let draws: Vec<&[f64]> = self.iter().collect();
        self.log_lik = Some(draws.par_iter().map(|d| f(d)).collect());
    }

    /// Applies `f` to every draw and returns the results per chain, keeping
    /// chain structure (for diagnostics of derived quantities).
    pub fn map_chains<T: Send, F>(&self, f: F) -> Vec<Vec<T>>
    where
        F: Fn(&[f64]) -> T + Sync,
    {
        self.chains.par_iter().map(|c| c.draws.iter().map(|d| f(d)).collect()).collect()
    }

    /// Convergence and location summaries for each parameter.
    pub fn summaries(&self) -> Vec<ParameterSummary> {
        (0..self.n_params()).map(|i| summarise(&self.names[i], &self.parameter(i))).collect()
    }
}

/// Runs `config.chains` chains on the same target.
pub fn sample<T: LogDensity>(
    target: &T,
    names: Vec<String>,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let targets: Vec<&T> = vec![target; config.chains];
    sample_chains(&targets, names, config)
}

/// Runs one chain per target (chain `c` samples `targets[c]`); each chain's
/// random stream depends only on the seed and its index, so results do not
/// depend on the thread count.
pub fn sample_chains<T: LogDensity>(
    targets: &[&T],
    names: Vec<String>,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    if targets.len() != config.chains {
        return Err(SamplerError::InvalidConfig(format!(
            "{} targets supplied for {} chains",
            targets.len(),
            config.chains
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.dim() != names.len()) {
        return Err(SamplerError::InvalidConfig(format!(
            "target has dimension {} but {} parameter names were given",
            t.dim(),
            names.len()
        )));
    }
    let chains = targets
        .par_iter()
        .enumerate()
        .map(|(c, t)| {
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64 + 1);
            nuts::run_chain(*t, config, c, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let divergent: usize = chains.iter().map(ChainDraws::divergences).sum();
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    if divergent as f64 > config.max_divergent_fraction * total as f64 {
        return Err(SamplerError::TooManyDivergences { divergent, total });
    }
    Ok(PosteriorDraws { names, chains, log_lik: None })
}

#[cfg(test)]
mod tests;
