//! Checking that the number of integration points is adequate by running
//! half the chains at Ñ and half at ⌈Ñ/2⌉ and comparing R̂ within and across
//! the two groups.

use super::{rhat, sample_chains, LogDensity, PosteriorDraws, SamplerConfig, SamplerError};
use thiserror::Error;

/// Action implied by one round of R̂ values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdequacyBranch {
    /// Chains disagree within a same-Ñ group: the sampler has not converged,
    /// so rerun with more iterations.
    RerunLonger,
    /// Chains agree within groups but not across them: the integration error
    /// is visible, so double Ñ.
    DoubleIntegration,
    /// Everything below threshold.
    Accept,
}

impl std::fmt::Display for AdequacyBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdequacyBranch::RerunLonger => "rerun_longer",
            AdequacyBranch::DoubleIntegration => "double_integration",
            AdequacyBranch::Accept => "accept",
        })
    }
}

/// The branch taken for the largest within-group and all-chain R̂ values.
/// Non-finite values count as exceeding the threshold.
pub fn classify(rhat_within_max: f64, rhat_all_max: f64, threshold: f64) -> AdequacyBranch {
    let exceeds = |v: f64| !(v <= threshold);
    if exceeds(rhat_within_max) {
        AdequacyBranch::RerunLonger
    } else if exceeds(rhat_all_max) {
        AdequacyBranch::DoubleIntegration
    } else {
        AdequacyBranch::Accept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdequacyConfig {
    pub threshold: f64,
    pub initial_n_int: usize,
    pub max_n_int: usize,
    /// How many times post-warmup samples may be doubled (across the whole
    /// run) before giving up on sampler convergence.
    pub max_longer_reruns: usize,
}

impl Default for AdequacyConfig {
    fn default() -> Self {
        Self { threshold: 1.05, initial_n_int: 64, max_n_int: 4096, max_longer_reruns: 3 }
    }
}

/// One round of the procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub n_int: usize,
    pub n_int_half: usize,
    pub samples: usize,
    pub rhat_all_max: f64,
    pub rhat_within_max: f64,
    /// Parameter attaining the largest all-chain R̂.
    pub worst_parameter: String,
    pub branch: AdequacyBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdequacyOutcome {
    pub draws: PosteriorDraws,
    pub n_int: usize,
    pub audit: Vec<AuditEntry>,
    /// Whether aggregate data were present (otherwise one plain run).
    pub checked: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdequacyError {
    #[error("sampling failed at Ñ = {n_int}: {source}")]
    Sampler { n_int: usize, source: SamplerError, audit: Vec<AuditEntry> },
    #[error("building the target at Ñ = {n_int} failed: {message}")]
    Target { n_int: usize, message: String, audit: Vec<AuditEntry> },
    #[error("integration points would exceed the maximum of {max} without convergence across Ñ")]
    MaxIntegrationPoints { max: usize, audit: Vec<AuditEntry> },
    #[error("chains failed to converge after {reruns} reruns with doubled samples (sampler failure, not integration error)")]
    SamplerNonConvergence { reruns: usize, audit: Vec<AuditEntry> },
}

impl AdequacyError {
    pub fn audit(&self) -> &[AuditEntry] {
        match self {
            AdequacyError::Sampler { audit, .. }
            | AdequacyError::Target { audit, .. }
            | AdequacyError::MaxIntegrationPoints { audit, .. }
            | AdequacyError::SamplerNonConvergence { audit, .. } => audit,
        }
    }
}

/// A posterior indexed by the number of integration points.
pub trait TargetFamily {
    type Target: LogDensity;
    fn target(&self, n_int: usize) -> Result<Self::Target, String>;
    /// Whether any integration is involved; if not, a single run suffices.
    fn needs_integration(&self) -> bool;
    fn parameter_names(&self) -> Vec<String>;
}

fn max_rhat(draws: &PosteriorDraws, chains: &[usize]) -> (f64, usize) {
    let mut worst = (f64::NEG_INFINITY, 0);
    for i in 0..draws.n_params() {
        let traces: Vec<Vec<f64>> = chains.iter().map(|&c| draws.chains[c].draws.iter().map(|d| d[i]).collect()).collect();
        let refs: Vec<&[f64]> = traces.iter().map(Vec::as_slice).collect();
        let r = rhat(&refs).value;
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > worst.0 {
            worst = (r, i);
        }
    }
    worst
}

/// Runs the adequacy loop: sample, classify, then rerun longer, double Ñ,
/// or accept.
pub fn integration_adequacy_run<F: TargetFamily + Sync>(
    family: &F,
    sampler: &SamplerConfig,
    config: &AdequacyConfig,
) -> Result<AdequacyOutcome, AdequacyError>
where
    F::Target: Sync,
{
    let names = family.parameter_names();
    let mut audit = Vec::new();
    let mut n_int = config.initial_n_int;
    let mut cfg = sampler.clone();

    if !family.needs_integration() {
        let target = family
            .target(n_int)
            .map_err(|message| AdequacyError::Target { n_int, message, audit: audit.clone() })?;
        let draws = super::sample(&target, names, &cfg)
            .map_err(|source| AdequacyError::Sampler { n_int, source, audit: audit.clone() })?;
        return Ok(AdequacyOutcome { draws, n_int, audit, checked: false });
    }

    let n_first = cfg.chains.div_ceil(2);
    let mut reruns = 0;
    loop {
        if n_int > config.max_n_int {
            return Err(AdequacyError::MaxIntegrationPoints { max: config.max_n_int, audit });
        }
        let half = n_int.div_ceil(2);
        let full_target =
            family.target(n_int).map_err(|message| AdequacyError::Target { n_int, message, audit: audit.clone() })?;
        let half_target =
            family.target(half).map_err(|message| AdequacyError::Target { n_int: half, message, audit: audit.clone() })?;
        let targets: Vec<&F::Target> =
            (0..cfg.chains).map(|c| if c < n_first { &full_target } else { &half_target }).collect();
        let draws = sample_chains(&targets, names.clone(), &cfg)
            .map_err(|source| AdequacyError::Sampler { n_int, source, audit: audit.clone() })?;

        let all: Vec<usize> = (0..cfg.chains).collect();
        let (rhat_all_max, worst) = max_rhat(&draws, &all);
        let groups = [(0..n_first).collect::<Vec<_>>(), (n_first..cfg.chains).collect()];
        let rhat_within_max = groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| max_rhat(&draws, g).0)
            .fold(f64::NEG_INFINITY, f64::max);
        let branch = classify(rhat_within_max, rhat_all_max, config.threshold);
        log::info!(
            "adequacy: N={n_int} (half {half}), samples={}, max R-hat all={rhat_all_max:.4}, within={rhat_within_max:.4} -> {branch}",
            cfg.samples
        );
        audit.push(AuditEntry {
            n_int,
            n_int_half: half,
            samples: cfg.samples,
            rhat_all_max,
            rhat_within_max,
            worst_parameter: names[worst].clone(),
            branch,
        });
        match branch {
            AdequacyBranch::Accept => return Ok(AdequacyOutcome { draws, n_int, audit, checked: true }),
            AdequacyBranch::RerunLonger => {
                if reruns >= config.max_longer_reruns {
                    return Err(AdequacyError::SamplerNonConvergence { reruns, audit });
                }
                reruns += 1;
                cfg.samples *= 2;
            }
            AdequacyBranch::DoubleIntegration => n_int *= 2,
        }
    }
}
