//! Split R̂ (rank-normalised and classic), effective sample size and
//! per-parameter summaries.

use crate::special::norm_quantile;

/// A diagnostic value with a flag for degenerate (zero-variance) input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostic {
    pub value: f64,
    pub degenerate: bool,
}

impl Diagnostic {
    fn degenerate(value: f64) -> Self {
        Self { value, degenerate: true }
    }

    fn ok(value: f64) -> Self {
        Self { value, degenerate: false }
    }
}

/// Splits every chain into halves, dropping the middle draw of odd-length
/// chains.
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains.iter().flat_map(|c| c.first()).next().copied();
    first.is_none_or(|f| chains.iter().flatten().all(|v| *v == f))
}

/// Between/within R̂ on already split chains of equal length.
fn rhat_of_split(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * sample_var(&means);
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Fractional ranks with ties averaged, mapped through the normal quantile.
fn rank_normalise(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len();
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            ranks[item.1] = r;
        }
        i = j + 1;
    }
    let mut k = 0;
    chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| {
                    let z = norm_quantile((ranks[k] - 0.375) / (s as f64 + 0.25));
                    k += 1;
                    z
                })
                .collect()
        })
        .collect()
}

fn check_shape(chains: &[&[f64]]) -> bool {
    !chains.is_empty() && chains.iter().all(|c| c.len() >= 4 && c.len() == chains[0].len())
}

/// Rank-normalised split R̂: the larger of the bulk and folded (tail)
/// statistics. Constant input gives +∞ flagged as degenerate; malformed
/// input (fewer than four draws, unequal lengths) gives NaN.
pub fn rhat(chains: &[&[f64]]) -> Diagnostic {
    if !check_shape(chains) {
        return Diagnostic::degenerate(f64::NAN);
    }
    let split = split(chains);
    if is_constant(&split) {
        return Diagnostic::degenerate(f64::INFINITY);
    }
    let bulk = rhat_of_split(&rank_normalise(&split));
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let m = pooled.len();
    let median = if m % 2 == 1 { pooled[m / 2] } else { 0.5 * (pooled[m / 2 - 1] + pooled[m / 2]) };
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - median).abs()).collect()).collect();
    let tail = if is_constant(&folded) { 1.0 } else { rhat_of_split(&rank_normalise(&folded)) };
    let value = bulk.max(tail);
    if value.is_finite() {
        Diagnostic::ok(value)
    } else {
        Diagnostic::degenerate(f64::INFINITY)
    }
}

/// Classic (non-rank) split R̂.
pub fn rhat_classic(chains: &[&[f64]]) -> Diagnostic {
    if !check_shape(chains) {
        return Diagnostic::degenerate(f64::NAN);
    }
    let split = split(chains);
    if is_constant(&split) {
        return Diagnostic::degenerate(f64::INFINITY);
    }
    let v = rhat_of_split(&split);
    if v.is_finite() {
        Diagnostic::ok(v)
    } else {
        Diagnostic::degenerate(f64::INFINITY)
    }
}

/// Autocovariance at `lag` (biased, normalised by n).
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Effective sample size from split chains using Geyer's initial monotone
/// sequence; capped at the total number of draws. Constant input is flagged
/// degenerate.
pub fn ess(chains: &[&[f64]]) -> Diagnostic {
    if !check_shape(chains) {
        return Diagnostic::degenerate(f64::NAN);
    }
    let split = split(chains);
    let total = split.iter().map(Vec::len).sum::<usize>() as f64;
    if is_constant(&split) {
        return Diagnostic::degenerate(f64::NAN);
    }
    let m = split.len() as f64;
    let n = split[0].len();
    let nf = n as f64;
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| split.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m;
    let acov0: Vec<f64> = split.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, 0)).collect();
    let mean_var = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if split.len() > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return Diagnostic::degenerate(f64::NAN);
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;
    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    rho_hat[1] = rho(1);
    let mut t = 0;
    let (mut even, mut odd) = (1.0, rho_hat[1]);
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if even + odd >= 0.0 {
            rho_hat[t] = even;
            rho_hat[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t] = even;
    }
    // Monotone sequence: pair sums may not increase.
    let mut k = 1;
    while k + 3 <= max_t {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    let tau = tau.max(1.0 / total.log10());
    Diagnostic::ok((total / tau).min(total))
}

/// Posterior summary of one parameter across chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub rhat: Diagnostic,
    pub ess: Diagnostic,
}

impl ParameterSummary {
    /// Monte Carlo standard error of the mean.
    pub fn mcse(&self) -> f64 {
        if self.ess.degenerate {
            0.0
        } else {
            self.sd / self.ess.value.sqrt()
        }
    }
}

/// Empirical quantile with linear interpolation (sorted input).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if sorted[lo] == sorted[hi] {
        // Also keeps infinite order statistics finite-arithmetic free.
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarise(name: &str, chains: &[Vec<f64>]) -> ParameterSummary {
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let mean_v = mean(&all);
    let sd = if all.len() > 1 { sample_var(&all).sqrt() } else { 0.0 };
    all.sort_by(f64::total_cmp);
    ParameterSummary {
        name: name.to_string(),
        mean: mean_v,
        sd,
        q025: quantile_sorted(&all, 0.025),
        median: quantile_sorted(&all, 0.5),
        q975: quantile_sorted(&all, 0.975),
        rhat: rhat(&refs),
        ess: ess(&refs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn iid_chains_converge() {
        let a = normals(1, 10_000, 0.0);
        let b = normals(2, 10_000, 0.0);
        let r = rhat(&[&a, &b]);
        assert!(r.value >= 0.999 && r.value <= 1.01, "{r:?}");
        let e = ess(&[&a, &b]).value / 20_000.0;
        assert!((0.8..=1.2).contains(&e), "{e}");
    }

    #[test]
    fn separated_chains_flagged() {
        let a = normals(3, 1000, 0.0);
        let b = normals(4, 1000, 5.0);
        // Rank normalisation bounds the statistic for fully separated chains.
        assert!(rhat(&[&a, &b]).value > 1.5);
        assert!(rhat_classic(&[&a, &b]).value > 2.0);
    }

    #[test]
    fn duplicated_chain_is_converged() {
        let a = normals(5, 2000, 0.0);
        let r = rhat(&[&a, &a]);
        assert!((r.value - 1.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn ar1_effective_sample_size() {
        let phi = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        x = phi * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let ratio = ess(&refs).value / 80_000.0;
        let expected = (1.0 - phi) / (1.0 + phi);
        assert!((ratio / expected - 1.0).abs() < 0.3, "{ratio} vs {expected}");
    }

    #[test]
    fn constant_draws_are_degenerate() {
        let a = vec![2.0; 100];
        let r = rhat(&[&a, &a]);
        assert!(r.degenerate && r.value == f64::INFINITY);
        assert!(ess(&[&a, &a]).degenerate);
    }

    #[test]
    fn ess_never_exceeds_total() {
        // Antithetic chain: negative lag-1 autocorrelation.
        let a: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + (i as f64 * 0.37).sin())).collect();
        assert!(ess(&[&a, &a]).value <= 2000.0);
    }
}
