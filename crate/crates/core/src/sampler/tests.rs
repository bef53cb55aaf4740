use super::*;

/// Independent or equicorrelated Gaussian with unit variances.
struct Gaussian {
    dim: usize,
    mean: Vec<f64>,
    rho: f64,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let x: Vec<f64> = theta.iter().zip(&self.mean).map(|(t, m)| t - m).collect();
        if self.rho == 0.0 {
            for (g, v) in grad.iter_mut().zip(&x) {
                *g = -v;
            }
            return -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        }
        // Two-dimensional correlated case.
        let r = self.rho;
        let det = 1.0 - r * r;
        grad[0] = -(x[0] - r * x[1]) / det;
        grad[1] = -(x[1] - r * x[0]) / det;
        -0.5 * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]) / det
    }
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

#[test]
fn standard_normal_ten_dimensions() {
    let target = Gaussian { dim: 10, mean: vec![0.0; 10], rho: 0.0 };
    let cfg = SamplerConfig { seed: 11, ..SamplerConfig::default() };
    let draws = sample(&target, names(10), &cfg).unwrap();
    assert_eq!(draws.n_draws(), 4000);
    for s in draws.summaries() {
        assert!(s.ess.value > 0.5 * 4000.0, "{}: ESS {}", s.name, s.ess.value);
        assert!(s.mean.abs() < 4.0 / s.ess.value.sqrt(), "{}: mean {}", s.name, s.mean);
        assert!(s.rhat.value < 1.01);
    }
    assert_eq!(draws.divergences(), 0);
}

#[test]
fn correlated_gaussian_covariance_recovered() {
    let target = Gaussian { dim: 2, mean: vec![1.0, -1.0], rho: 0.9 };
    let cfg = SamplerConfig { seed: 5, samples: 2000, ..SamplerConfig::default() };
    let draws = sample(&target, names(2), &cfg).unwrap();
    let sums = draws.summaries();
    assert!(sums.iter().all(|s| s.ess.value > 1000.0), "{sums:?}");
    let all: Vec<&[f64]> = draws.iter().collect();
    let n = all.len() as f64;
    let m: Vec<f64> = (0..2).map(|i| all.iter().map(|d| d[i]).sum::<f64>() / n).collect();
    let cov = |i: usize, j: usize| all.iter().map(|d| (d[i] - m[i]) * (d[j] - m[j])).sum::<f64>() / (n - 1.0);
    assert!((cov(0, 0) - 1.0).abs() < 0.1, "{}", cov(0, 0));
    assert!((cov(1, 1) - 1.0).abs() < 0.1, "{}", cov(1, 1));
    assert!((cov(0, 1) - 0.9).abs() < 0.09, "{}", cov(0, 1));
}

#[test]
fn fixed_seed_is_bit_identical() {
    let target = Gaussian { dim: 3, mean: vec![0.5; 3], rho: 0.0 };
    let cfg = SamplerConfig { warmup: 200, samples: 100, seed: 99, ..SamplerConfig::default() };
    let a = sample(&target, names(3), &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| sample(&target, names(3), &cfg).unwrap());
    assert_eq!(a, b);
    let c = sample(&target, names(3), &SamplerConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
}

/// Normal likelihood for a mean with known unit variance and a Normal(m0,
/// s0²) prior: the posterior is Normal with closed-form moments.
struct Conjugate {
    y: Vec<f64>,
    m0: f64,
    s0: f64,
}

impl LogDensity for Conjugate {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mu = theta[0];
        let ll: f64 = self.y.iter().map(|y| -0.5 * (y - mu).powi(2)).sum();
        let lp = -0.5 * ((mu - self.m0) / self.s0).powi(2);
        grad[0] = self.y.iter().map(|y| y - mu).sum::<f64>() - (mu - self.m0) / self.s0.powi(2);
        ll + lp
    }
}

#[test]
fn conjugate_normal_mean_recovered() {
    let target = Conjugate { y: vec![1.2, 0.4, 2.2, 1.9, 0.7], m0: 0.0, s0: 2.0 };
    let precision = target.y.len() as f64 + 1.0 / 4.0;
    let post_mean = target.y.iter().sum::<f64>() / precision;
    let post_sd = precision.recip().sqrt();
    let draws = sample(&target, names(1), &SamplerConfig { seed: 3, ..SamplerConfig::default() }).unwrap();
    let s = &draws.summaries()[0];
    assert!((s.mean - post_mean).abs() < 4.0 * s.mcse(), "{} vs {post_mean}", s.mean);
    assert!((s.sd / post_sd - 1.0).abs() < 0.05, "{} vs {post_sd}", s.sd);
}

struct Hopeless;

impl LogDensity for Hopeless {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_gradient(&self, _: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        f64::NEG_INFINITY
    }
}

#[test]
fn non_finite_initial_density_fails() {
    let err = sample(&Hopeless, names(2), &SamplerConfig::default()).unwrap_err();
    assert!(matches!(err, SamplerError::InitialDensity { .. }), "{err}");
}

/// Uniform on a box: every trajectory hitting the wall diverges.
struct HardWall;

impl LogDensity for HardWall {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = 0.0;
        if theta[0].abs() < 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[test]
fn excessive_divergences_fail_with_guidance() {
    let cfg = SamplerConfig { init_radius: 0.5, warmup: 200, samples: 200, ..SamplerConfig::default() };
    let err = sample(&HardWall, names(1), &cfg).unwrap_err();
    assert!(matches!(err, SamplerError::TooManyDivergences { .. }), "{err}");
    assert!(err.to_string().contains("target acceptance"));
}

#[test]
fn config_invariants() {
    assert!(SamplerConfig { warmup: 100, ..SamplerConfig::default() }.validate().is_err());
    assert!(SamplerConfig { samples: 0, ..SamplerConfig::default() }.validate().is_err());
    assert!(SamplerConfig::default().validate().is_ok());
}

// Adequacy procedure ------------------------------------------------------

#[test]
fn branch_table() {
    let t = 1.05;
    let cases = [
        (1.00, 1.00, AdequacyBranch::Accept),
        (1.05, 1.05, AdequacyBranch::Accept),
        (1.0501, 1.00, AdequacyBranch::RerunLonger),
        (1.06, 1.20, AdequacyBranch::RerunLonger),
        (1.04, 1.06, AdequacyBranch::DoubleIntegration),
        (1.05, 1.0501, AdequacyBranch::DoubleIntegration),
        (f64::INFINITY, 1.0, AdequacyBranch::RerunLonger),
        (1.0, f64::NAN, AdequacyBranch::DoubleIntegration),
    ];
    for (w, a, expected) in cases {
        assert_eq!(classify(w, a, t), expected, "R-hat within {w}, all {a}");
    }
    assert_eq!(classify(1.08, 1.08, 1.1), AdequacyBranch::Accept);
}

/// Gaussian whose location shifts by `shift / n_int`.
struct Shifting {
    shift: f64,
    integration: bool,
}

impl TargetFamily for Shifting {
    type Target = Gaussian;

    fn target(&self, n_int: usize) -> Result<Gaussian, String> {
        Ok(Gaussian { dim: 2, mean: vec![self.shift / n_int as f64, 0.0], rho: 0.0 })
    }

    fn needs_integration(&self) -> bool {
        self.integration
    }

    fn parameter_names(&self) -> Vec<String> {
        names(2)
    }
}

fn adequacy_sampler() -> SamplerConfig {
    SamplerConfig { warmup: 300, samples: 500, seed: 21, ..SamplerConfig::default() }
}

#[test]
fn converged_first_pass_accepts_at_initial_points() {
    let out =
        integration_adequacy_run(&Shifting { shift: 0.0, integration: true }, &adequacy_sampler(), &AdequacyConfig::default())
            .unwrap();
    assert_eq!(out.n_int, 64);
    assert_eq!(out.audit.len(), 1);
    assert_eq!(out.audit[0].branch, AdequacyBranch::Accept);
    assert_eq!(out.audit[0].n_int_half, 32);
}

#[test]
fn integration_sensitive_target_doubles_points() {
    let out = integration_adequacy_run(
        &Shifting { shift: 100.0, integration: true },
        &adequacy_sampler(),
        &AdequacyConfig::default(),
    )
    .unwrap();
    assert!(out.n_int >= 128, "{:?}", out.audit);
    assert!(out.audit.iter().any(|e| e.branch == AdequacyBranch::DoubleIntegration));
    assert_eq!(out.audit.last().unwrap().branch, AdequacyBranch::Accept);
    assert_eq!(out.audit.last().unwrap().n_int, out.n_int);
}

#[test]
fn integration_limit_reports_audit() {
    let cfg = AdequacyConfig { max_n_int: 64, ..AdequacyConfig::default() };
    let err = integration_adequacy_run(&Shifting { shift: 100.0, integration: true }, &adequacy_sampler(), &cfg)
        .unwrap_err();
    assert!(matches!(err, AdequacyError::MaxIntegrationPoints { .. }), "{err}");
    assert_eq!(err.audit().len(), 1);
}

#[test]
fn no_aggregate_data_runs_once() {
    let out = integration_adequacy_run(
        &Shifting { shift: 100.0, integration: false },
        &adequacy_sampler(),
        &AdequacyConfig::default(),
    )
    .unwrap();
    assert!(!out.checked);
    assert!(out.audit.is_empty());
}

/// Two well-separated narrow modes: each chain stays in the mode it starts
/// nearest to, independently of the integration points.
struct Sticky;

impl LogDensity for Sticky {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let x = theta[0];
        let (a, b) = (-0.5 * ((x - 8.0) / 0.5).powi(2), -0.5 * ((x + 8.0) / 0.5).powi(2));
        let m = a.max(b);
        let (wa, wb) = ((a - m).exp(), (b - m).exp());
        grad[0] = (wa * -(x - 8.0) + wb * -(x + 8.0)) / (0.25 * (wa + wb));
        m + (wa + wb).ln()
    }
}

impl TargetFamily for Sticky {
    type Target = Sticky;

    fn target(&self, _: usize) -> Result<Sticky, String> {
        Ok(Sticky)
    }

    fn needs_integration(&self) -> bool {
        true
    }

    fn parameter_names(&self) -> Vec<String> {
        names(1)
    }
}

#[test]
fn sticky_bimodal_target_is_a_sampler_failure() {
    // Find a seed where both modes are visited within one same-Ñ group
    // (independent of Ñ by construction).
    let seed = (1..50)
        .find(|&seed| {
            let cfg = SamplerConfig { warmup: 150, samples: 50, seed, ..SamplerConfig::default() };
            let d = sample(&Sticky, names(1), &cfg).unwrap();
            let signs: Vec<bool> = d.chains.iter().map(|c| c.draws[0][0] > 0.0).collect();
            signs[0] != signs[1]
        })
        .unwrap();
    let cfg = SamplerConfig { warmup: 150, samples: 50, seed, ..SamplerConfig::default() };
    let err = integration_adequacy_run(&Sticky, &cfg, &AdequacyConfig { max_longer_reruns: 2, ..AdequacyConfig::default() })
        .unwrap_err();
    assert!(matches!(err, AdequacyError::SamplerNonConvergence { reruns: 2, .. }), "{err}");
    let audit = err.audit();
    assert_eq!(audit.len(), 3);
    assert!(audit.iter().all(|e| e.branch == AdequacyBranch::RerunLonger && e.n_int == 64));
    assert_eq!(audit.iter().map(|e| e.samples).collect::<Vec<_>>(), vec![50, 100, 200]);
}
