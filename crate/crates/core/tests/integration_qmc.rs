//! Quasi-Monte Carlo point generation and covariate grids, checked against
//! closed-form integrals, exact discrepancy computations and pseudo-random
//! baselines.

use mlnmr::data::{CovariateFamily, CovariateRole, CovariateSpec, CovariateSummary, Marginal};
use mlnmr::integration::{sobol, IntegrationGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

const NS: [usize; 6] = [16, 32, 64, 128, 256, 512];

fn spec(name: &str, family: CovariateFamily) -> CovariateSpec {
    CovariateSpec::new(name, family, CovariateRole::EffectModifier)
}

fn qmc_mean(points: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    points.iter().map(|p| f(p)).sum::<f64>() / points.len() as f64
}

/// Least-squares slope of ln|error| on ln N.
fn log_log_slope(ns: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Exact star discrepancy of a two-dimensional point set: the supremum over
/// anchored boxes is attained at corners built from point coordinates (or 1),
/// with either open or closed boundaries.
fn star_discrepancy_2d(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mut xs: Vec<f64> = points.iter().map(|p| p[0]).chain([1.0]).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p[1]).chain([1.0]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for &a in &xs {
        for &b in &ys {
            let open = points.iter().filter(|p| p[0] < a && p[1] < b).count() as f64;
            let closed = points.iter().filter(|p| p[0] <= a && p[1] <= b).count() as f64;
            worst = worst.max(a * b - open / n).max(closed / n - a * b);
        }
    }
    worst
}

#[test]
fn first_points_match_reference_sequence() {
    let pts = sobol(1, 3).unwrap();
    assert_eq!(pts, vec![vec![0.5], vec![0.75], vec![0.25]]);
    assert_eq!(sobol(5, 1).unwrap(), vec![vec![0.5; 5]]);
    // Every emitted coordinate lies strictly inside the unit interval.
    for p in sobol(8, 1024).unwrap() {
        assert!(p.iter().all(|&u| u > 0.0 && u < 1.0));
    }
}

#[test]
fn two_dimensional_discrepancy_beats_pseudo_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for n in [64usize, 256] {
        let qmc: Vec<[f64; 2]> = sobol(2, n).unwrap().into_iter().map(|p| [p[0], p[1]]).collect();
        let d_qmc = star_discrepancy_2d(&qmc);
        let d_mc = (0..100)
            .map(|_| {
                let set: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
                star_discrepancy_2d(&set)
            })
            .sum::<f64>()
            / 100.0;
        assert!(d_qmc < d_mc, "n = {n}: Sobol' {d_qmc} vs pseudo-random mean {d_mc}");
    }
}

#[test]
fn smooth_integrand_error_halves_per_refinement() {
    // ∫ exp(u1 + u2/2 + u3/4) du over the unit cube.
    let exact = (1f64.exp() - 1.0) * 2.0 * (0.5f64.exp() - 1.0) * 4.0 * (0.25f64.exp() - 1.0);
    let f = |u: &[f64]| (u[0] + 0.5 * u[1] + 0.25 * u[2]).exp();
    let pts = sobol(3, 512).unwrap();
    let errs: Vec<f64> = NS.iter().map(|&n| (qmc_mean(&pts[..n], &f) - exact).abs()).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..=2.6).contains(&ratio), "error ratio per doubling {ratio} ({errs:?})");
    }
}

#[test]
fn smooth_integrands_converge_at_first_order() {
    use std::f64::consts::PI;
    let integrands: Vec<(Box<dyn Fn(&[f64]) -> f64>, f64)> = vec![
        (Box::new(|u: &[f64]| u.iter().map(|x| 1.0 + 0.5 * (x - 0.5)).product()), 1.0),
        (Box::new(|u: &[f64]| u.iter().map(|x| (PI * x).sin()).sum()), 6.0 / PI),
        (
            Box::new(|u: &[f64]| (u[0] + 0.5 * u[1] + 0.25 * u[2]).exp()),
            (1f64.exp() - 1.0) * 2.0 * (0.5f64.exp() - 1.0) * 4.0 * (0.25f64.exp() - 1.0),
        ),
    ];
    let pts = sobol(3, 512).unwrap();
    for (i, (f, exact)) in integrands.iter().enumerate() {
        let errs: Vec<f64> = NS.iter().map(|&n| (qmc_mean(&pts[..n], f.as_ref()) - exact).abs()).collect();
        let slope = log_log_slope(&NS, &errs);
        assert!((-1.3..=-0.7).contains(&slope), "integrand {i}: slope {slope} ({errs:?})");
    }
}

#[test]
fn closed_form_oracle_agrees_with_brute_force_monte_carlo() {
    // The closed-form truth used above, cross-checked against 10⁷ draws.
    let exact = (1f64.exp() - 1.0) * 2.0 * (0.5f64.exp() - 1.0) * 4.0 * (0.25f64.exp() - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = (rng.random::<f64>() + 0.5 * rng.random::<f64>() + 0.25 * rng.random::<f64>()).exp();
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * se, "MC {mean} ± {se} vs exact {exact}");
}

fn appc_like_summary() -> (Vec<CovariateSpec>, CovariateSummary) {
    let schema = vec![
        spec("x1", CovariateFamily::Normal),
        spec("x2", CovariateFamily::Gamma),
        spec("x3", CovariateFamily::Bernoulli),
    ];
    let summary = CovariateSummary {
        marginals: vec![
            Marginal::Normal { mean: 1.0, sd: 0.4 },
            Marginal::Gamma { shape: 6.0, rate: 2.0 },
            Marginal::Bernoulli { p: 0.7 },
        ],
        correlation: None,
    };
    (schema, summary)
}

#[test]
fn grid_moments_match_marginals() {
    let (schema, summary) = appc_like_summary();
    let id = DMatrix::identity(3, 3);
    let g256 = IntegrationGrid::build(&summary, &schema, &id, 256, 0).unwrap();
    assert!((g256.column_mean(2) - 0.7).abs() <= 2.0 / 16.0);
    let g1024 = IntegrationGrid::build(&summary, &schema, &id, 1024, 0).unwrap();
    assert!(g1024.rows().all(|r| r[2] == 0.0 || r[2] == 1.0));

    // The first coordinate of point i is the base-2 radical inverse of its
    // Gray code i ^ (i >> 1). Points 1..1024 are therefore the net
    // {k/1024 : k = 1..1023} plus 3/2048, the point that replaces the
    // dropped origin. The symmetric net part has a zero-mean normal
    // transform, so the column mean is exactly 1 + 0.4 Φ⁻¹(3/2048) / 1024,
    // about 1 − 1.2e-3.
    let radical_inverse = |mut g: u64| {
        let (mut v, mut scale) = (0.0, 0.5);
        while g > 0 {
            v += scale * (g & 1) as f64;
            g >>= 1;
            scale *= 0.5;
        }
        v
    };
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let oracle = (1..=1024u64)
        .map(|i| 1.0 + 0.4 * std_normal.inverse_cdf(radical_inverse(i ^ (i >> 1))))
        .sum::<f64>()
        / 1024.0;
    let closed_form = 1.0 + 0.4 * std_normal.inverse_cdf(3.0 / 2048.0) / 1024.0;
    assert!((oracle - closed_form).abs() < 1e-12, "{oracle} vs {closed_form}");
    assert!((g1024.column_mean(0) - oracle).abs() < 1e-12, "normal mean {} vs {oracle}", g1024.column_mean(0));
}

#[test]
fn continuous_columns_have_small_cdf_deviation() {
    let (schema, summary) = appc_like_summary();
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.2, 0.4, 1.0, 0.1, 0.2, 0.1, 1.0]);
    let n = 1024;
    let grid = IntegrationGrid::build(&summary, &schema, &corr, n, 0).unwrap();
    let normal = Normal::new(1.0, 0.4).unwrap();
    let gamma = Gamma::new(6.0, 2.0).unwrap();
    let bound = 10.0 * (n as f64).ln() / n as f64;
    let cdfs: [(usize, Box<dyn Fn(f64) -> f64>); 2] =
        [(0, Box::new(move |x| normal.cdf(x))), (1, Box::new(move |x| gamma.cdf(x)))];
    for (j, cdf) in &cdfs {
        let mut col: Vec<f64> = grid.rows().map(|r| r[*j]).collect();
        col.sort_by(f64::total_cmp);
        let ks = col
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < bound, "column {j}: KS {ks} exceeds {bound}");
    }
}

#[test]
fn copula_induces_requested_correlation() {
    let schema = vec![spec("a", CovariateFamily::Normal), spec("b", CovariateFamily::Normal)];
    let summary = CovariateSummary {
        marginals: vec![Marginal::Normal { mean: 0.0, sd: 1.0 }, Marginal::Normal { mean: 5.0, sd: 2.0 }],
        correlation: None,
    };
    let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
    let g = IntegrationGrid::build(&summary, &schema, &corr, 4096, 0).unwrap();
    let (ma, mb) = (g.column_mean(0), g.column_mean(1));
    let n = g.n_points() as f64;
    let cov = g.rows().map(|r| (r[0] - ma) * (r[1] - mb)).sum::<f64>() / n;
    let va = g.rows().map(|r| (r[0] - ma).powi(2)).sum::<f64>() / n;
    let vb = g.rows().map(|r| (r[1] - mb).powi(2)).sum::<f64>() / n;
    let rho = cov / (va * vb).sqrt();
    assert!((rho - 0.6).abs() < 0.02, "correlation {rho}");
}

#[test]
fn refinement_is_stream_deterministic() {
    let (schema, summary) = appc_like_summary();
    let id = DMatrix::identity(3, 3);
    for skip in [0u64, 5] {
        let g = IntegrationGrid::build(&summary, &schema, &id, 64, skip).unwrap();
        let twice = g.refine().unwrap().refine().unwrap();
        let direct = IntegrationGrid::build(&summary, &schema, &id, 256, skip).unwrap();
        assert_eq!(twice, direct);
        for i in 0..64 {
            assert_eq!(twice.point(i), g.point(i));
        }
    }
}

#[test]
fn grids_are_bit_identical_across_parallel_contexts() {
    let (schema, summary) = appc_like_summary();
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.0]);
    let serial = IntegrationGrid::build(&summary, &schema, &corr, 512, 0).unwrap();
    let parallel: Vec<IntegrationGrid> = (0..8)
        .into_par_iter()
        .map(|_| IntegrationGrid::build(&summary, &schema, &corr, 512, 0).unwrap())
        .collect();
    assert!(parallel.iter().all(|g| *g == serial));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prefix_property_holds(dim in 1usize..8, n in 1usize..300) {
            let small = sobol(dim, n).unwrap();
            let large = sobol(dim, 2 * n).unwrap();
            prop_assert_eq!(&large[..n], &small[..]);
        }

        #[test]
        fn bernoulli_column_is_binary_with_close_mean(p in 0.05f64..0.95, m in 6u32..11) {
            let schema = vec![spec("z", CovariateFamily::Bernoulli)];
            let summary = CovariateSummary { marginals: vec![Marginal::Bernoulli { p }], correlation: None };
            let n = 1usize << m;
            let g = IntegrationGrid::build(&summary, &schema, &DMatrix::identity(1, 1), n, 0).unwrap();
            prop_assert!(g.rows().all(|r| r[0] == 0.0 || r[0] == 1.0));
            // One-dimensional projections are (0, m, 1)-nets up to the
            // dropped origin: the count is off by at most two points.
            prop_assert!((g.column_mean(0) - p).abs() <= 2.0 / n as f64);
        }
    }
}
