//! M-spline and I-spline bases checked against Gauss–Legendre quadrature
//! (exact for the polynomial pieces), plus the softmax coefficient maps.

use mlnmr::spline::{constant_hazard_coefficients, inverse_softmax, softmax, KnotSequence, SplineBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three-point Gauss–Legendre rule on [a, b]; exact for polynomials of
/// degree ≤ 5, so for every cubic M-spline piece.
fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let r = (0.6f64).sqrt();
    half * (5.0 / 9.0 * f(mid - half * r) + 8.0 / 9.0 * f(mid) + 5.0 / 9.0 * f(mid + half * r))
}

/// Integral of `f` over [a, b] split at every knot so each piece is a
/// polynomial.
fn piecewise_integral<F: Fn(f64) -> f64>(f: F, knots: &KnotSequence, a: f64, b: f64) -> f64 {
    let mut cuts: Vec<f64> = std::iter::once(knots.lower())
        .chain(knots.internal().iter().copied())
        .chain(std::iter::once(knots.upper()))
        .filter(|&k| k > a && k < b)
        .collect();
    cuts.insert(0, a);
    cuts.push(b);
    cuts.windows(2).map(|w| gauss_legendre(&f, w[0], w[1])).sum()
}

fn random_knots(rng: &mut ChaCha8Rng, order: usize) -> KnotSequence {
    let lower = rng.random_range(0.0..1.0);
    let upper = lower + rng.random_range(0.5..10.0);
    let n = rng.random_range(0..9);
    let mut internal: Vec<f64> = (0..n).map(|_| rng.random_range(lower..upper)).collect();
    internal.sort_by(f64::total_cmp);
    internal.dedup_by(|a, b| (*a - *b).abs() < 1e-3 * (upper - lower));
    internal.retain(|&k| k - lower > 1e-3 && upper - k > 1e-3);
    KnotSequence::new(lower, internal, upper, order).unwrap()
}

#[test]
fn every_mspline_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for order in 1..=4 {
        for _ in 0..20 {
            let knots = random_knots(&mut rng, order);
            let basis = SplineBasis::new(knots.clone()).unwrap();
            for s in 0..basis.dimension() {
                let integral =
                    piecewise_integral(|t| basis.mspline(t).unwrap()[s], &knots, knots.lower(), knots.upper());
                assert!((integral - 1.0).abs() < 1e-10, "order {order}, basis {s}: ∫M = {integral} ({knots:?})");
            }
        }
    }
}

#[test]
fn ispline_is_the_running_integral_of_the_mspline() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for order in 1..=4 {
        for _ in 0..20 {
            let knots = random_knots(&mut rng, order);
            let basis = SplineBasis::new(knots.clone()).unwrap();
            for _ in 0..5 {
                let t = rng.random_range(knots.lower()..knots.upper());
                let i = basis.ispline(t).unwrap();
                for (s, &value) in i.iter().enumerate() {
                    let q = piecewise_integral(|u| basis.mspline(u).unwrap()[s], &knots, knots.lower(), t);
                    assert!((value - q).abs() < 1e-8, "order {order}, basis {s}, t {t}: I = {value}, ∫M = {q}");
                }
            }
            assert!(basis.ispline(knots.lower()).unwrap().iter().all(|&v| v.abs() < 1e-14));
            assert!(basis.ispline(knots.upper()).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-10));
        }
    }
}

#[test]
fn softmax_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let alpha = softmax(&logits);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let back = inverse_softmax(&alpha).unwrap();
        for (a, b) in logits.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn prior_mean_gives_a_flat_hazard() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for order in 1..=4 {
        for _ in 0..20 {
            let knots = random_knots(&mut rng, order);
            let basis = SplineBasis::new(knots.clone()).unwrap();
            if basis.dimension() < 2 {
                continue;
            }
            let alpha = softmax(basis.prior_mean());
            let expected = constant_hazard_coefficients(&knots);
            for (a, e) in alpha.iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12);
            }
            let hazards: Vec<f64> = (0..=400)
                .map(|i| (knots.lower() + (knots.upper() - knots.lower()) * i as f64 / 400.0).min(knots.upper()))
                .map(|t| basis.mspline(t).unwrap().iter().zip(&alpha).map(|(m, a)| m * a).sum())
                .collect();
            let max = hazards.iter().copied().fold(f64::MIN, f64::max);
            let min = hazards.iter().copied().fold(f64::MAX, f64::min);
            assert!(max / min - 1.0 < 1e-8, "order {order}: hazard ranges over [{min}, {max}]");
            let level = 1.0 / (knots.upper() - knots.lower());
            assert!((max - level).abs() < 1e-8 * level);
        }
    }
}

#[test]
fn random_walk_weights_do_not_depend_on_the_time_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for order in 1..=4 {
        for _ in 0..20 {
            let knots = random_knots(&mut rng, order);
            let basis = SplineBasis::new(knots.clone()).unwrap();
            if basis.dimension() < 2 {
                continue;
            }
            for factor in [1.0 / 365.25, 12.0, 1000.0] {
                let scaled = SplineBasis::new(knots.scaled(factor).unwrap()).unwrap();
                for (a, b) in basis.prior_weights().iter().zip(scaled.prior_weights()) {
                    assert!((a - b).abs() < 1e-12, "order {order}, factor {factor}: {a} vs {b}");
                }
                for (a, b) in basis.prior_mean().iter().zip(scaled.prior_mean()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn knots_strategy() -> impl Strategy<Value = KnotSequence> {
        (1usize..=4, 0.0f64..2.0, 0.5f64..20.0, proptest::collection::vec(0.01f64..0.99, 0..8)).prop_map(
            |(order, lower, width, mut fractions)| {
                fractions.sort_by(f64::total_cmp);
                fractions.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                let internal = fractions.iter().map(|f| lower + f * width).collect();
                KnotSequence::new(lower, internal, lower + width, order).unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn msplines_are_nonnegative_and_isplines_monotone(
            knots in knots_strategy(),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let basis = SplineBasis::new(knots.clone()).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            let t0 = knots.lower() + lo * (knots.upper() - knots.lower());
            let t1 = knots.lower() + hi * (knots.upper() - knots.lower());
            let m = basis.mspline(t0).unwrap();
            prop_assert!(m.iter().all(|&v| v >= 0.0));
            let i0 = basis.ispline(t0).unwrap();
            let i1 = basis.ispline(t1).unwrap();
            for (x, y) in i0.iter().zip(&i1) {
                prop_assert!(*x >= -1e-15 && *y <= 1.0 + 1e-12);
                prop_assert!(y - x >= -1e-12, "I-spline decreased from {} to {}", x, y);
            }
        }

        #[test]
        fn cumulative_hazard_of_a_simplex_is_a_distribution_function(
            knots in knots_strategy(),
            logits in proptest::collection::vec(-4.0f64..4.0, 12),
            u in 0.0f64..1.0,
        ) {
            let basis = SplineBasis::new(knots.clone()).unwrap();
            let dim = basis.dimension();
            let alpha = softmax(&logits[..dim - 1]);
            let t = knots.lower() + u * (knots.upper() - knots.lower());
            let cum: f64 = basis.ispline(t).unwrap().iter().zip(&alpha).map(|(i, a)| i * a).sum();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&cum));
            let total: f64 = basis.ispline(knots.upper()).unwrap().iter().zip(&alpha).map(|(i, a)| i * a).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
