//! M-spline and I-spline bases on a boundary-padded knot sequence, the
//! anchored softmax map onto the simplex, and the weighted random-walk prior
//! scaffolding (knot weights and the constant-hazard prior mean).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be at least 1")]
    InvalidOrder,
    #[error("knots must be strictly increasing (lower {lower}, internal {internal:?}, upper {upper})")]
    NotIncreasing { lower: f64, internal: Vec<f64>, upper: f64 },
    #[error("knots must be finite")]
    NonFinite,
    #[error("time {t} outside the boundary knots [{lower}, {upper}]")]
    OutOfRange { t: f64, lower: f64, upper: f64 },
    #[error("only {distinct} distinct event times for {requested} internal knots; use fewer knots")]
    TooFewEventTimes { distinct: usize, requested: usize },
    #[error("inverse softmax needs strictly positive components summing to 1")]
    NotOnSimplex,
    #[error("the random-walk prior needs a basis of dimension at least 2")]
    BasisTooSmall,
}

/// Boundary and internal knots plus the basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSequence {
    lower: f64,
    internal: Vec<f64>,
    upper: f64,
    order: usize,
}

impl KnotSequence {
    pub fn new(lower: f64, internal: Vec<f64>, upper: f64, order: usize) -> Result<Self, SplineError> {
        if order == 0 {
            return Err(SplineError::InvalidOrder);
        }
        if !lower.is_finite() || !upper.is_finite() || internal.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::NonFinite);
        }
        let increasing = std::iter::once(lower)
            .chain(internal.iter().copied())
            .chain(std::iter::once(upper))
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing {
            return Err(SplineError::NotIncreasing { lower, internal, upper });
        }
        Ok(Self { lower, internal, upper, order })
    }

    /// Internal knots at evenly spaced quantiles of the uncensored times,
    /// boundaries at 0 and the largest observed time.
    pub fn from_event_times(
        event_times: &[f64],
        censor_times: &[f64],
        n_internal: usize,
        order: usize,
    ) -> Result<Self, SplineError> {
        let mut events: Vec<f64> = event_times.to_vec();
        events.sort_by(|a, b| a.total_cmp(b));
        let mut distinct = events.clone();
        distinct.dedup();
        if distinct.len() <= n_internal || distinct.len() < 2 && n_internal > 0 {
            return Err(SplineError::TooFewEventTimes { distinct: distinct.len(), requested: n_internal });
        }
        let upper = events
            .iter()
            .chain(censor_times.iter())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lower = 0.0;
        if !(upper > lower) {
            return Err(SplineError::TooFewEventTimes { distinct: distinct.len(), requested: n_internal });
        }
        let mut internal: Vec<f64> = (1..=n_internal)
            .map(|i| quantile_type7(&events, i as f64 / (n_internal + 1) as f64))
            .collect();
        // Tied quantiles: nudge forward by multiples of 1e-9 of the range.
        let nudge = 1e-9 * (upper - lower);
        let mut prev = lower;
        for k in internal.iter_mut() {
            if *k <= prev {
                *k = prev + nudge;
            }
            prev = *k;
        }
        if internal.last().is_some_and(|&k| k >= upper) {
            return Err(SplineError::TooFewEventTimes { distinct: distinct.len(), requested: n_internal });
        }
        Self::new(lower, internal, upper, order)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn internal(&self) -> &[f64] {
        &self.internal
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, L + κ.
    pub fn dimension(&self) -> usize {
        self.internal.len() + self.order
    }

    /// Knot vector with κ-fold replicated boundaries, length L + 2κ.
    pub fn augmented(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.internal.len() + 2 * self.order);
        v.extend(std::iter::repeat_n(self.lower, self.order));
        v.extend_from_slice(&self.internal);
        v.extend(std::iter::repeat_n(self.upper, self.order));
        v
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, SplineError> {
        Self::new(
            self.lower * factor,
            self.internal.iter().map(|k| k * factor).collect(),
            self.upper * factor,
            self.order,
        )
    }
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Evaluates every order-`order` M-spline on `knots` at `t` by the Ramsay
/// recursion. At the final knot the last non-empty interval is used (limit
/// from the left).
fn mspline_recursion(knots: &[f64], order: usize, t: f64, out: &mut Vec<f64>) {
    let n = knots.len();
    out.clear();
    out.resize(n - 1, 0.0);
    let last = knots[n - 1];
    let interval = if t >= last {
        (0..n - 1).rev().find(|&j| knots[j] < knots[j + 1])
    } else {
        (0..n - 1).find(|&j| knots[j] <= t && t < knots[j + 1])
    };
    let Some(j) = interval else {
        out.truncate(n - order);
        return;
    };
    out[j] = 1.0 / (knots[j + 1] - knots[j]);
    for r in 2..=order {
        let rf = r as f64;
        for s in 0..n - r {
            let den = (rf - 1.0) * (knots[s + r] - knots[s]);
            out[s] = if den > 0.0 {
                rf * ((t - knots[s]) * out[s] + (knots[s + r] - t) * out[s + 1]) / den
            } else {
                0.0
            };
        }
    }
    out.truncate(n - order);
}

/// An M-spline basis with its I-spline integral and random-walk prior terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: KnotSequence,
    augmented: Vec<f64>,
    extended: Vec<f64>,
    prior_weights: Vec<f64>,
    prior_mean: Vec<f64>,
}

impl SplineBasis {
    pub fn new(knots: KnotSequence) -> Result<Self, SplineError> {
        let augmented = knots.augmented();
        let mut extended = Vec::with_capacity(augmented.len() + 2);
        extended.push(knots.lower);
        extended.extend_from_slice(&augmented);
        extended.push(knots.upper);
        let (prior_weights, prior_mean) = if knots.dimension() >= 2 {
            rw_prior_scaffold(&knots)?
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self { knots, augmented, extended, prior_weights, prior_mean })
    }

    pub fn knots(&self) -> &KnotSequence {
        &self.knots
    }

    pub fn dimension(&self) -> usize {
        self.knots.dimension()
    }

    /// Normalised random-walk weights, length L + κ − 1.
    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    /// Inverse-softmax coefficients of the constant hazard, length L + κ − 1.
    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    fn check(&self, t: f64) -> Result<(), SplineError> {
        if t < self.knots.lower || t > self.knots.upper || t.is_nan() {
            return Err(SplineError::OutOfRange { t, lower: self.knots.lower, upper: self.knots.upper });
        }
        Ok(())
    }

    pub fn mspline(&self, t: f64) -> Result<Vec<f64>, SplineError> {
        self.check(t)?;
        let mut out = Vec::new();
        mspline_recursion(&self.augmented, self.knots.order, t, &mut out);
        Ok(out)
    }

    /// Closed-form I-spline: tail sums of order κ+1 B-splines on the knot
    /// vector padded once more at each boundary.
    pub fn ispline(&self, t: f64) -> Result<Vec<f64>, SplineError> {
        self.check(t)?;
        let k1 = self.knots.order + 1;
        let mut m = Vec::new();
        mspline_recursion(&self.extended, k1, t, &mut m);
        let dim = self.dimension();
        let mut out = vec![0.0; dim];
        let mut acc = 0.0;
        for idx in (1..m.len()).rev() {
            acc += m[idx] * (self.extended[idx + k1] - self.extended[idx]) / k1 as f64;
            if idx - 1 < dim {
                out[idx - 1] = acc.min(1.0);
            }
        }
        Ok(out)
    }
}

/// Anchored softmax: a leading implicit zero logit, so a length-n input maps
/// onto an (n+1)-simplex.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(logits.len() + 1);
    out.push((-m).exp());
    out.extend(logits.iter().map(|a| (a - m).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

pub fn inverse_softmax(alpha: &[f64]) -> Result<Vec<f64>, SplineError> {
    let sum: f64 = alpha.iter().sum();
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0)) || (sum - 1.0).abs() > 1e-8 {
        return Err(SplineError::NotOnSimplex);
    }
    let l0 = alpha[0].ln();
    Ok(alpha[1..].iter().map(|a| a.ln() - l0).collect())
}

/// Simplex coefficients that make the M-spline hazard flat between the
/// boundary knots.
pub fn constant_hazard_coefficients(knots: &KnotSequence) -> Vec<f64> {
    let aug = knots.augmented();
    let k = knots.order;
    let range = knots.upper - knots.lower;
    (0..knots.dimension())
        .map(|s| (aug[s + k] - aug[s]) / (k as f64 * range))
        .collect()
}

/// Random-walk weights (normalised to sum to one) and prior mean.
pub fn rw_prior_scaffold(knots: &KnotSequence) -> Result<(Vec<f64>, Vec<f64>), SplineError> {
    let dim = knots.dimension();
    if dim < 2 {
        return Err(SplineError::BasisTooSmall);
    }
    let aug = knots.augmented();
    let k = knots.order;
    let raw: Vec<f64> = if k == 1 {
        // Piecewise constant: distance between adjacent interval midpoints.
        (0..dim - 1).map(|l| 0.5 * (aug[l + 2] - aug[l])).collect()
    } else {
        (0..dim - 1).map(|l| aug[l + k] - aug[l + 1]).collect()
    };
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let mean = inverse_softmax(&constant_hazard_coefficients(knots))?;
    Ok((weights, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn basis(lower: f64, internal: &[f64], upper: f64, order: usize) -> SplineBasis {
        SplineBasis::new(KnotSequence::new(lower, internal.to_vec(), upper, order).unwrap()).unwrap()
    }

    #[test]
    fn piecewise_constant_base_case() {
        let b = basis(0.0, &[1.0], 2.0, 1);
        assert_eq!(b.mspline(0.5).unwrap(), vec![1.0, 0.0]);
        let i = b.ispline(1.5).unwrap();
        assert_relative_eq!(i[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(i[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ispline_is_zero_at_lower_boundary() {
        let b = basis(0.0, &[0.3, 1.1, 2.0], 3.5, 4);
        assert!(b.ispline(0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upper_boundary_uses_left_limit() {
        let b = basis(0.0, &[1.0, 2.0], 3.0, 4);
        let at = b.mspline(3.0).unwrap();
        let near = b.mspline(3.0 - 1e-10).unwrap();
        for (a, n) in at.iter().zip(&near) {
            assert_relative_eq!(a, n, epsilon = 1e-8);
        }
        assert!(at.last().unwrap() > &0.0);
        let i = b.ispline(3.0).unwrap();
        for v in i {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_range_is_an_error() {
        let b = basis(0.0, &[1.0], 2.0, 3);
        assert!(matches!(b.mspline(2.5), Err(SplineError::OutOfRange { .. })));
        assert!(matches!(b.ispline(-0.1), Err(SplineError::OutOfRange { .. })));
    }

    #[test]
    fn default_knots_from_quantiles() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let k = KnotSequence::from_event_times(&times, &[120.0], 7, 4).unwrap();
        for (i, &knot) in k.internal().iter().enumerate() {
            // Type 7 quantile computed directly.
            let h = 99.0 * (i + 1) as f64 / 8.0;
            let expected = 1.0 + h;
            assert_relative_eq!(knot, expected, epsilon = 1e-12);
        }
        assert_eq!(k.lower(), 0.0);
        assert_eq!(k.upper(), 120.0);
    }

    #[test]
    fn default_knots_need_more_event_times_than_knots() {
        let times: Vec<f64> = (1..=7).map(f64::from).collect();
        assert!(matches!(
            KnotSequence::from_event_times(&times, &[], 7, 4),
            Err(SplineError::TooFewEventTimes { .. })
        ));
        assert!(KnotSequence::from_event_times(&[2.0; 10], &[], 3, 4).is_err());
    }

    #[test]
    fn zero_internal_knots() {
        let k = KnotSequence::from_event_times(&[0.5, 1.0, 2.0], &[3.0], 0, 4).unwrap();
        assert!(k.internal().is_empty());
        assert_eq!(k.upper(), 3.0);
        assert_eq!(k.dimension(), 4);
    }

    #[test]
    fn tied_quantiles_are_jittered() {
        let mut times = vec![1.0; 50];
        times.extend([2.0, 3.0, 4.0, 5.0]);
        let k = KnotSequence::from_event_times(&times, &[], 3, 4).unwrap();
        assert!(k.internal().windows(2).all(|w| w[0] < w[1]));
        assert!(k.internal()[1] - k.internal()[0] < 1e-6);
    }

    #[test]
    fn softmax_edges() {
        let u = softmax(&[0.0; 4]);
        assert!(u.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let back = inverse_softmax(&u).unwrap();
        assert!(back.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(inverse_softmax(&[0.0, 0.5, 0.5]), Err(SplineError::NotOnSimplex));
    }

    #[test]
    fn even_knots_give_uniform_weights_for_low_orders() {
        for order in [1, 2] {
            let k = KnotSequence::new(0.0, vec![1.0, 2.0, 3.0, 4.0], 5.0, order).unwrap();
            let (w, _) = rw_prior_scaffold(&k).unwrap();
            let n = w.len() as f64;
            assert!(w.iter().all(|&v| (v - 1.0 / n).abs() < 1e-14), "order {order}: {w:?}");
        }
    }

    #[test]
    fn weights_invariant_to_timescale() {
        let k = KnotSequence::new(0.0, vec![0.2, 0.5, 1.7], 2.3, 4).unwrap();
        let (w1, c1) = rw_prior_scaffold(&k).unwrap();
        let (w2, c2) = rw_prior_scaffold(&k.scaled(2.0).unwrap()).unwrap();
        for (a, b) in w1.iter().zip(&w2) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        for (a, b) in c1.iter().zip(&c2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
