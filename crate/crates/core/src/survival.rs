//! Survival and hazard functions for proportional-hazards and accelerated
//! failure time families, evaluated in log space.
//!
//! Two layers are exposed. The generic layer works on any [`Scalar`] with
//! auxiliary parameters on the unconstrained (log) scale, so the likelihood
//! can propagate derivatives through it. The [`SurvivalModel`] layer takes
//! constrained auxiliary values, validates them, and returns plain `f64`.

use crate::special::{ln_gamma, ln_gamma_q, Scalar};
use crate::spline::SplineBasis;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("{family} expects {expected} auxiliary parameter(s), got {got}")]
    AuxLength { family: Family, expected: usize, got: usize },
    #[error("{family}: auxiliary parameter {index} must be positive and finite, got {value}")]
    AuxDomain { family: Family, index: usize, value: f64 },
    #[error("spline coefficients must lie on the simplex with {expected} components")]
    SplineCoefficients { expected: usize },
    #[error("{family} needs spline coefficients and a basis")]
    MissingBasis { family: Family },
    #[error("time must be nonnegative and finite, got {0}")]
    InvalidTime(f64),
    #[error("unknown likelihood family '{0}'")]
    UnknownFamily(String),
}

/// A parametric survival family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    ExpPh,
    WeibullPh,
    Gompertz,
    MSpline,
    PiecewiseExp,
    ExpAft,
    WeibullAft,
    LogNormal,
    LogLogistic,
    Gamma,
    GenGamma,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::ExpPh,
        Family::WeibullPh,
        Family::Gompertz,
        Family::MSpline,
        Family::PiecewiseExp,
        Family::ExpAft,
        Family::WeibullAft,
        Family::LogNormal,
        Family::LogLogistic,
        Family::Gamma,
        Family::GenGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ExpPh => "exp_ph",
            Family::WeibullPh => "weibull_ph",
            Family::Gompertz => "gompertz",
            Family::MSpline => "mspline",
            Family::PiecewiseExp => "pexp",
            Family::ExpAft => "exp_aft",
            Family::WeibullAft => "weibull_aft",
            Family::LogNormal => "lognormal",
            Family::LogLogistic => "loglogistic",
            Family::Gamma => "gamma",
            Family::GenGamma => "gengamma",
        }
    }

    /// Proportional hazards: η shifts the log hazard. Otherwise η is a log
    /// time ratio.
    pub fn is_ph(self) -> bool {
        matches!(
            self,
            Family::ExpPh | Family::WeibullPh | Family::Gompertz | Family::MSpline | Family::PiecewiseExp
        )
    }

    pub fn is_spline(self) -> bool {
        matches!(self, Family::MSpline | Family::PiecewiseExp)
    }

    /// Number of scalar positive auxiliary parameters (spline coefficients
    /// are handled separately).
    pub fn n_aux(self) -> usize {
        match self {
            Family::ExpPh | Family::ExpAft | Family::MSpline | Family::PiecewiseExp => 0,
            Family::WeibullPh
            | Family::Gompertz
            | Family::WeibullAft
            | Family::LogNormal
            | Family::LogLogistic
            | Family::Gamma => 1,
            Family::GenGamma => 2,
        }
    }

    /// Names of the scalar auxiliary parameters.
    pub fn aux_names(self) -> &'static [&'static str] {
        match self {
            Family::LogNormal => &["aux_scale"],
            Family::GenGamma => &["aux_scale", "shape"],
            f if f.n_aux() == 1 => &["shape"],
            _ => &[],
        }
    }

    /// Whether the mean survival time is finite for every valid parameter
    /// value; log-logistic needs shape above one and is checked per draw.
    pub fn has_finite_mean(self) -> bool {
        !self.is_spline()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = SurvivalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| SurvivalError::UnknownFamily(s.to_string()))
    }
}

/// Baseline log cumulative hazard and log hazard of the parametric PH
/// families (at η = 0). `aux` holds log-scale auxiliaries. Returns `None` for
/// AFT and spline families.
pub fn ph_log_baseline<S: Scalar>(family: Family, aux: &[S], t: f64) -> Option<(S, S)> {
    let lt = t.ln();
    match family {
        Family::ExpPh => Some((S::cst(lt), S::cst(0.0))),
        Family::WeibullPh => {
            let a = aux[0];
            let nu = a.exp();
            let log_h = if t == 0.0 { weibull_log_h_at_zero(a) } else { a + (nu - 1.0) * lt };
            Some((nu * lt, log_h))
        }
        Family::Gompertz => {
            let nu = aux[0].exp();
            let tn = nu * t;
            Some((tn.exp_m1().ln() - nu.ln(), tn))
        }
        _ => None,
    }
}

fn weibull_log_h_at_zero<S: Scalar>(a: S) -> S {
    let nu = a.val().exp();
    if nu == 1.0 {
        S::cst(0.0)
    } else if nu > 1.0 {
        S::cst(f64::NEG_INFINITY)
    } else {
        S::cst(f64::INFINITY)
    }
}

/// Log survival and log hazard for the parametric (non-spline) families.
///
/// `aux` holds the log of each positive auxiliary parameter. Spline families
/// are evaluated through [`SplineHazard`].
pub fn log_surv_haz<S: Scalar>(family: Family, aux: &[S], eta: S, t: f64) -> (S, S) {
    if let Some((log_cum, log_h0)) = ph_log_baseline(family, aux, t) {
        return (-(log_cum + eta).exp(), log_h0 + eta);
    }
    let lt = S::cst(t.ln());
    match family {
        Family::ExpAft => (-(lt - eta).exp(), -eta),
        Family::WeibullAft => {
            let a = aux[0];
            let nu = a.exp();
            let z = (lt - eta) * nu;
            (-z.exp(), a + z - lt)
        }
        Family::LogNormal => {
            let a = aux[0];
            let sigma = a.exp();
            let z = (lt - eta) / sigma;
            let log_s = (-z).log_ndtr();
            let log_phi = z * z * -0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln();
            (log_s, log_phi - a - lt - log_s)
        }
        Family::LogLogistic => {
            let a = aux[0];
            let nu = a.exp();
            let u = (lt - eta) * nu;
            let sp = u.softplus();
            (-sp, a - lt + u - sp)
        }
        Family::Gamma => {
            let a = aux[0];
            let nu = a.exp();
            let lx = lt - eta;
            let x = lx.exp();
            let log_s = ln_gamma_q(nu, x);
            (log_s, (nu - 1.0) * lx - x - eta - ln_gamma(nu) - log_s)
        }
        Family::GenGamma => {
            let a_sigma = aux[0];
            let a_nu = aux[1];
            let sigma = a_sigma.exp();
            let nu = a_nu.exp();
            let log_q = a_nu * -0.5;
            let q = log_q.exp();
            let w = (lt - eta) / sigma;
            let log_u = a_nu + q * w;
            let u = log_u.exp();
            let log_s = ln_gamma_q(nu, u);
            let log_f = log_q + nu * log_u - u - lt - a_sigma - ln_gamma(nu);
            (log_s, log_f - log_s)
        }
        _ => unreachable!("spline and PH families handled elsewhere"),
    }
}

/// Cumulative baseline hazard and baseline hazard of an M-spline at one time,
/// extrapolated with a constant hazard beyond the upper boundary knot.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasisValues {
    /// I-spline values at min(t, upper).
    pub ispline: Vec<f64>,
    /// M-spline values at min(t, upper).
    pub mspline: Vec<f64>,
    /// Time past the upper boundary knot (zero inside the knot range).
    pub excess: f64,
}

impl SplineBasisValues {
    pub fn new(basis: &SplineBasis, t: f64) -> Self {
        let knots = basis.knots();
        let tc = t.clamp(knots.lower(), knots.upper());
        Self {
            ispline: basis.ispline(tc).expect("clamped time is in range"),
            mspline: basis.mspline(tc).expect("clamped time is in range"),
            excess: (t - knots.upper()).max(0.0),
        }
    }

    /// The I-spline combination used as the cumulative-hazard basis,
    /// including the constant-hazard extension.
    pub fn cumulative_basis(&self, s: usize) -> f64 {
        self.ispline[s] + self.excess * self.mspline[s]
    }

    /// (H0, h0) for simplex coefficients `alpha`.
    pub fn baseline(&self, alpha: &[f64]) -> (f64, f64) {
        let mut cum = 0.0;
        let mut haz = 0.0;
        for (s, &a) in alpha.iter().enumerate() {
            cum += a * self.cumulative_basis(s);
            haz += a * self.mspline[s];
        }
        (cum, haz)
    }
}

/// Validated auxiliary block on the constrained scale.
#[derive(Debug, Clone, Copy)]
pub enum Aux<'a> {
    /// Positive scalar auxiliaries (shape and/or scale) in the family's
    /// declared order.
    Params(&'a [f64]),
    /// Simplex spline coefficients with their basis.
    Spline { basis: &'a SplineBasis, alpha: &'a [f64] },
}

/// A survival family bound to concrete auxiliary parameter values.
#[derive(Debug, Clone)]
pub struct SurvivalModel<'a> {
    family: Family,
    log_aux: Vec<f64>,
    spline: Option<(&'a SplineBasis, &'a [f64])>,
}

impl<'a> SurvivalModel<'a> {
    pub fn new(family: Family, aux: Aux<'a>) -> Result<Self, SurvivalError> {
        match aux {
            Aux::Params(values) => {
                if family.is_spline() {
                    return Err(SurvivalError::MissingBasis { family });
                }
                if values.len() != family.n_aux() {
                    return Err(SurvivalError::AuxLength { family, expected: family.n_aux(), got: values.len() });
                }
                for (index, &value) in values.iter().enumerate() {
                    if !(value > 0.0 && value.is_finite()) {
                        return Err(SurvivalError::AuxDomain { family, index, value });
                    }
                }
                Ok(Self { family, log_aux: values.iter().map(|v| v.ln()).collect(), spline: None })
            }
            Aux::Spline { basis, alpha } => {
                if !family.is_spline() {
                    return Err(SurvivalError::AuxLength { family, expected: family.n_aux(), got: alpha.len() });
                }
                let expected = basis.dimension();
                let sum: f64 = alpha.iter().sum();
                if alpha.len() != expected || alpha.iter().any(|&a| !(a >= 0.0)) || (sum - 1.0).abs() > 1e-8 {
                    return Err(SurvivalError::SplineCoefficients { expected });
                }
                Ok(Self { family, log_aux: Vec::new(), spline: Some((basis, alpha)) })
            }
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// True when `t` lies beyond the spline's upper boundary knot, where the
    /// hazard is held constant.
    pub fn extrapolated(&self, t: f64) -> bool {
        self.spline.is_some_and(|(b, _)| t > b.knots().upper())
    }

    /// (log S, log h) at time `t` for linear predictor `eta`.
    pub fn log_surv_haz(&self, eta: f64, t: f64) -> Result<(f64, f64), SurvivalError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(SurvivalError::InvalidTime(t));
        }
        if let Some((basis, alpha)) = self.spline {
            let (cum, haz) = SplineBasisValues::new(basis, t).baseline(alpha);
            return Ok((-cum * eta.exp(), haz.ln() + eta));
        }
        let (log_s, log_h) = log_surv_haz(self.family, &self.log_aux, eta, t);
        if t == 0.0 {
            return Ok((0.0, log_h));
        }
        Ok((log_s, log_h))
    }

    pub fn log_survival(&self, eta: f64, t: f64) -> Result<f64, SurvivalError> {
        Ok(self.log_surv_haz(eta, t)?.0)
    }

    pub fn log_hazard(&self, eta: f64, t: f64) -> Result<f64, SurvivalError> {
        Ok(self.log_surv_haz(eta, t)?.1)
    }

    pub fn survival(&self, eta: f64, t: f64) -> Result<f64, SurvivalError> {
        Ok(self.log_survival(eta, t)?.exp())
    }

    pub fn hazard(&self, eta: f64, t: f64) -> Result<f64, SurvivalError> {
        Ok(self.log_hazard(eta, t)?.exp())
    }

    /// Individual log likelihood contribution: log S + c·log h.
    pub fn log_density(&self, eta: f64, t: f64, status: bool) -> Result<f64, SurvivalError> {
        let (log_s, log_h) = self.log_surv_haz(eta, t)?;
        Ok(if status { log_s + log_h } else { log_s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::KnotSequence;
    use approx::assert_relative_eq;

    fn model(family: Family, aux: &[f64]) -> SurvivalModel<'_> {
        SurvivalModel::new(family, Aux::Params(aux)).unwrap()
    }

    #[test]
    fn exponential_unit_rate() {
        let m = model(Family::ExpPh, &[]);
        assert_relative_eq!(m.survival(0.0, 1.0).unwrap(), (-1.0_f64).exp(), epsilon = 1e-15);
        assert_eq!(m.log_density(0.0, 2.0, true).unwrap(), -2.0);
    }

    #[test]
    fn lognormal_median_at_exp_eta() {
        let m = model(Family::LogNormal, &[0.7]);
        assert_relative_eq!(m.survival(0.3, 0.3_f64.exp()).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gompertz_hazard_at_zero() {
        assert_eq!(model(Family::Gompertz, &[0.4]).hazard(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn weibull_aft_hazard() {
        assert_relative_eq!(model(Family::WeibullAft, &[2.0]).hazard(0.0, 1.0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn loglogistic_density() {
        let m = model(Family::LogLogistic, &[1.0]);
        assert_relative_eq!(m.log_density(0.0, 1.0, true).unwrap(), 0.25_f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn piecewise_constant_spline() {
        let basis = SplineBasis::new(KnotSequence::new(0.0, vec![1.0], 2.0, 1).unwrap()).unwrap();
        let alpha = [0.5, 0.5];
        let m = SurvivalModel::new(Family::PiecewiseExp, Aux::Spline { basis: &basis, alpha: &alpha }).unwrap();
        assert_relative_eq!(m.survival(0.0, 1.5).unwrap(), (-0.75_f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            SurvivalModel::new(Family::WeibullPh, Aux::Params(&[0.0])),
            Err(SurvivalError::AuxDomain { .. })
        ));
        assert!(matches!(
            SurvivalModel::new(Family::GenGamma, Aux::Params(&[1.0])),
            Err(SurvivalError::AuxLength { .. })
        ));
        assert!(matches!(
            SurvivalModel::new(Family::MSpline, Aux::Params(&[])),
            Err(SurvivalError::MissingBasis { .. })
        ));
        assert!("weibull".parse::<Family>().is_err());
        assert_eq!("weibull_ph".parse::<Family>().unwrap(), Family::WeibullPh);
    }

    #[test]
    fn spline_extrapolates_with_constant_hazard() {
        let basis = SplineBasis::new(KnotSequence::new(0.0, vec![0.5, 1.2], 2.0, 4).unwrap()).unwrap();
        let alpha = vec![0.1, 0.2, 0.3, 0.15, 0.15, 0.1];
        let m = SurvivalModel::new(Family::MSpline, Aux::Spline { basis: &basis, alpha: &alpha }).unwrap();
        let h_end = m.hazard(0.3, 2.0).unwrap();
        assert_relative_eq!(m.hazard(0.3, 3.0).unwrap(), h_end, epsilon = 1e-14);
        let drop = m.log_survival(0.3, 2.0).unwrap() - m.log_survival(0.3, 3.0).unwrap();
        assert_relative_eq!(drop, h_end, max_relative = 1e-12);
        assert!(m.extrapolated(3.0) && !m.extrapolated(2.0));
    }
}
