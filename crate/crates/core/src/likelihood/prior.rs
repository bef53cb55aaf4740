//! Prior distributions with log densities and derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A univariate prior. Half distributions are supported on (0, ∞).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    HalfNormal { sd: f64 },
    Cauchy { location: f64, scale: f64 },
    HalfCauchy { scale: f64 },
    Exponential { rate: f64 },
}

impl Prior {
    /// Log density and its derivative at `x`.
    pub fn log_density_grad(&self, x: f64) -> (f64, f64) {
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z - sd.ln() - LN_SQRT_2PI, -z / sd)
            }
            Prior::HalfNormal { sd } => {
                if x < 0.0 {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let z = x / sd;
                (std::f64::consts::LN_2 - 0.5 * z * z - sd.ln() - LN_SQRT_2PI, -z / sd)
            }
            Prior::Cauchy { location, scale } => {
                let z = (x - location) / scale;
                (-(PI * scale).ln() - z.mul_add(z, 1.0).ln(), -2.0 * z / (scale * z.mul_add(z, 1.0)))
            }
            Prior::HalfCauchy { scale } => {
                if x < 0.0 {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let z = x / scale;
                (
                    std::f64::consts::LN_2 - (PI * scale).ln() - z.mul_add(z, 1.0).ln(),
                    -2.0 * z / (scale * z.mul_add(z, 1.0)),
                )
            }
            Prior::Exponential { rate } => {
                if x < 0.0 {
                    return (f64::NEG_INFINITY, 0.0);
                }
                (rate.ln() - rate * x, -rate)
            }
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.log_density_grad(x).0
    }

    /// Whether the prior is supported on positive values only.
    pub fn is_positive(&self) -> bool {
        matches!(self, Prior::HalfNormal { .. } | Prior::HalfCauchy { .. } | Prior::Exponential { .. })
    }

    /// Log density of `x = exp(a)` on the unconstrained scale `a`, including
    /// the log-Jacobian, with derivative in `a`.
    pub fn log_density_grad_log_scale(&self, a: f64) -> (f64, f64) {
        let x = a.exp();
        let (lp, dlp) = self.log_density_grad(x);
        (lp + a, dlp * x + 1.0)
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Normal { mean, sd } => write!(f, "normal({mean}, {sd})"),
            Prior::HalfNormal { sd } => write!(f, "half_normal({sd})"),
            Prior::Cauchy { location, scale } => write!(f, "cauchy({location}, {scale})"),
            Prior::HalfCauchy { scale } => write!(f, "half_cauchy({scale})"),
            Prior::Exponential { rate } => write!(f, "exponential({rate})"),
        }
    }
}

impl FromStr for Prior {
    type Err = String;

    /// Parses `name(a, b)` forms such as `normal(0, 100)` or
    /// `half_normal(10)`. Scale arguments are standard deviations.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| format!("prior '{s}' must look like name(args)"))?;
        if !s.ends_with(')') {
            return Err(format!("prior '{s}' must look like name(args)"));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| format!("bad number '{a}' in prior '{s}'")))
            .collect::<Result<_, _>>()?;
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(format!("scale in prior '{s}' must be positive"))
            }
        };
        match (name.as_str(), args.as_slice()) {
            ("normal", [m, sd]) => Ok(Prior::Normal { mean: *m, sd: positive(*sd)? }),
            ("half_normal", [sd]) => Ok(Prior::HalfNormal { sd: positive(*sd)? }),
            ("cauchy", [l, sc]) => Ok(Prior::Cauchy { location: *l, scale: positive(*sc)? }),
            ("half_cauchy", [sc]) => Ok(Prior::HalfCauchy { scale: positive(*sc)? }),
            ("exponential", [r]) => Ok(Prior::Exponential { rate: positive(*r)? }),
            _ => Err(format!(
                "unknown prior '{s}' (normal(m, sd), half_normal(sd), cauchy(l, s), half_cauchy(s), exponential(rate))"
            )),
        }
    }
}

/// Prior for each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub intercept: Prior,
    pub beta1: Prior,
    pub beta2: Prior,
    pub gamma: Prior,
    pub aux: Prior,
    pub rw_sd: Prior,
    pub tau: Prior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            intercept: Prior::Normal { mean: 0.0, sd: 100.0 },
            beta1: Prior::Normal { mean: 0.0, sd: 100.0 },
            beta2: Prior::Normal { mean: 0.0, sd: 100.0 },
            gamma: Prior::Normal { mean: 0.0, sd: 100.0 },
            aux: Prior::HalfNormal { sd: 10.0 },
            rw_sd: Prior::HalfNormal { sd: 1.0 },
            tau: Prior::HalfNormal { sd: 1.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Cauchy, Continuous, Exp, Normal};

    #[test]
    fn normal_at_zero() {
        let p = Prior::Normal { mean: 0.0, sd: 100.0 };
        assert_relative_eq!(p.log_density(0.0), -(100.0 * (2.0 * PI).sqrt()).ln(), epsilon = 1e-14);
    }

    #[test]
    fn densities_match_statrs() {
        for x in [0.1, 0.7, 2.5, 9.0] {
            let n = Normal::new(0.3, 2.0).unwrap();
            assert_relative_eq!(Prior::Normal { mean: 0.3, sd: 2.0 }.log_density(x), n.ln_pdf(x), epsilon = 1e-12);
            let hn = Normal::new(0.0, 2.0).unwrap().ln_pdf(x) + 2f64.ln();
            assert_relative_eq!(Prior::HalfNormal { sd: 2.0 }.log_density(x), hn, epsilon = 1e-12);
            let c = Cauchy::new(0.0, 1.5).unwrap();
            assert_relative_eq!(Prior::Cauchy { location: 0.0, scale: 1.5 }.log_density(x), c.ln_pdf(x), epsilon = 1e-12);
            assert_relative_eq!(Prior::HalfCauchy { scale: 1.5 }.log_density(x), c.ln_pdf(x) + 2f64.ln(), epsilon = 1e-12);
            let e = Exp::new(0.7).unwrap();
            assert_relative_eq!(Prior::Exponential { rate: 0.7 }.log_density(x), e.ln_pdf(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let priors = [
            Prior::Normal { mean: 0.3, sd: 2.0 },
            Prior::HalfNormal { sd: 2.0 },
            Prior::Cauchy { location: -1.0, scale: 0.5 },
            Prior::HalfCauchy { scale: 0.5 },
            Prior::Exponential { rate: 3.0 },
        ];
        for p in priors {
            for a in [-1.0, 0.2, 1.3] {
                let h = 1e-6;
                let fd = (p.log_density_grad_log_scale(a + h).0 - p.log_density_grad_log_scale(a - h).0) / (2.0 * h);
                assert_relative_eq!(p.log_density_grad_log_scale(a).1, fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn parsing() {
        assert_eq!("normal(0, 100)".parse::<Prior>().unwrap(), Prior::Normal { mean: 0.0, sd: 100.0 });
        assert_eq!("half_normal(10)".parse::<Prior>().unwrap(), Prior::HalfNormal { sd: 10.0 });
        assert!("half_normal(-1)".parse::<Prior>().is_err());
        assert!("student(3)".parse::<Prior>().is_err());
        let p = Prior::Cauchy { location: 1.0, scale: 2.5 };
        assert_eq!(p.to_string().parse::<Prior>().unwrap(), p);
    }
}
