//! Quasi-Monte Carlo integration points: an unscrambled Sobol' sequence and
//! a Gaussian copula that turns it into joint covariate draws matching
//! marginal summaries and a correlation matrix.

mod sobol_table;

use crate::data::{CovariateFamily, CovariateSpec, CovariateSummary, Marginal};
use crate::special::{gamma_quantile, norm_cdf, norm_quantile};
use nalgebra::{DMatrix, SymmetricEigen};
use sobol_table::{MAX_DEGREE, MAX_DIM, POLY, VINIT};
use thiserror::Error;

const BITS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("Sobol' dimension {0} unsupported (1..={MAX_DIM})")]
    Dimension(usize),
    #[error("number of points must be at least 1")]
    NoPoints,
    #[error("summary has {got} marginals but the schema has {expected} covariates")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("summary for '{0}' does not match its declared family")]
    FamilyMismatch(String),
    #[error("correlation matrix could not be factorised: {0}")]
    Factorisation(String),
}

/// Gray-code Sobol' generator over up to 64 dimensions.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self, IntegrationError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(IntegrationError::Dimension(dim));
        }
        let directions = (0..dim).map(direction_numbers).collect();
        Ok(Self { directions, state: vec![0; dim], index: 0 })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Advances and writes the next point into `out`. The first call yields
    /// the point after the all-zero origin.
    pub fn next_into(&mut self, out: &mut [f64]) {
        let c = self.index.trailing_ones() as usize;
        self.index += 1;
        for ((s, v), o) in self.state.iter_mut().zip(&self.directions).zip(out.iter_mut()) {
            *s ^= v[c];
            *o = f64::from(*s) / 4_294_967_296.0;
        }
    }

    /// Skips `n` points.
    pub fn skip(&mut self, n: u64) {
        let mut buf = vec![0.0; self.dim()];
        for _ in 0..n {
            self.next_into(&mut buf);
        }
    }
}

fn direction_numbers(d: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if d == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let poly = POLY[d];
    let s = (32 - poly.leading_zeros() - 1) as usize;
    debug_assert!(s <= MAX_DEGREE);
    let a = (poly >> 1) & ((1 << (s - 1)) - 1);
    for k in 0..s.min(BITS) {
        v[k] = VINIT[d][k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

/// First `n` Sobol' points in `dim` dimensions, skipping the origin. Returned
/// row-major, `n × dim`.
pub fn sobol(dim: usize, n: usize) -> Result<Vec<Vec<f64>>, IntegrationError> {
    if n == 0 {
        return Err(IntegrationError::NoPoints);
    }
    let mut gen = Sobol::new(dim)?;
    Ok((0..n)
        .map(|_| {
            let mut row = vec![0.0; dim];
            gen.next_into(&mut row);
            row
        })
        .collect())
}

/// Lower-triangular factor `L` with `L Lᵀ = corr`. Falls back to a symmetric
/// eigen square root when Cholesky fails on a semi-definite matrix.
pub fn copula_factor(corr: &DMatrix<f64>) -> Result<DMatrix<f64>, IntegrationError> {
    if let Some(ch) = corr.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(corr.clone());
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) || eig.eigenvalues.min() < -1e-8 {
        return Err(IntegrationError::Factorisation("matrix is not positive semi-definite".into()));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Joint covariate integration points for one aggregate population.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationGrid {
    /// Row-major `n × p` covariate values.
    points: Vec<f64>,
    n: usize,
    p: usize,
    /// Number of Sobol' points skipped after the origin.
    pub skip: u64,
    marginals: Vec<Marginal>,
    factor: DMatrix<f64>,
}

impl IntegrationGrid {
    /// Builds `n_points` integration points for `summary` under `corr`.
    pub fn build(
        summary: &CovariateSummary,
        schema: &[CovariateSpec],
        corr: &DMatrix<f64>,
        n_points: usize,
        skip: u64,
    ) -> Result<Self, IntegrationError> {
        if summary.marginals.len() != schema.len() {
            return Err(IntegrationError::SchemaMismatch { expected: schema.len(), got: summary.marginals.len() });
        }
        for (spec, m) in schema.iter().zip(&summary.marginals) {
            let ok = matches!(
                (spec.family, m),
                (CovariateFamily::Normal, Marginal::Normal { .. })
                    | (CovariateFamily::Gamma, Marginal::Gamma { .. })
                    | (CovariateFamily::Bernoulli, Marginal::Bernoulli { .. })
            );
            if !ok {
                return Err(IntegrationError::FamilyMismatch(spec.name.clone()));
            }
        }
        if n_points == 0 {
            return Err(IntegrationError::NoPoints);
        }
        let p = schema.len();
        let factor = if p == 0 { DMatrix::zeros(0, 0) } else { copula_factor(corr)? };
        let mut grid =
            Self { points: Vec::new(), n: 0, p, skip, marginals: summary.marginals.clone(), factor };
        grid.fill(n_points)?;
        Ok(grid)
    }

    fn fill(&mut self, n_points: usize) -> Result<(), IntegrationError> {
        let p = self.p;
        self.n = n_points;
        self.points = vec![0.0; n_points * p];
        if p == 0 {
            return Ok(());
        }
        let mut gen = Sobol::new(p)?;
        gen.skip(self.skip);
        let identity_rows: Vec<bool> = (0..p)
            .map(|i| (0..p).all(|j| self.factor[(i, j)] == if i == j { 1.0 } else { 0.0 }))
            .collect();
        let mut u = vec![0.0; p];
        let mut z = vec![0.0; p];
        for r in 0..n_points {
            gen.next_into(&mut u);
            for (zi, ui) in z.iter_mut().zip(&u) {
                *zi = norm_quantile(*ui);
            }
            for i in 0..p {
                let (score, prob) = if identity_rows[i] {
                    (z[i], u[i])
                } else {
                    let y: f64 = (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum();
                    (y, norm_cdf(y))
                };
                self.points[r * p + i] = match self.marginals[i] {
                    Marginal::Normal { mean, sd } => mean + sd * score,
                    Marginal::Gamma { shape, rate } => gamma_quantile(shape, rate, prob),
                    Marginal::Bernoulli { p } => f64::from(u8::from(prob > 1.0 - p)),
                };
            }
        }
        Ok(())
    }

    /// A grid of `n` copies of one covariate vector (a degenerate
    /// distribution), mainly for checks and for point populations.
    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        let n = points.len();
        let p = points.first().map_or(0, Vec::len);
        Self {
            points: points.into_iter().flatten().collect(),
            n,
            p,
            skip: 0,
            marginals: Vec::new(),
            factor: DMatrix::zeros(0, 0),
        }
    }

    /// Same Sobol' stream extended to twice the points; the current points
    /// are a prefix of the result.
    pub fn refine(&self) -> Result<Self, IntegrationError> {
        self.with_points(2 * self.n)
    }

    /// Rebuilds along the same stream with `n_points` points.
    pub fn with_points(&self, n_points: usize) -> Result<Self, IntegrationError> {
        if self.marginals.is_empty() && self.p > 0 {
            return Ok(self.clone());
        }
        let mut g = self.clone();
        g.fill(n_points)?;
        Ok(g)
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(|i| self.point(i))
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.rows().map(|r| r[j]).sum::<f64>() / self.n as f64
    }

    /// Kolmogorov distance between each continuous column and its target
    /// marginal (zero for Bernoulli columns).
    pub fn marginal_ks(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                let cdf: Box<dyn Fn(f64) -> f64> = match self.marginals.get(j) {
                    Some(Marginal::Normal { mean, sd }) => {
                        let (m, s) = (*mean, *sd);
                        Box::new(move |x| norm_cdf((x - m) / s))
                    }
                    Some(Marginal::Gamma { shape, rate }) => {
                        let (a, b) = (*shape, *rate);
                        Box::new(move |x| crate::special::gamma_p(a, x * b))
                    }
                    _ => return 0.0,
                };
                let mut col: Vec<f64> = self.rows().map(|r| r[j]).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                let n = col.len() as f64;
                col.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let f = cdf(x);
                        (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateRole;

    #[test]
    fn first_points_of_first_dimension() {
        let pts = sobol(1, 3).unwrap();
        assert_eq!(pts, vec![vec![0.5], vec![0.75], vec![0.25]]);
        assert_eq!(sobol(5, 1).unwrap(), vec![vec![0.5; 5]]);
    }

    #[test]
    fn matches_reference_sequence() {
        // Values of the standard Joe–Kuo sequence (dimensions 2, 5, 20, 64)
        // at selected positions after the origin.
        let pts = sobol(64, 1024).unwrap();
        let expect: [(usize, [f64; 4]); 6] = [
            (1, [0.5, 0.5, 0.5, 0.5]),
            (2, [0.25, 0.75, 0.25, 0.75]),
            (3, [0.75, 0.25, 0.75, 0.25]),
            (7, [0.625, 0.125, 0.875, 0.375]),
            (100, [0.2578125, 0.8828125, 0.3359375, 0.6484375]),
            (1024, [0.37646484375, 0.55712890625, 0.34619140625, 0.96630859375]),
        ];
        for (idx, vals) in expect {
            let row = &pts[idx - 1];
            assert_eq!([row[1], row[4], row[19], row[63]], vals, "index {idx}");
        }
    }

    #[test]
    fn dimension_limits() {
        assert!(matches!(Sobol::new(65), Err(IntegrationError::Dimension(65))));
        assert!(matches!(Sobol::new(0), Err(IntegrationError::Dimension(0))));
    }

    #[test]
    fn identity_grid_is_marginal_transform() {
        let schema = vec![CovariateSpec::new("x", CovariateFamily::Normal, CovariateRole::Prognostic)];
        let summary = CovariateSummary { marginals: vec![Marginal::Normal { mean: 1.0, sd: 0.4 }], correlation: None };
        let g = IntegrationGrid::build(&summary, &schema, &DMatrix::identity(1, 1), 16, 0).unwrap();
        for (row, u) in g.rows().zip(sobol(1, 16).unwrap()) {
            assert_eq!(row[0], 1.0 + 0.4 * norm_quantile(u[0]));
        }
    }

    #[test]
    fn refine_keeps_prefix() {
        let schema = vec![
            CovariateSpec::new("a", CovariateFamily::Gamma, CovariateRole::Prognostic),
            CovariateSpec::new("b", CovariateFamily::Bernoulli, CovariateRole::Prognostic),
        ];
        let summary = CovariateSummary {
            marginals: vec![Marginal::Gamma { shape: 4.0, rate: 2.0 }, Marginal::Bernoulli { p: 0.3 }],
            correlation: None,
        };
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let g = IntegrationGrid::build(&summary, &schema, &corr, 32, 0).unwrap();
        let r = g.refine().unwrap();
        assert_eq!(r.n_points(), 64);
        for i in 0..32 {
            assert_eq!(g.point(i), r.point(i));
        }
        let twice = r.refine().unwrap();
        let direct = IntegrationGrid::build(&summary, &schema, &corr, 128, 0).unwrap();
        assert_eq!(twice, direct);
    }

    #[test]
    fn semidefinite_factor() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = copula_factor(&c).unwrap();
        assert!((&l * l.transpose() - c).abs().max() < 1e-12);
    }
}
