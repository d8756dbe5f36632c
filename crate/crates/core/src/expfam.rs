//! Gaussian and Gamma exponential-family factors in natural parameters.
//!
//! A [`GaussianFactor`] stores `eta1 = Λμ` and `eta2 = -½Λ`. Products and
//! quotients of factors are sums and differences of these parameters, which
//! is all that message passing needs. Messages may be improper; moments are
//! only defined for normalizable factors.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Second natural parameter, either per-coordinate or a full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Eta2 {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    eta1: DVector<f64>,
    eta2: Eta2,
}

/// Covariance matching the representation of the factor it came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn variances(&self) -> DVector<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl GaussianMoments {
    /// `E[uuᵀ] = Σ + μμᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        self.cov.to_full() + &self.mean * self.mean.transpose()
    }
}

impl GaussianFactor {
    pub fn unit_diagonal(dim: usize) -> Self {
        GaussianFactor { eta1: DVector::zeros(dim), eta2: Eta2::Diagonal(DVector::zeros(dim)) }
    }

    pub fn unit_full(dim: usize) -> Self {
        GaussianFactor { eta1: DVector::zeros(dim), eta2: Eta2::Full(DMatrix::zeros(dim, dim)) }
    }

    pub fn from_natural_diagonal(eta1: DVector<f64>, eta2: DVector<f64>) -> Result<Self> {
        if eta1.len() != eta2.len() {
            return Err(Error::DimensionMismatch { left: eta1.len(), right: eta2.len() });
        }
        Ok(GaussianFactor { eta1, eta2: Eta2::Diagonal(eta2) })
    }

    pub fn from_natural_full(eta1: DVector<f64>, eta2: DMatrix<f64>) -> Result<Self> {
        if eta2.nrows() != eta2.ncols() || eta1.len() != eta2.nrows() {
            return Err(Error::DimensionMismatch { left: eta1.len(), right: eta2.nrows() });
        }
        Ok(GaussianFactor { eta1, eta2: Eta2::Full(symmetrize(&eta2)) })
    }

    /// Diagonal factor from means and variances. Variances must be positive.
    pub fn from_moments_diagonal(mean: &[f64], var: &[f64]) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch { left: mean.len(), right: var.len() });
        }
        if let Some((i, &v)) = var.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonNormalizable { coordinate: i, precision: 1.0 / v });
        }
        let eta1 = DVector::from_iterator(mean.len(), mean.iter().zip(var).map(|(m, v)| m / v));
        let eta2 = DVector::from_iterator(var.len(), var.iter().map(|v| -0.5 / v));
        Ok(GaussianFactor { eta1, eta2: Eta2::Diagonal(eta2) })
    }

    /// One-dimensional diagonal factor `N(mean, var)`.
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::from_moments_diagonal(&[mean], &[var])
    }

    /// Full-covariance factor from a mean and a positive definite covariance.
    pub fn from_moments_full(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch { left: mean.len(), right: cov.nrows() });
        }
        let precision = spd_inverse(&symmetrize(cov))?;
        let eta1 = &precision * mean;
        Ok(GaussianFactor { eta1, eta2: Eta2::Full(precision * -0.5) })
    }

    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    pub fn eta1(&self) -> &DVector<f64> {
        &self.eta1
    }

    pub fn eta2(&self) -> &Eta2 {
        &self.eta2
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.eta2, Eta2::Diagonal(_))
    }

    /// Precision matrix `-2·eta2` (diagonal promoted to full).
    pub fn precision(&self) -> DMatrix<f64> {
        match &self.eta2 {
            Eta2::Diagonal(d) => DMatrix::from_diagonal(&(d * -2.0)),
            Eta2::Full(m) => m * -2.0,
        }
    }

    pub fn to_full(&self) -> GaussianFactor {
        GaussianFactor {
            eta1: self.eta1.clone(),
            eta2: Eta2::Full(match &self.eta2 {
                Eta2::Diagonal(d) => DMatrix::from_diagonal(d),
                Eta2::Full(m) => m.clone(),
            }),
        }
    }

    fn combine(&self, other: &GaussianFactor, sign: f64) -> Result<GaussianFactor> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        let eta1 = &self.eta1 + &other.eta1 * sign;
        let eta2 = match (&self.eta2, &other.eta2) {
            (Eta2::Diagonal(a), Eta2::Diagonal(b)) => Eta2::Diagonal(a + b * sign),
            (Eta2::Full(a), Eta2::Full(b)) => Eta2::Full(a + b * sign),
            (Eta2::Diagonal(a), Eta2::Full(b)) => Eta2::Full(DMatrix::from_diagonal(a) + b * sign),
            (Eta2::Full(a), Eta2::Diagonal(b)) => Eta2::Full(a + DMatrix::from_diagonal(b) * sign),
        };
        Ok(GaussianFactor { eta1, eta2 })
    }

    /// Product of two factors: natural parameters add.
    pub fn multiply(&self, other: &GaussianFactor) -> Result<GaussianFactor> {
        self.combine(other, 1.0)
    }

    /// Quotient of two factors: natural parameters subtract. The result may be improper.
    pub fn divide(&self, other: &GaussianFactor) -> Result<GaussianFactor> {
        self.combine(other, -1.0)
    }

    /// `weight·self + (1 - weight)·old` in natural parameters.
    pub fn damp_towards(&self, old: &GaussianFactor, weight: f64) -> Result<GaussianFactor> {
        if weight == 1.0 {
            return Ok(self.clone());
        }
        let scaled_new = self.scale(weight);
        let scaled_old = old.scale(1.0 - weight);
        scaled_new.multiply(&scaled_old)
    }

    fn scale(&self, s: f64) -> GaussianFactor {
        GaussianFactor {
            eta1: &self.eta1 * s,
            eta2: match &self.eta2 {
                Eta2::Diagonal(d) => Eta2::Diagonal(d * s),
                Eta2::Full(m) => Eta2::Full(m * s),
            },
        }
    }

    /// Largest absolute difference between natural parameters.
    pub fn max_abs_diff(&self, other: &GaussianFactor) -> f64 {
        let d1 = (&self.eta1 - &other.eta1).amax();
        let d2 = match (&self.eta2, &other.eta2) {
            (Eta2::Diagonal(a), Eta2::Diagonal(b)) => (a - b).amax(),
            _ => (self.precision() - other.precision()).amax() * 0.5,
        };
        d1.max(d2)
    }

    /// First coordinate whose precision is not strictly positive, if any.
    ///
    /// For full factors this is the Cholesky pivot at which factorization fails.
    pub fn non_normalizable_coordinate(&self) -> Option<(usize, f64)> {
        match &self.eta2 {
            Eta2::Diagonal(d) => d
                .iter()
                .enumerate()
                .find(|(_, &e)| !(-2.0 * e > 0.0) || !(-2.0 * e).is_finite())
                .map(|(i, &e)| (i, -2.0 * e)),
            Eta2::Full(m) => cholesky_pivot_failure(&(m * -2.0)),
        }
    }

    pub fn is_normalizable(&self) -> bool {
        self.non_normalizable_coordinate().is_none() && self.eta1.iter().all(|v| v.is_finite())
    }

    /// Mean and covariance. Fails on improper factors.
    pub fn moments(&self) -> Result<GaussianMoments> {
        if let Some((coordinate, precision)) = self.non_normalizable_coordinate() {
            return Err(Error::NonNormalizable { coordinate, precision });
        }
        match &self.eta2 {
            Eta2::Diagonal(d) => {
                let var = d.map(|e| -0.5 / e);
                let mean = self.eta1.component_mul(&var);
                Ok(GaussianMoments { mean, cov: Covariance::Diagonal(var) })
            }
            Eta2::Full(m) => {
                let cov = spd_inverse(&(m * -2.0))?;
                let mean = &cov * &self.eta1;
                Ok(GaussianMoments { mean, cov: Covariance::Full(cov) })
            }
        }
    }
}

/// KL(p ‖ q) between two normalizable Gaussians of equal dimension.
pub fn gaussian_kl(p: &GaussianFactor, q: &GaussianFactor) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { left: p.dim(), right: q.dim() });
    }
    let mp = p.moments()?;
    let mq = q.moments()?;
    let k = p.dim() as f64;
    if let (Covariance::Diagonal(vp), Covariance::Diagonal(vq)) = (&mp.cov, &mq.cov) {
        let mut kl = 0.0;
        for i in 0..p.dim() {
            let dm = mq.mean[i] - mp.mean[i];
            kl += 0.5 * (vp[i] / vq[i] + dm * dm / vq[i] - 1.0 + (vq[i] / vp[i]).ln());
        }
        return Ok(kl);
    }
    let sp = mp.cov.to_full();
    let sq = mq.cov.to_full();
    let prec_q = q.precision();
    let dm = &mq.mean - &mp.mean;
    let trace = (&prec_q * &sp).trace();
    let quad = (dm.transpose() * &prec_q * &dm)[(0, 0)];
    let logdet = |m: &DMatrix<f64>| -> Result<f64> {
        let chol = m.clone().cholesky().ok_or(Error::NonNormalizable { coordinate: 0, precision: 0.0 })?;
        Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    Ok(0.5 * (trace + quad - k + logdet(&sq)? - logdet(&sp)?))
}

/// Gamma factor `Gam(shape, rate)`; natural parameters are `(shape - 1, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFactor {
    pub shape: f64,
    pub rate: f64,
}

impl GammaFactor {
    pub fn new(shape: f64, rate: f64) -> Self {
        GammaFactor { shape, rate }
    }

    pub fn unit() -> Self {
        GammaFactor { shape: 1.0, rate: 0.0 }
    }

    pub fn multiply(&self, other: &GammaFactor) -> GammaFactor {
        GammaFactor { shape: self.shape + other.shape - 1.0, rate: self.rate + other.rate }
    }

    pub fn divide(&self, other: &GammaFactor) -> GammaFactor {
        GammaFactor { shape: self.shape - other.shape + 1.0, rate: self.rate - other.rate }
    }

    pub fn damp_towards(&self, old: &GammaFactor, weight: f64) -> GammaFactor {
        GammaFactor {
            shape: 1.0 + weight * (self.shape - 1.0) + (1.0 - weight) * (old.shape - 1.0),
            rate: weight * self.rate + (1.0 - weight) * old.rate,
        }
    }

    pub fn max_abs_diff(&self, other: &GammaFactor) -> f64 {
        (self.shape - other.shape).abs().max((self.rate - other.rate).abs())
    }

    pub fn is_normalizable(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite()
    }

    pub fn mean(&self) -> Result<f64> {
        if !self.is_normalizable() {
            return Err(Error::GammaNonNormalizable { shape: self.shape, rate: self.rate });
        }
        Ok(self.shape / self.rate)
    }
}

/// Either kind of factor attached to a variable block.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Gaussian(GaussianFactor),
    Gamma(GammaFactor),
}

impl Factor {
    pub fn multiply(&self, other: &Factor) -> Result<Factor> {
        match (self, other) {
            (Factor::Gaussian(a), Factor::Gaussian(b)) => Ok(Factor::Gaussian(a.multiply(b)?)),
            (Factor::Gamma(a), Factor::Gamma(b)) => Ok(Factor::Gamma(a.multiply(b))),
            _ => Err(Error::KindMismatch("multiply")),
        }
    }

    pub fn divide(&self, other: &Factor) -> Result<Factor> {
        match (self, other) {
            (Factor::Gaussian(a), Factor::Gaussian(b)) => Ok(Factor::Gaussian(a.divide(b)?)),
            (Factor::Gamma(a), Factor::Gamma(b)) => Ok(Factor::Gamma(a.divide(b))),
            _ => Err(Error::KindMismatch("divide")),
        }
    }

    pub fn damp_towards(&self, old: &Factor, weight: f64) -> Result<Factor> {
        match (self, old) {
            (Factor::Gaussian(a), Factor::Gaussian(b)) => Ok(Factor::Gaussian(a.damp_towards(b, weight)?)),
            (Factor::Gamma(a), Factor::Gamma(b)) => Ok(Factor::Gamma(a.damp_towards(b, weight))),
            _ => Err(Error::KindMismatch("damp")),
        }
    }

    pub fn max_abs_diff(&self, other: &Factor) -> f64 {
        match (self, other) {
            (Factor::Gaussian(a), Factor::Gaussian(b)) => a.max_abs_diff(b),
            (Factor::Gamma(a), Factor::Gamma(b)) => a.max_abs_diff(b),
            _ => f64::INFINITY,
        }
    }

    pub fn is_normalizable(&self) -> bool {
        match self {
            Factor::Gaussian(g) => g.is_normalizable(),
            Factor::Gamma(g) => g.is_normalizable(),
        }
    }

    /// The unit factor of the same kind and shape.
    pub fn unit_like(&self) -> Factor {
        match self {
            Factor::Gaussian(g) if g.is_diagonal() => Factor::Gaussian(GaussianFactor::unit_diagonal(g.dim())),
            Factor::Gaussian(g) => Factor::Gaussian(GaussianFactor::unit_full(g.dim())),
            Factor::Gamma(_) => Factor::Gamma(GammaFactor::unit()),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianFactor> {
        match self {
            Factor::Gaussian(g) => Some(g),
            Factor::Gamma(_) => None,
        }
    }

    pub fn as_gamma(&self) -> Option<&GammaFactor> {
        match self {
            Factor::Gamma(g) => Some(g),
            Factor::Gaussian(_) => None,
        }
    }

    /// Number of scalar natural parameters (used for diagnostics).
    pub fn dim(&self) -> usize {
        match self {
            Factor::Gaussian(g) => g.dim(),
            Factor::Gamma(_) => 1,
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamp the eigenvalues of a symmetric matrix from below.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clamped) * v.transpose()))
}

fn cholesky_pivot_failure(m: &DMatrix<f64>) -> Option<(usize, f64)> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Some((j, d));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    None
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some((coordinate, precision)) = cholesky_pivot_failure(m) {
        return Err(Error::NonNormalizable { coordinate, precision });
    }
    let chol = symmetrize(m).cholesky().ok_or(Error::NonNormalizable { coordinate: 0, precision: 0.0 })?;
    Ok(symmetrize(&chol.inverse()))
}
