//! Centering, whitening and length normalization of i-vectors, plus the
//! cosine-scoring baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_spd, sample_mean_cov};

/// Relative ridge added to the covariance before whitening.
pub const RIDGE: f64 = 1e-6;

/// Norm below which a centered, whitened vector is considered degenerate.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    mean: DVector<f64>,
    whitener: DMatrix<f64>,
    fitted_on: usize,
}

impl Preprocessor {
    /// Fits mean and whitener `(Cov + eps I)^(-1/2)` with `eps = RIDGE * tr(Cov) / d`.
    ///
    /// With `whiten == false` the whitener is the identity and only the mean
    /// is estimated.
    pub fn fit(vectors: &[DVector<f64>], whiten: bool) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::Fit(format!("need at least 2 vectors, got {}", vectors.len())));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Fit("vectors have inconsistent dimensions".into()));
        }
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Fit("non-finite input vector".into()));
        }
        let (mean, cov) = sample_mean_cov(vectors);
        let whitener = if whiten {
            let trace = cov.trace();
            // all-equal samples have zero trace; fall back to a unit floor
            let eps = if trace > 0.0 { RIDGE * trace / d as f64 } else { RIDGE };
            let ridged = cov + DMatrix::identity(d, d) * eps;
            inv_sqrt_spd(&ridged).ok_or_else(|| Error::Fit("covariance is not positive definite".into()))?
        } else {
            DMatrix::identity(d, d)
        };
        Ok(Self {
            mean,
            whitener,
            fitted_on: vectors.len(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            whitener: DMatrix::identity(dim, dim),
            fitted_on: 0,
        }
    }

    /// Rebuilds a preprocessor from stored parts, checking finiteness and symmetry.
    pub fn from_parts(mean: DVector<f64>, whitener: DMatrix<f64>, fitted_on: usize) -> Result<Self> {
        let d = mean.len();
        if whitener.nrows() != d || whitener.ncols() != d {
            return Err(Error::InvalidModel("whitener shape does not match mean".into()));
        }
        if mean.iter().chain(whitener.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("preprocessor has non-finite entries".into()));
        }
        let asym = (&whitener - whitener.transpose()).norm();
        if asym > 1e-10 * whitener.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel("whitener is not symmetric".into()));
        }
        Ok(Self {
            mean,
            whitener,
            fitted_on,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    /// Centered and whitened vector, without length normalization.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.whitener * (v - &self.mean)
    }

    pub fn length_normalize(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Normalize(format!(
                "vector has dimension {}, preprocessor expects {}",
                v.len(),
                self.dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Normalize("non-finite input vector".into()));
        }
        let w = self.whiten(v);
        let norm = w.norm();
        if norm < MIN_NORM {
            return Err(Error::Normalize("vector vanishes after centering and whitening".into()));
        }
        Ok(w / norm)
    }

    pub fn apply_all(&self, vectors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        vectors.iter().map(|v| self.length_normalize(v)).collect()
    }
}

pub fn cosine_score(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Score("dimension mismatch".into()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Score("cosine of a zero vector".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}
