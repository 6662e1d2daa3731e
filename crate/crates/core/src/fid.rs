//! Gaussian feature statistics and the Fréchet distance between them.
//!
//! `d² = ‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁^{½} Σ₂ Σ₁^{½})^{½})`
//!
//! The squared distance is returned, matching the usual FID convention.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderError, FeatureSet};
use crate::image::Image;
use crate::linalg::{symmetric_eigen, LinalgError, Matrix};
use crate::math;

/// Symmetry tolerance accepted by [`sqrtm_psd`].
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Relative ridge added when a covariance was fitted from `N ≤ d` samples.
pub const RANK_DEFICIENT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FidError {
    #[error("need at least 2 feature rows, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite feature at row {0}")]
    NonFiniteFeature(usize),
    #[error("feature dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigendecomposition failed")]
    EigenFailure,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl From<LinalgError> for FidError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotSymmetric(a) => FidError::NotSymmetric(a),
            LinalgError::DimensionMismatch(_) => FidError::DimensionMismatch(0, 0),
            LinalgError::EigenFailure | LinalgError::Singular => FidError::EigenFailure,
        }
    }
}

/// Square-root algorithm for the cross term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqrtMethod {
    #[default]
    Eigen,
    NewtonSchulz { iterations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    /// Rows the statistics were fitted from; `None` for hand-built stats.
    pub samples: Option<usize>,
}

impl GaussianStats {
    /// Hand-built statistics; the covariance is symmetrised.
    pub fn new(mean: Vec<f64>, mut cov: Matrix) -> Result<Self, FidError> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(FidError::DimensionMismatch(mean.len(), cov.rows()));
        }
        cov.symmetrize();
        Ok(Self {
            mean,
            cov,
            samples: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Covariance used by the distance: ridge-regularised when `N ≤ d`.
    pub fn effective_cov(&self) -> Matrix {
        let d = self.dim();
        let mut cov = self.cov.clone();
        if matches!(self.samples, Some(n) if n <= d) {
            let eps = RANK_DEFICIENT_RIDGE * self.cov.trace() / d as f64;
            cov.add_diagonal(eps);
        }
        cov
    }
}

/// Column means and unbiased (`N − 1`) covariance, symmetrised.
pub fn fit_gaussian(features: &FeatureSet) -> Result<GaussianStats, FidError> {
    let n = features.len();
    if n < 2 {
        return Err(FidError::TooFewSamples(n));
    }
    if let Some(bad) = features.rows().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(FidError::NonFiniteFeature(bad));
    }
    let d = features.dim();
    let mut mean = alloc::vec![0.0; d];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = alloc::vec![0.0; d];
    for row in features.rows() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(GaussianStats {
        mean,
        cov,
        samples: Some(n),
    })
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix, FidError> {
    if !m.is_square() {
        return Err(FidError::DimensionMismatch(m.rows(), m.cols()));
    }
    let scale = m.data().iter().fold(1.0f64, |s, v| s.max(math::abs(*v)));
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(FidError::NotSymmetric(asym));
    }
    let mut sym = m.clone();
    sym.symmetrize();
    let eig = symmetric_eigen(&sym)?;
    Ok(eig.reconstruct_with(|l| math::sqrt(l.max(0.0))))
}

/// Coupled Newton–Schulz iteration for the square root of a PSD matrix.
///
/// Converges when the input is normalised by its Frobenius norm; cheaper than
/// an eigendecomposition at large `d` but less accurate for ill-conditioned inputs.
pub fn sqrtm_newton_schulz(m: &Matrix, iterations: usize) -> Result<Matrix, FidError> {
    if !m.is_square() {
        return Err(FidError::DimensionMismatch(m.rows(), m.cols()));
    }
    let n = m.rows();
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let mut y = m.scale(1.0 / norm);
    let mut z = Matrix::identity(n);
    let three = Matrix::identity(n).scale(3.0);
    for _ in 0..iterations {
        let t = three.sub(&z.matmul(&y)?)?.scale(0.5);
        y = y.matmul(&t)?;
        z = t.matmul(&z)?;
    }
    let mut out = y.scale(math::sqrt(norm));
    out.symmetrize();
    Ok(out)
}

fn sqrtm_with(m: &Matrix, method: SqrtMethod) -> Result<Matrix, FidError> {
    match method {
        SqrtMethod::Eigen => sqrtm_psd(m),
        SqrtMethod::NewtonSchulz { iterations } => sqrtm_newton_schulz(m, iterations),
    }
}

/// Squared Fréchet distance with the default eigen square root.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64, FidError> {
    frechet_distance_with(g1, g2, SqrtMethod::Eigen)
}

pub fn frechet_distance_with(g1: &GaussianStats, g2: &GaussianStats, method: SqrtMethod) -> Result<f64, FidError> {
    if g1.dim() != g2.dim() {
        return Err(FidError::DimensionMismatch(g1.dim(), g2.dim()));
    }
    let mean_term: f64 = g1.mean.iter().zip(&g2.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let s1 = g1.effective_cov();
    let s2 = g2.effective_cov();
    let root1 = sqrtm_with(&s1, method)?;
    let mut inner = root1.matmul(&s2)?.matmul(&root1)?;
    inner.symmetrize();
    let cross = sqrtm_with(&inner, method)?.trace();
    let total = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    let tol = 1e-6f64.max(1e-9 * (s1.trace() + s2.trace()));
    if total < 0.0 && total >= -tol {
        return Ok(0.0);
    }
    Ok(total.max(0.0))
}

/// Fréchet distance between two feature sets.
pub fn score_features(reference: &FeatureSet, stitched: &FeatureSet) -> Result<f64, FidError> {
    if reference.dim() != stitched.dim() {
        return Err(FidError::DimensionMismatch(reference.dim(), stitched.dim()));
    }
    frechet_distance(&fit_gaussian(reference)?, &fit_gaussian(stitched)?)
}

/// Embeds both image sets with `enc` and returns their Fréchet distance.
/// Lower means more similar.
pub fn score_stitched(reference: &[Image], stitched: &[Image], enc: &Encoder) -> Result<f64, FidError> {
    for set in [reference, stitched] {
        if set.len() < 2 {
            return Err(FidError::TooFewSamples(set.len()));
        }
    }
    score_features(&enc.embed_batch(reference)?, &enc.embed_batch(stitched)?)
}
