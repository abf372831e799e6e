//! Gaussian feature statistics and the Fréchet distance between them.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImageSource, JointEncoder};
use crate::error::{Error, Result};

/// Eigenvalues below this are treated as zero before taking square roots.
pub const EIGEN_CLIP: f64 = 1e-10;

/// Anything that maps an image to a feature vector for FID.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, image: &ImageSource) -> Result<Vec<f64>>;
}

/// Uses a joint encoder's image tower as the feature extractor.
pub struct EncoderFeatures<'a, E: JointEncoder + ?Sized>(pub &'a E);

impl<E: JointEncoder + ?Sized> FeatureExtractor for EncoderFeatures<'_, E> {
    fn id(&self) -> &str {
        &self.0.handle().identifier
    }

    fn extract(&self, image: &ImageSource) -> Result<Vec<f64>> {
        self.0.encode_image(image)
    }
}

pub fn extract_all<X: FeatureExtractor + ?Sized>(
    extractor: &X,
    images: &[ImageSource],
) -> Result<Vec<Vec<f64>>> {
    images.par_iter().map(|i| extractor.extract(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major, `dim x dim`.
    pub covariance: Vec<Vec<f64>>,
    pub sample_count: usize,
    #[serde(default)]
    pub extractor_id: String,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    pub fn from_parts(mean: Vec<f64>, covariance: &DMatrix<f64>, sample_count: usize) -> Self {
        let sym = (covariance + covariance.transpose()) * 0.5;
        GaussianStats {
            covariance: (0..sym.nrows())
                .map(|i| sym.row(i).iter().copied().collect())
                .collect(),
            mean,
            sample_count,
            extractor_id: String::new(),
        }
    }

    pub fn with_extractor(mut self, id: impl Into<String>) -> Self {
        self.extractor_id = id.into();
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stats: GaussianStats = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let d = stats.dim();
        if stats.covariance.len() != d || stats.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!(
                "{}: covariance is not {d}x{d}",
                path.display()
            )));
        }
        Ok(stats)
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::Precondition(format!(
            "at least 2 feature vectors are needed, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().position(|f| f.len() != d) {
        return Err(Error::Validation(format!(
            "feature {bad} has width {}, expected {d}",
            features[bad].len()
        )));
    }
    let n = features.len();
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for f in features {
        let c = DVector::from_iterator(d, f.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok(GaussianStats::from_parts(mean, &cov, n))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig
        .eigenvalues
        .map(|l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `Tr((A B)^{1/2})` for symmetric PSD `A`, `B`, computed as the trace of
/// the root of the symmetric matrix `A^{1/2} B A^{1/2}`, which has the same
/// spectrum as `A B`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = psd_sqrt(a);
    let inner = &ra * b * &ra;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let t: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() })
        .sum();
    if !t.is_finite() {
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let max = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::Numeric(format!(
            "matrix square root is not finite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    Ok(t)
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "feature widths differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sa = a.covariance_matrix();
    let sb = b.covariance_matrix();
    let cross = trace_sqrt_product(&sa, &sb)?;
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numeric(format!("FID is not finite ({d})")));
    }
    Ok(d.max(0.0))
}
