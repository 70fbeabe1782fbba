//! Fréchet distance between Gaussian feature statistics and the unbiased
//! polynomial-kernel MMD (KID).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FeatureExtractor;
use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Eigenvalues above this negative threshold are treated as round-off and clipped.
pub const EIGEN_CLIP: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Sample mean and unbiased covariance of a set of feature vectors.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 feature vectors, got {n}"
            )));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape(
                "feature vectors must share a positive dimension".into(),
            ));
        }
        let data = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
        let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
        covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self {
            mean,
            covariance,
            count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Extracts features from every image and summarizes them.
pub fn gather_stats(images: &[Grid2D], extractor: &dyn FeatureExtractor) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 images, got {}",
            images.len()
        )));
    }
    let features = images
        .iter()
        .map(|g| extractor.extract(g))
        .collect::<Result<Vec<_>>>()?;
    FeatureStats::from_features(&features)
}

/// Eigendecomposition-based square root of a symmetric PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < EIGEN_CLIP {
            return Err(Error::Numeric(format!("{what} has eigenvalue {v:e}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`.
///
/// The trace of `(Σa Σb)^{1/2}` is taken from the symmetric product
/// `Σa^{1/2} Σb Σa^{1/2}`, which has the same spectrum as `Σa Σb`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = &a.mean - &b.mean;
    let root_a = psd_sqrt(&a.covariance, "covariance a")?;
    // validates b as PSD too
    psd_sqrt(&b.covariance, "covariance b")?;
    let inner = &root_a * &b.covariance * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let mut trace_root = 0.0;
    for v in SymmetricEigen::new(inner).eigenvalues.iter() {
        if *v < EIGEN_CLIP {
            return Err(Error::Numeric(format!(
                "covariance product has eigenvalue {v:e}"
            )));
        }
        trace_root += v.max(0.0).sqrt();
    }
    let value = diff.dot(&diff) + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_root;
    Ok(value.max(0.0))
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

fn check_sets(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> Result<usize> {
    if fa.len() < 2 || fb.len() < 2 {
        return Err(Error::Domain(format!(
            "KID needs at least 2 vectors per set, got {} and {}",
            fa.len(),
            fb.len()
        )));
    }
    let d = fa[0].len();
    if d == 0 || fa.iter().chain(fb).any(|v| v.len() != d) {
        return Err(Error::Domain(
            "KID feature vectors must share a positive dimension".into(),
        ));
    }
    Ok(d)
}

/// Unbiased squared MMD with kernel `(xᵀy/d + 1)³`.
pub fn kid(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> Result<f64> {
    check_sets(fa, fb)?;
    let within = |set: &[Vec<f64>]| {
        let m = set.len();
        let mut sum = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                sum += poly_kernel(&set[i], &set[j]);
            }
        }
        2.0 * sum / (m * (m - 1)) as f64
    };
    let mut cross = 0.0;
    for x in fa {
        for y in fb {
            cross += poly_kernel(x, y);
        }
    }
    let cross = cross / (fa.len() * fb.len()) as f64;
    Ok(within(fa) + within(fb) - 2.0 * cross)
}

/// Number of random subsets averaged when a set exceeds [`KID_SUBSET_SIZE`].
pub const KID_SUBSETS: usize = 10;
pub const KID_SUBSET_SIZE: usize = 100;

/// KID as reported: the full-set estimate when both sets hold at most
/// [`KID_SUBSET_SIZE`] vectors, otherwise the mean over [`KID_SUBSETS`]
/// seeded random subsets of that size.
pub fn kid_reported(fa: &[Vec<f64>], fb: &[Vec<f64>], seed: u64) -> Result<f64> {
    check_sets(fa, fb)?;
    if fa.len() <= KID_SUBSET_SIZE && fb.len() <= KID_SUBSET_SIZE {
        return kid(fa, fb);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..KID_SUBSETS {
        let pick = |set: &[Vec<f64>], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let size = set.len().min(KID_SUBSET_SIZE);
            sample(rng, set.len(), size)
                .into_iter()
                .map(|i| set[i].clone())
                .collect()
        };
        let sa = pick(fa, &mut rng);
        let sb = pick(fb, &mut rng);
        total += kid(&sa, &sb)?;
    }
    Ok(total / KID_SUBSETS as f64)
}
