//! Image-quality metrics: SSIM, and Fréchet / kernel distances over a
//! pluggable feature extractor.

mod distance;
mod ssim;

pub use distance::{
    frechet_distance, gather_stats, kid, kid_reported, FeatureStats, EIGEN_CLIP, KID_SUBSETS,
    KID_SUBSET_SIZE,
};
pub use ssim::{ssim, SsimParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Deterministic image → feature-vector map.
pub trait FeatureExtractor: Send + Sync {
    fn output_dim(&self) -> usize;

    fn extract(&self, image: &Grid2D) -> Result<Vec<f64>>;

    /// Identity echoed into reports.
    fn info(&self) -> ExtractorInfo;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorInfo {
    pub kind: String,
    pub seed: u64,
    pub dim: usize,
}

/// Side length of the grey thumbnail the toy extractor projects.
pub const TOY_THUMBNAIL: usize = 16;

/// Box-downsample to a 16×16 grey thumbnail, then apply a fixed seeded
/// Gaussian random projection (no bias).
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    seed: u64,
    dim: usize,
    /// `dim × 256`, row-major.
    projection: Vec<f64>,
}

pub fn toy_extractor(seed: u64, output_dim: usize) -> Result<ToyExtractor> {
    if output_dim < 2 {
        return Err(Error::Domain(format!(
            "extractor output_dim must be >= 2, got {output_dim}"
        )));
    }
    let inputs = TOY_THUMBNAIL * TOY_THUMBNAIL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (inputs as f64).sqrt();
    let projection = (0..output_dim * inputs)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    Ok(ToyExtractor {
        seed,
        dim: output_dim,
        projection,
    })
}

/// Area-style box average of the channel mean onto a `size × size` grid.
/// Each output cell averages at least one input pixel.
pub fn gray_thumbnail(image: &Grid2D, size: usize) -> Vec<f64> {
    let (h, w, c) = image.dims();
    let bounds = |i: usize, n: usize| {
        let start = i * n / size;
        let end = ((i + 1) * n / size).max(start + 1).min(n);
        (start.min(n - 1), end)
    };
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let (y0, y1) = bounds(i, h);
        for j in 0..size {
            let (x0, x1) = bounds(j, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    for ch in 0..c {
                        sum += image.get(y, x, ch);
                    }
                }
            }
            out.push(sum / ((y1 - y0) * (x1 - x0) * c) as f64);
        }
    }
    out
}

impl FeatureExtractor for ToyExtractor {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, image: &Grid2D) -> Result<Vec<f64>> {
        let thumb = gray_thumbnail(image, TOY_THUMBNAIL);
        Ok(self
            .projection
            .chunks_exact(thumb.len())
            .map(|row| row.iter().zip(&thumb).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn info(&self) -> ExtractorInfo {
        ExtractorInfo {
            kind: "toy-random-projection".into(),
            seed: self.seed,
            dim: self.dim,
        }
    }
}
