//! Gaussian-windowed SSIM over valid window positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.window_sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0)
        {
            return Err(Error::Domain(
                "SSIM sigma, k1, k2 and range must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel_1d(&self) -> Vec<f64> {
        let half = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Separable "valid" correlation of a plane with `kernel ⊗ kernel`.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn plane_ssim(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    params: &SsimParams,
    kernel: &[f64],
) -> f64 {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, h, w, kernel);
    let mu_y = filter_valid(y, h, w, kernel);
    let e_xx = filter_valid(&xx, h, w, kernel);
    let e_yy = filter_valid(&yy, h, w, kernel);
    let e_xy = filter_valid(&xy, h, w, kernel);
    let (c1, c2) = (params.c1(), params.c2());
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM over all valid window positions and channels.
pub fn ssim(x: &Grid2D, y: &Grid2D, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    x.ensure_same_shape(y, "ssim operands")?;
    x.check_image()?;
    y.check_image()?;
    let (h, w, c) = x.dims();
    if h < params.window_size || w < params.window_size {
        return Err(Error::Domain(format!(
            "{h}x{w} image is smaller than the {}x{} window",
            params.window_size, params.window_size
        )));
    }
    let kernel = params.kernel_1d();
    let total: f64 = (0..c)
        .map(|ch| plane_ssim(&x.channel(ch), &y.channel(ch), h, w, params, &kernel))
        .sum();
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = SsimParams::default().kernel_1d();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn identical_images_score_one() {
        let x = Grid2D::from_fn(20, 17, 3, |y, x, c| {
            ((y * 7 + x * 3 + c) % 11) as f64 / 10.0
        })
        .unwrap();
        assert_eq!(ssim(&x, &x, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let p = SsimParams::default();
        let a = Grid2D::filled(16, 16, 1, 1.0).unwrap();
        let b = Grid2D::filled(16, 16, 1, 0.0).unwrap();
        let s = ssim(&a, &b, &p).unwrap();
        assert!((s - 0.0001 / 1.0001).abs() < 1e-9);
    }

    #[test]
    fn preconditions() {
        let p = SsimParams::default();
        let small = Grid2D::filled(10, 20, 1, 0.5).unwrap();
        assert!(matches!(ssim(&small, &small, &p), Err(Error::Domain(_))));
        let a = Grid2D::filled(12, 12, 1, 0.5).unwrap();
        let b = Grid2D::filled(12, 12, 3, 0.5).unwrap();
        assert!(matches!(ssim(&a, &b, &p), Err(Error::Shape(_))));
        let hot = Grid2D::filled(12, 12, 1, 1.5).unwrap();
        assert!(matches!(ssim(&a, &hot, &p), Err(Error::Range { .. })));
        let even = SsimParams {
            window_size: 10,
            ..p
        };
        assert!(ssim(&a, &a, &even).is_err());
    }
}
