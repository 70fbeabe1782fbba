#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tryon_core::backend::{Denoiser, DenoiserRequest, DenoiserResponse};
use tryon_core::grid::{Grid2D, Mask};
use tryon_core::image_io::save_image;
use tryon_core::schedule::NoiseSchedule;

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> Grid2D {
    let values = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    Grid2D::new(h, w, c, values).unwrap()
}

/// Values already on the 8-bit lattice, so they survive a PNG round trip.
pub fn random_image_u8(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> Grid2D {
    let values = (0..h * w * c)
        .map(|_| rng.random::<u8>() as f64 / 255.0)
        .collect();
    Grid2D::new(h, w, c, values).unwrap()
}

pub fn center_mask(h: usize, w: usize) -> Mask {
    Mask::from_fn(h, w, |y, x| {
        y >= h / 4 && y < 3 * h / 4 && x >= w / 4 && x < 3 * w / 4
    })
    .unwrap()
}

/// Writes `n` synthetic records under `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, n: usize, size: usize, with_gt: bool, seed: u64) -> PathBuf {
    let mut r = rng(seed);
    let mut lines = Vec::new();
    for i in 0..n {
        let id = format!("rec{i:02}");
        let save = |name: &str, g: &Grid2D| {
            let file = format!("{id}_{name}.png");
            save_image(g, dir.join(&file)).unwrap();
            file
        };
        let person = save("person", &random_image_u8(size, size, 3, &mut r));
        let tint = r.random::<f64>();
        let garment = save(
            "garment",
            &Grid2D::from_fn(size, size, 3, |_, x, c| {
                (tint + 0.1 * c as f64 + 0.01 * x as f64).fract()
            })
            .unwrap(),
        );
        let mask = save("mask", &center_mask(size, size).to_grid());
        let densepose = save("densepose", &random_image_u8(size, size, 3, &mut r));
        let mut rec = serde_json::json!({
            "id": id,
            "source_person": person,
            "garment_ref": garment,
            "mask": mask,
            "densepose": densepose,
        });
        if with_gt {
            rec["ground_truth"] = save("gt", &random_image_u8(size, size, 3, &mut r)).into();
        }
        lines.push(rec.to_string());
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// Direct O(N²) 2D DFT of one real plane.
pub fn naive_dft(values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    acc += values[y * w + x] * Complex64::from_polar(1.0, ang);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

pub fn naive_idft(bins: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..h {
                for v in 0..w {
                    let ang = 2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    acc += bins[u * w + v] * Complex64::from_polar(1.0, ang);
                }
            }
            out[y * w + x] = acc / (h * w) as f64;
        }
    }
    out
}

/// Sliding-window SSIM with a full 2D Gaussian window, no separability.
pub fn brute_ssim(
    x: &Grid2D,
    y: &Grid2D,
    size: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    range: f64,
) -> f64 {
    let half = (size / 2) as f64;
    let mut win = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            win[i * size + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    let (h, w, ch) = x.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for oy in 0..=h - size {
            for ox in 0..=w - size {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let wt = win[i * size + j];
                        let a = x.get(oy + i, ox + j, c);
                        let b = y.get(oy + i, ox + j, c);
                        mx += wt * a;
                        my += wt * b;
                        sxx += wt * a * a;
                        syy += wt * b * b;
                        sxy += wt * a * b;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Unbiased MMD² with the cubic polynomial kernel, as explicit double loops.
pub fn brute_kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len() as f64;
    let k = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut saa = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                saa += k(&a[i], &a[j]);
            }
        }
    }
    let mut sbb = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                sbb += k(&b[i], &b[j]);
            }
        }
    }
    let mut sab = 0.0;
    for x in a {
        for y in b {
            sab += k(x, y);
        }
    }
    saa / (m * (m - 1.0)) + sbb / (n * (n - 1.0)) - 2.0 * sab / (m * n)
}

/// Wraps a denoiser and records every (timestep, latent) it is asked about.
pub struct Recording<D> {
    pub inner: D,
    pub calls: Mutex<Vec<(usize, Grid2D)>>,
}

impl<D> Recording<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<(usize, Grid2D)> {
        std::mem::take(&mut *self.calls.lock().unwrap())
    }
}

impl<D: Denoiser> Denoiser for Recording<D> {
    fn denoise(
        &self,
        req: &DenoiserRequest<'_>,
        sched: &NoiseSchedule,
    ) -> tryon_core::Result<DenoiserResponse> {
        self.calls
            .lock()
            .unwrap()
            .push((req.timestep, req.latent.clone()));
        self.inner.denoise(req, sched)
    }

    fn describe(&self) -> String {
        format!("recording({})", self.inner.describe())
    }
}
