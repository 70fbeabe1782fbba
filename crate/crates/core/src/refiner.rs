//! Frequency-domain structural refinement.
//!
//! The generated image keeps its phase spectrum; inside a high-pass band its
//! amplitude is averaged with the source image's amplitude, which pulls edge
//! structure from the source into the result. Channels are refined
//! independently.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Largest imaginary residue tolerated when returning to the spatial domain.
pub const MAX_IMAG_RESIDUE: f64 = 1e-6;

/// Default normalized cutoff radius of the high-pass band.
pub const DEFAULT_CUTOFF: f64 = 0.25;

/// Per-channel 2D DFT, each channel a row-major `height × width` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    planes: Vec<Vec<Complex64>>,
}

impl Spectrum {
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<Complex64>>) -> Result<Self> {
        if height == 0 || width == 0 || planes.is_empty() {
            return Err(Error::Shape("spectrum dimensions must be positive".into()));
        }
        if planes.iter().any(|p| p.len() != height * width) {
            return Err(Error::Shape(format!(
                "spectrum planes must hold {} bins",
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &[Complex64] {
        &self.planes[c]
    }

    pub fn bin(&self, u: usize, v: usize, c: usize) -> Complex64 {
        self.planes[c][u * self.width + v]
    }

    /// Largest `|K(-u,-v) - conj(K(u,v))|` relative to the largest bin magnitude.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for plane in &self.planes {
            for u in 0..h {
                for v in 0..w {
                    let k = plane[u * w + v];
                    let mirror = plane[((h - u) % h) * w + (w - v) % w];
                    worst = worst.max((mirror - k.conj()).norm());
                    scale = scale.max(k.norm());
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Per-bin magnitude and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudePhase {
    pub height: usize,
    pub width: usize,
    pub amplitude: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
}

impl AmplitudePhase {
    /// Recombines `A · exp(jΦ)` into a spectrum.
    pub fn compose(&self) -> Result<Spectrum> {
        let planes = self
            .amplitude
            .iter()
            .zip(&self.phase)
            .map(|(a, p)| {
                a.iter()
                    .zip(p)
                    .map(|(&a, &p)| Complex64::from_polar(a, p))
                    .collect()
            })
            .collect();
        Spectrum::from_planes(self.height, self.width, planes)
    }
}

/// Real weights in `[0, 1]` over frequency bins, symmetric under negation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FrequencyMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{height}x{width} frequency mask needs {} values",
                height * width
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "frequency mask value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.width + v]
    }

    pub fn is_symmetric(&self) -> bool {
        let (h, w) = (self.height, self.width);
        (0..h).all(|u| (0..w).all(|v| self.get(u, v) == self.get((h - u) % h, (w - v) % w)))
    }
}

/// Magnitude of the signed frequency of bin `k` on an axis of length `n`.
fn signed_freq(k: usize, n: usize) -> usize {
    if k <= n / 2 {
        k
    } else {
        n - k
    }
}

/// Ideal radial high-pass: 1 where the normalized radius is at least `cutoff`.
///
/// Each axis frequency is scaled by its largest magnitude, and the radius by
/// the largest radius present, so the outermost bins sit at exactly 1.
pub fn make_highpass_mask(height: usize, width: usize, cutoff: f64) -> Result<FrequencyMask> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::Domain(format!("cutoff {cutoff} outside [0, 1]")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Shape(
            "frequency mask dimensions must be positive".into(),
        ));
    }
    let axis = |k: usize, n: usize| {
        let top = n / 2;
        if top == 0 {
            0.0
        } else {
            signed_freq(k, n) as f64 / top as f64
        }
    };
    let mut radius = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            radius.push(axis(u, height).hypot(axis(v, width)));
        }
    }
    let r_max = radius.iter().copied().fold(0.0, f64::max);
    let values = radius
        .into_iter()
        .map(|r| {
            let r = if r_max > 0.0 { r / r_max } else { 0.0 };
            if r >= cutoff {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    FrequencyMask::new(height, width, values)
}

fn transform_plane(
    data: &mut [Complex64],
    height: usize,
    width: usize,
    row_fft: &dyn Fft<f64>,
    col_fft: &dyn Fft<f64>,
) {
    row_fft.process(data);
    let mut transposed = vec![Complex64::default(); data.len()];
    for y in 0..height {
        for x in 0..width {
            transposed[x * height + y] = data[y * width + x];
        }
    }
    col_fft.process(&mut transposed);
    for x in 0..width {
        for y in 0..height {
            data[y * width + x] = transposed[x * height + y];
        }
    }
}

fn transform_planes(
    planes: &mut [Vec<Complex64>],
    height: usize,
    width: usize,
    direction: FftDirection,
) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    let col_fft = planner.plan_fft(height, direction);
    planes
        .par_iter_mut()
        .for_each(|p| transform_plane(p, height, width, &*row_fft, &*col_fft));
}

/// Unnormalized forward 2D DFT of every channel.
pub fn fft2(image: &Grid2D) -> Spectrum {
    let (h, w, c) = image.dims();
    let mut planes: Vec<Vec<Complex64>> = (0..c)
        .map(|ch| {
            image
                .channel(ch)
                .into_iter()
                .map(|v| Complex64::new(v, 0.0))
                .collect()
        })
        .collect();
    transform_planes(&mut planes, h, w, FftDirection::Forward);
    Spectrum {
        height: h,
        width: w,
        planes,
    }
}

/// Normalized inverse transform, returning the real part and the largest
/// absolute imaginary residue.
pub fn ifft2_with_residue(spec: &Spectrum) -> Result<(Grid2D, f64)> {
    if spec
        .planes
        .iter()
        .flatten()
        .any(|k| !k.re.is_finite() || !k.im.is_finite())
    {
        return Err(Error::Numeric("spectrum contains non-finite bins".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let mut planes = spec.planes.clone();
    transform_planes(&mut planes, h, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    let mut residue: f64 = 0.0;
    let real: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            p.iter()
                .map(|k| {
                    residue = residue.max((k.im * scale).abs());
                    k.re * scale
                })
                .collect()
        })
        .collect();
    Ok((Grid2D::from_channels(h, w, &real)?, residue))
}

/// Normalized inverse transform. Fails if the result is not real to within
/// [`MAX_IMAG_RESIDUE`].
pub fn ifft2(spec: &Spectrum) -> Result<Grid2D> {
    let (grid, residue) = ifft2_with_residue(spec)?;
    if residue > MAX_IMAG_RESIDUE {
        return Err(Error::SymmetryViolation {
            residue,
            limit: MAX_IMAG_RESIDUE,
        });
    }
    Ok(grid)
}

/// Polar split with `arg(0) = 0`.
pub fn split_amp_phase(spec: &Spectrum) -> AmplitudePhase {
    let polar = |k: &Complex64| {
        if k.re == 0.0 && k.im == 0.0 {
            (0.0, 0.0)
        } else {
            (k.norm(), k.arg())
        }
    };
    let (amplitude, phase) = spec
        .planes
        .iter()
        .map(|p| p.iter().map(polar).unzip())
        .unzip();
    AmplitudePhase {
        height: spec.height,
        width: spec.width,
        amplitude,
        phase,
    }
}

/// Refinement result before clamping.
#[derive(Debug, Clone)]
pub struct Refined {
    pub image: Grid2D,
    pub spectrum: Spectrum,
    pub imag_residue: f64,
}

/// Blends the source amplitude into the generated amplitude on the band `B`,
/// keeping the generated phase. Returns the unclamped spatial result.
pub fn refine_unclamped(
    source: &Grid2D,
    generated: &Grid2D,
    band: &FrequencyMask,
) -> Result<Refined> {
    source.ensure_same_shape(generated, "refine source/generated")?;
    if band.height != generated.height() || band.width != generated.width() {
        return Err(Error::Shape(format!(
            "frequency mask is {}x{}, image is {}x{}",
            band.height,
            band.width,
            generated.height(),
            generated.width()
        )));
    }
    let src = split_amp_phase(&fft2(source));
    let gen = split_amp_phase(&fft2(generated));
    let planes = src
        .amplitude
        .iter()
        .zip(&gen.amplitude)
        .zip(&gen.phase)
        .map(|((a_src, a_gen), phase)| {
            a_src
                .iter()
                .zip(a_gen)
                .zip(phase)
                .zip(&band.values)
                .map(|(((&ap, &ar), &phi), &b)| {
                    let amp = (1.0 - b) * ar + b * (ap + ar) / 2.0;
                    Complex64::from_polar(amp, phi)
                })
                .collect()
        })
        .collect();
    let spectrum = Spectrum::from_planes(generated.height(), generated.width(), planes)?;
    let (image, imag_residue) = ifft2_with_residue(&spectrum)?;
    if imag_residue > MAX_IMAG_RESIDUE {
        return Err(Error::SymmetryViolation {
            residue: imag_residue,
            limit: MAX_IMAG_RESIDUE,
        });
    }
    Ok(Refined {
        image,
        spectrum,
        imag_residue,
    })
}

/// Structural refinement clamped back to the image range.
pub fn refine(source: &Grid2D, generated: &Grid2D, band: &FrequencyMask) -> Result<Grid2D> {
    Ok(refine_unclamped(source, generated, band)?.image.clamp01())
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N^2) DFT, independent of rustfft.
    fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::default();
                for y in 0..h {
                    for x in 0..w {
                        let ang =
                            -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        acc += plane[y * w + x] * Complex64::from_polar(1.0, ang);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Grid2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2D::from_fn(h, w, c, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn constant_and_delta() {
        let c = Grid2D::filled(4, 6, 1, 0.3).unwrap();
        let s = fft2(&c);
        assert!((s.bin(0, 0, 0).re - 0.3 * 24.0).abs() < 1e-12);
        for i in 1..24 {
            assert!(s.plane(0)[i].norm() < 1e-12);
        }
        let delta =
            Grid2D::from_fn(3, 5, 1, |y, x, _| if y == 0 && x == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(fft2(&delta)
            .plane(0)
            .iter()
            .all(|k| (k - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn four_point_example() {
        let g = Grid2D::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = fft2(&g);
        let expected = [10.0, -2.0, -4.0, 0.0];
        for (k, e) in s.plane(0).iter().zip(expected) {
            assert!((k - Complex64::new(e, 0.0)).norm() < 1e-12);
        }
        for (k, n) in s.plane(0).iter().zip(naive_dft(g.values(), 2, 2)) {
            assert!((k - n).norm() < 1e-12);
        }
        let back = ifft2(&s).unwrap();
        assert!(back.max_abs_diff(&g) < 1e-12);
    }

    #[test]
    fn matches_naive_dft_on_odd_sizes() {
        let g = random_image(5, 7, 2, 3);
        let s = fft2(&g);
        for c in 0..2 {
            let naive = naive_dft(&g.channel(c), 5, 7);
            for (a, b) in s.plane(c).iter().zip(&naive) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_and_zero() {
        let g = random_image(8, 8, 3, 1);
        assert!(ifft2(&fft2(&g)).unwrap().max_abs_diff(&g) < 1e-9);
        let zero = Spectrum::from_planes(3, 3, vec![vec![Complex64::default(); 9]]).unwrap();
        assert!(ifft2(&zero).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut plane = vec![Complex64::default(); 16];
        plane[1] = Complex64::new(1.0, 0.0);
        let s = Spectrum::from_planes(4, 4, vec![plane]).unwrap();
        assert!(s.conjugate_asymmetry() > 0.5);
        assert!(matches!(ifft2(&s), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn polar_split() {
        let s = Spectrum::from_planes(
            1,
            2,
            vec![vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)]],
        )
        .unwrap();
        let ap = split_amp_phase(&s);
        assert_eq!(ap.amplitude[0], vec![5.0, 0.0]);
        assert_eq!(ap.phase[0], vec![4.0f64.atan2(3.0), 0.0]);
        let back = ap.compose().unwrap();
        for (a, b) in back.plane(0).iter().zip(s.plane(0)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn highpass_shapes() {
        let all = make_highpass_mask(6, 8, 0.0).unwrap();
        assert!(all.values().iter().all(|&v| v == 1.0));
        let top = make_highpass_mask(6, 8, 1.0).unwrap();
        // only the corner bin at (3, 4) sits at the maximal radius
        let ones: Vec<usize> = (0..48).filter(|&i| top.values()[i] == 1.0).collect();
        assert_eq!(ones, vec![3 * 8 + 4]);
        for cutoff in [0.01, 0.25, 0.9] {
            let m = make_highpass_mask(7, 10, cutoff).unwrap();
            assert_eq!(m.get(0, 0), 0.0);
            assert!(m.is_symmetric());
        }
        assert!(make_highpass_mask(4, 4, 1.5).is_err());
        assert!(make_highpass_mask(4, 4, -0.1).is_err());
        let tiny = make_highpass_mask(1, 1, 0.0).unwrap();
        assert_eq!(tiny.values(), &[1.0]);
    }

    #[test]
    fn refine_identities() {
        let p = random_image(16, 12, 3, 5);
        let r = random_image(16, 12, 3, 6);
        let zero = FrequencyMask::filled(16, 12, 0.0).unwrap();
        assert!(
            refine_unclamped(&p, &r, &zero)
                .unwrap()
                .image
                .max_abs_diff(&r)
                < 1e-9
        );
        let band = make_highpass_mask(16, 12, 0.3).unwrap();
        assert!(
            refine_unclamped(&r, &r, &band)
                .unwrap()
                .image
                .max_abs_diff(&r)
                < 1e-9
        );
        let wrong = FrequencyMask::filled(4, 4, 0.0).unwrap();
        assert!(matches!(refine(&p, &r, &wrong), Err(Error::Shape(_))));
        assert!(matches!(
            refine(&p, &random_image(16, 12, 1, 0), &zero),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn refine_clamps() {
        let p =
            Grid2D::from_fn(8, 8, 1, |y, x, _| if (x + y) % 2 == 0 { 1.0 } else { 0.0 }).unwrap();
        let r = Grid2D::from_fn(8, 8, 1, |y, _, _| if y < 4 { 0.98 } else { 0.02 }).unwrap();
        let band = make_highpass_mask(8, 8, 0.0).unwrap();
        let out = refine(&p, &r, &band).unwrap();
        assert!(out.is_image());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn amplitude_sum_bounded_by_pointwise_max(seed in any::<u64>(), cutoff in 0.0f64..1.0) {
            let p = random_image(8, 10, 1, seed);
            let r = random_image(8, 10, 1, seed.wrapping_add(1));
            let band = make_highpass_mask(8, 10, cutoff).unwrap();
            let out = refine_unclamped(&p, &r, &band).unwrap();
            let a_out: f64 = split_amp_phase(&out.spectrum).amplitude[0].iter().sum();
            let a_p = &split_amp_phase(&fft2(&p)).amplitude[0];
            let a_r = &split_amp_phase(&fft2(&r)).amplitude[0];
            let bound: f64 = a_p.iter().zip(a_r).map(|(a, b)| a.max(*b)).sum();
            prop_assert!(a_out <= bound + 1e-9);
        }

        #[test]
        fn spectra_of_real_images_are_conjugate_symmetric(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
            let s = fft2(&random_image(h, w, 2, seed));
            prop_assert!(s.conjugate_asymmetry() < 1e-9);
        }
    }
}
