//! Raster types shared by every stage of the sampler: real-valued grids,
//! binary masks, the per-call conditioning bundle, and mask compositing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height × width × channels raster of finite reals, row-major with
/// interleaved channels.
///
/// Images keep every value in `[0, 1]`; latents, noise and noise
/// predictions are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} grid needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a grid by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.index(y, x, c)]
    }

    /// Copies one channel out as a row-major `height × width` plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Interleaves equally sized planes back into a grid.
    pub fn from_channels(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        if planes.iter().any(|p| p.len() != height * width) {
            return Err(Error::Shape("channel planes differ in size".into()));
        }
        let mut values = Vec::with_capacity(height * width * channels);
        for i in 0..height * width {
            values.extend(planes.iter().map(|p| p[i]));
        }
        Self::new(height, width, channels, values)
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.dims() == other.dims()
    }

    pub fn same_spatial(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_shape(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Elementwise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Grid2D> {
        Grid2D::new(
            self.height,
            self.width,
            self.channels,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise binary map over two grids of identical shape.
    pub fn zip_map(&self, other: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Grid2D> {
        self.ensure_same_shape(other, "elementwise operands")?;
        Grid2D::new(
            self.height,
            self.width,
            self.channels,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn is_image(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Errors with the first out-of-range sample if this is not an image-kind grid.
    pub fn check_image(&self) -> Result<()> {
        match self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(index) => Err(Error::Range {
                index,
                value: self.values[index],
            }),
        }
    }

    pub fn clamp01(&self) -> Grid2D {
        Grid2D {
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-channel mean over the whole raster.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        let mut sums = vec![0.0; self.channels];
        for px in self.values.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// Binary per-pixel edit mask. A set pixel marks the region the sampler may
/// regenerate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("mask dimensions must be positive".into()));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, set: bool) -> Result<Self> {
        Self::new(height, width, vec![set; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    /// Strict conversion from a single-channel grid whose values are exactly 0 or 1.
    pub fn from_grid(grid: &Grid2D) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::Shape(format!(
                "mask grid must have one channel, got {}",
                grid.channels()
            )));
        }
        let mut values = Vec::with_capacity(grid.len());
        for (i, &v) in grid.values().iter().enumerate() {
            if v == 0.0 {
                values.push(false);
            } else if v == 1.0 {
                values.push(true);
            } else {
                return Err(Error::Domain(format!(
                    "mask value {v} at index {i} is not 0 or 1"
                )));
            }
        }
        Self::new(grid.height(), grid.width(), values)
    }

    /// Thresholds a grid: a pixel is set when its channel mean is at least `threshold`.
    pub fn binarize(grid: &Grid2D, threshold: f64) -> Result<Self> {
        let c = grid.channels() as f64;
        let values = grid
            .values()
            .chunks_exact(grid.channels())
            .map(|px| px.iter().sum::<f64>() / c >= threshold)
            .collect();
        Self::new(grid.height(), grid.width(), values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn to_grid(&self) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            channels: 1,
            values: self
                .values
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn matches(&self, grid: &Grid2D) -> bool {
        self.height == grid.height() && self.width == grid.width()
    }

    pub(crate) fn ensure_matches(&self, grid: &Grid2D, what: &str) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: mask is {}x{}, grid is {}x{}",
                self.height,
                self.width,
                grid.height(),
                grid.width()
            )))
        }
    }
}

/// Conditioning rasters passed alongside the latent on every denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub garment: Grid2D,
    pub mask: Mask,
    pub densepose: Grid2D,
}

impl ConditionSet {
    pub fn new(garment: Grid2D, mask: Mask, densepose: Grid2D) -> Result<Self> {
        if !garment.same_spatial(&densepose) || !mask.matches(&garment) {
            return Err(Error::Shape(format!(
                "condition rasters disagree: garment {}x{}, mask {}x{}, densepose {}x{}",
                garment.height(),
                garment.width(),
                mask.height(),
                mask.width(),
                densepose.height(),
                densepose.width()
            )));
        }
        Ok(Self {
            garment,
            mask,
            densepose,
        })
    }

    pub fn height(&self) -> usize {
        self.garment.height()
    }

    pub fn width(&self) -> usize {
        self.garment.width()
    }
}

/// Selects `fg` where the mask is set and `bg` elsewhere. No blending.
pub fn composite(fg: &Grid2D, bg: &Grid2D, mask: &Mask) -> Result<Grid2D> {
    fg.ensure_same_shape(bg, "composite operands")?;
    mask.ensure_matches(fg, "composite mask")?;
    let c = fg.channels();
    let values = fg
        .values()
        .chunks_exact(c)
        .zip(bg.values().chunks_exact(c))
        .zip(mask.values())
        .flat_map(|((f, b), &m)| if m { f } else { b }.iter().copied())
        .collect();
    Ok(Grid2D {
        values,
        ..fg.clone()
    })
}
