//! Classifier-free guidance: combining conditional and unconditional noise
//! predictions, and the cosine-ramped dynamic guidance scale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Guidance scale used when none is given.
pub const DEFAULT_OMEGA: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub omega: f64,
    pub mode: GuidanceMode,
    /// Number of sampling iterations the dynamic ramp spans.
    pub iterations: usize,
}

impl GuidanceConfig {
    pub fn new(omega: f64, mode: GuidanceMode, iterations: usize) -> Result<Self> {
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::Domain(format!(
                "guidance scale must be >= 0, got {omega}"
            )));
        }
        if iterations == 0 || (mode == GuidanceMode::Dynamic && iterations < 2) {
            return Err(Error::Domain(format!(
                "{mode:?} guidance cannot span {iterations} iterations"
            )));
        }
        Ok(Self {
            omega,
            mode,
            iterations,
        })
    }

    /// Scale to apply at sampling iteration `i` (0 = noisiest).
    pub fn scale_at(&self, i: usize) -> Result<f64> {
        match self.mode {
            GuidanceMode::Static if i < self.iterations => Ok(self.omega),
            GuidanceMode::Static => Err(Error::Domain(format!(
                "iteration {i} outside [0, {})",
                self.iterations
            ))),
            GuidanceMode::Dynamic => dcfg_scale(self.omega, i, self.iterations),
        }
    }
}

/// `eps_uncond + omega * (eps_cond - eps_uncond)`. At omega 0 and 1 the
/// matching branch is returned as is, since the formula rounds there.
pub fn combine_cfg(eps_uncond: &Grid2D, eps_cond: &Grid2D, omega: f64) -> Result<Grid2D> {
    eps_uncond.ensure_same_shape(eps_cond, "combine_cfg")?;
    if omega == 0.0 {
        return Ok(eps_uncond.clone());
    }
    if omega == 1.0 {
        return Ok(eps_cond.clone());
    }
    eps_uncond.zip_map(eps_cond, |u, c| u + omega * (c - u))
}

/// Dynamic guidance scale `omega - cos(pi * i / (T - 1))`.
///
/// `i` counts sampling iterations from 0 (first, noisiest) to `T - 1`, so
/// the scale rises from `omega - 1` to `omega + 1`.
pub fn dcfg_scale(omega: f64, i: usize, total: usize) -> Result<f64> {
    if total < 2 {
        return Err(Error::Domain(format!(
            "dynamic guidance needs T >= 2, got {total}"
        )));
    }
    if i >= total {
        return Err(Error::Domain(format!("iteration {i} outside [0, {total})")));
    }
    Ok(omega - (PI * i as f64 / (total - 1) as f64).cos())
}

/// A stack of equally shaped grids, the leading "batch" axis of a backend call.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBatch(Vec<Grid2D>);

impl GridBatch {
    pub fn new(items: Vec<Grid2D>) -> Result<Self> {
        if let Some(first) = items.first() {
            if items.iter().any(|g| !g.same_shape(first)) {
                return Err(Error::Shape("batch members differ in shape".into()));
            }
        }
        Ok(Self(items))
    }

    pub fn concat(cond: Grid2D, uncond: Grid2D) -> Result<Self> {
        Self::new(vec![cond, uncond])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn items(&self) -> &[Grid2D] {
        &self.0
    }
}

/// Splits a batch of two predictions into `(eps_cond, eps_uncond)`.
pub fn split_chunk(batched: GridBatch) -> Result<(Grid2D, Grid2D)> {
    let n = batched.len();
    match <[Grid2D; 2]>::try_from(batched.0) {
        Ok([cond, uncond]) => Ok((cond, uncond)),
        Err(_) => Err(Error::Shape(format!("chunk expects a batch of 2, got {n}"))),
    }
}
