//! Analytic backend used as a sampler oracle.
//!
//! The data distribution is a per-pixel Gaussian `N(mu, spread^2)` around a
//! target colour, whose MMSE noise prediction is closed form:
//!
//! ```text
//! eps_hat = sqrt(1 - ab) * (z_t - sqrt(ab) * mu) / (ab * spread^2 + 1 - ab)
//! ```
//!
//! With `spread = 0` this is the point-mass predictor
//! `(z_t - sqrt(ab) * mu) / sqrt(1 - ab)`, which drives the reverse chain
//! onto `mu` exactly.

use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserRequest, DenoiserResponse};
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::schedule::NoiseSchedule;

/// Target of the unconditional branch.
pub const UNCOND_TARGET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Inside the mask the target is the garment reference's per-channel mean colour.
    MeanGarmentColorInMask,
    /// Inside the mask the target is `constant_value` in every channel.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub target_rule: TargetRule,
    pub constant_value: f64,
    /// Standard deviation of the per-pixel data model; 0 is a point mass.
    #[serde(default)]
    pub spread: f64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            target_rule: TargetRule::MeanGarmentColorInMask,
            constant_value: 0.5,
            spread: 0.0,
        }
    }
}

impl ToyModelSpec {
    pub fn constant(value: f64) -> Self {
        Self {
            target_rule: TargetRule::Constant,
            constant_value: value,
            spread: 0.0,
        }
    }

    pub fn with_spread(self, spread: f64) -> Self {
        Self { spread, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.constant_value.is_finite() {
            return Err(Error::Domain("toy constant_value must be finite".into()));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::Domain(format!(
                "toy spread must be finite and >= 0, got {}",
                self.spread
            )));
        }
        Ok(())
    }

    /// Per-latent-channel conditional target for a given garment reference.
    pub fn target(&self, garment: &Grid2D, channels: usize) -> Result<Vec<f64>> {
        match self.target_rule {
            TargetRule::Constant => Ok(vec![self.constant_value; channels]),
            TargetRule::MeanGarmentColorInMask => {
                let means = garment.channel_means();
                if means.len() == channels {
                    Ok(means)
                } else if means.len() == 1 {
                    Ok(vec![means[0]; channels])
                } else if channels == 1 {
                    Ok(vec![means.iter().sum::<f64>() / means.len() as f64])
                } else {
                    Err(Error::Shape(format!(
                        "garment has {} channels, latent has {channels}",
                        means.len()
                    )))
                }
            }
        }
    }
}

/// Evaluates the analytic predictor for one request.
///
/// Inside the mask the conditional branch targets the rule's colour; outside
/// it predicts zero noise, treating the latent as its own clean estimate.
/// The unconditional branch targets flat 0.5 grey everywhere.
pub fn toy_denoise(
    req: &DenoiserRequest<'_>,
    spec: &ToyModelSpec,
    sched: &NoiseSchedule,
) -> Result<DenoiserResponse> {
    sched.check_timestep(req.timestep)?;
    let ab = sched.alpha_bar()[req.timestep];
    if ab >= 1.0 {
        return Err(Error::Domain(format!(
            "alpha_bar at timestep {} is 1; noise prediction undefined",
            req.timestep
        )));
    }
    let latent = req.latent;
    let (h, w, c) = latent.dims();
    let target = spec.target(&req.condition.garment, c)?;

    let signal = ab.sqrt();
    let noise_std = (1.0 - ab).sqrt();
    let var = ab * spec.spread * spec.spread + (1.0 - ab);
    let predict = |z: f64, mu: f64| noise_std * (z - signal * mu) / var;

    let mask = req.condition.mask.values();
    let mut cond = Vec::with_capacity(latent.len());
    let mut uncond = Vec::with_capacity(latent.len());
    for (px, &inside) in latent.values().chunks_exact(c).zip(mask) {
        for (ch, &z) in px.iter().enumerate() {
            cond.push(if inside { predict(z, target[ch]) } else { 0.0 });
            uncond.push(predict(z, UNCOND_TARGET));
        }
    }
    Ok(DenoiserResponse {
        eps_cond: Grid2D::new(h, w, c, cond)?,
        eps_uncond: Grid2D::new(h, w, c, uncond)?,
    })
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    spec: ToyModelSpec,
}

impl ToyDenoiser {
    pub fn new(spec: ToyModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }
}

impl Denoiser for ToyDenoiser {
    fn denoise(
        &self,
        req: &DenoiserRequest<'_>,
        sched: &NoiseSchedule,
    ) -> Result<DenoiserResponse> {
        toy_denoise(req, &self.spec, sched)
    }

    fn describe(&self) -> String {
        format!(
            "toy(rule={}, constant={}, spread={})",
            serde_json::to_value(self.spec.target_rule)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            self.spec.constant_value,
            self.spec.spread
        )
    }
}
