//! Diffusion noise schedules, forward diffusion and the DDPM reverse update.
//!
//! Timesteps are indexed `0..T`; `t = 0` is the least noisy step and the
//! reverse chain walks `t = T-1, ..., 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Per-timestep diffusion coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSchedule {
    #[serde(rename = "T")]
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSchedule {
    #[serde(rename = "T")]
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSchedule::deserialize(d)?;
        let sched = NoiseSchedule {
            steps: raw.steps,
            beta: raw.beta,
            alpha: raw.alpha,
            alpha_bar: raw.alpha_bar,
            sigma: raw.sigma,
        };
        sched.validate().map_err(serde::de::Error::custom)?;
        Ok(sched)
    }
}

impl NoiseSchedule {
    /// Linear β ramp from `beta_min` at `t = 0` to `beta_max` at `t = T-1`,
    /// with σ set to the DDPM posterior standard deviation.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Domain(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let last = (steps - 1) as f64;
        let beta = (0..steps)
            .map(|t| {
                if t == steps - 1 {
                    beta_max
                } else {
                    beta_min + (beta_max - beta_min) * t as f64 / last
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// The default inference schedule: linear β in `[1e-4, 0.02]` over `steps`.
    pub fn default_linear(steps: usize) -> Result<Self> {
        Self::linear(steps, 1e-4, 0.02)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::Domain("schedule needs at least two betas".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Domain(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let mut sigma = vec![0.0; beta.len()];
        for t in 1..beta.len() {
            let posterior = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
            sigma[t] = posterior.sqrt();
        }
        let sched = NoiseSchedule {
            steps: beta.len(),
            beta,
            alpha,
            alpha_bar,
            sigma,
        };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let t = self.steps;
        if t < 2 {
            return Err(Error::Domain(format!("schedule needs T >= 2, got {t}")));
        }
        if [&self.beta, &self.alpha, &self.alpha_bar, &self.sigma]
            .iter()
            .any(|a| a.len() != t)
        {
            return Err(Error::Shape(format!(
                "schedule arrays must all have length {t}"
            )));
        }
        if self.beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Domain("beta outside (0, 1)".into()));
        }
        if self.alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Domain(
                "alpha_bar must be strictly decreasing".into(),
            ));
        }
        if self.sigma[0] != 0.0 || self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Domain(
                "sigma must be finite, non-negative and start at 0".into(),
            ));
        }
        Ok(())
    }

    /// Same schedule with every σ set to zero, making the reverse chain deterministic.
    pub fn deterministic(&self) -> Self {
        NoiseSchedule {
            sigma: vec![0.0; self.steps],
            ..self.clone()
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// ᾱ at `t - 1`, with the convention ᾱ₋₁ = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<()> {
        if t < self.steps {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "timestep {t} outside [0, {})",
                self.steps
            )))
        }
    }

    /// Short token identifying this schedule on the wire: FNV-1a over the β bits.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in &self.beta {
            for byte in b.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("beta-fnv1a-{h:016x}")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// `√ᾱ_t · z0 + √(1-ᾱ_t) · noise`.
pub fn forward_diffuse(
    z0: &Grid2D,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Grid2D,
) -> Result<Grid2D> {
    sched.check_timestep(t)?;
    let ab = sched.alpha_bar[t];
    forward_diffuse_with(z0, ab, noise)
}

pub(crate) fn forward_diffuse_with(z0: &Grid2D, alpha_bar: f64, noise: &Grid2D) -> Result<Grid2D> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.zip_map(noise, |z, e| s * z + n * e)
}

/// One DDPM reverse update `z_t -> z_{t-1}` from a noise prediction `eps`.
pub fn ddpm_step(
    z_t: &Grid2D,
    eps: &Grid2D,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Grid2D,
) -> Result<Grid2D> {
    sched.check_timestep(t)?;
    z_t.ensure_same_shape(eps, "ddpm_step eps")?;
    z_t.ensure_same_shape(noise, "ddpm_step noise")?;
    let alpha = sched.alpha[t];
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = (1.0 - alpha) / (1.0 - sched.alpha_bar[t]).sqrt();
    let sigma = sched.sigma[t];
    let values = z_t
        .values()
        .iter()
        .zip(eps.values())
        .zip(noise.values())
        .map(|((&z, &e), &n)| inv_sqrt_alpha * (z - eps_coef * e) + sigma * n)
        .collect();
    let (h, w, c) = z_t.dims();
    Grid2D::new(h, w, c, values)
}
