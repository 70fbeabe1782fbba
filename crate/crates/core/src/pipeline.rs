//! Undress-to-redress orchestration: two guided DDPM sampling stages, pixel
//! compositing after each, and optional structural refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::{Denoiser, DenoiserRequest};
use crate::error::{Error, Result};
use crate::grid::{composite, ConditionSet, Grid2D, Mask};
use crate::guidance::{combine_cfg, split_chunk, GuidanceConfig, GuidanceMode, DEFAULT_OMEGA};
use crate::refiner::{make_highpass_mask, refine, DEFAULT_CUTOFF};
use crate::schedule::{ddpm_step, forward_diffuse, NoiseSchedule};

pub const DEFAULT_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schedule: NoiseSchedule,
    /// Base guidance scale ω.
    pub omega: f64,
    /// Fraction of T at which stage 2 re-noises the intermediate image.
    pub stage2_strength: f64,
    pub enable_ur: bool,
    pub enable_dcfg: bool,
    pub enable_sr: bool,
    pub sr_cutoff: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default_linear(DEFAULT_STEPS).expect("default schedule"),
            omega: DEFAULT_OMEGA,
            stage2_strength: 1.0,
            enable_ur: true,
            enable_dcfg: true,
            enable_sr: true,
            sr_cutoff: DEFAULT_CUTOFF,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Domain(format!(
                "omega must be >= 0, got {}",
                self.omega
            )));
        }
        if !(self.stage2_strength > 0.0 && self.stage2_strength <= 1.0) {
            return Err(Error::Domain(format!(
                "stage2_strength must be in (0, 1], got {}",
                self.stage2_strength
            )));
        }
        self.renoise_timestep(self.stage2_strength)?;
        if !(0.0..=1.0).contains(&self.sr_cutoff) {
            return Err(Error::Domain(format!(
                "sr_cutoff must be in [0, 1], got {}",
                self.sr_cutoff
            )));
        }
        Ok(())
    }

    /// `round(strength · T) - 1`.
    fn renoise_timestep(&self, strength: f64) -> Result<usize> {
        let steps = (strength * self.schedule.steps() as f64).round();
        if steps < 1.0 {
            return Err(Error::Domain(format!(
                "strength {strength} leaves no sampling steps out of {}",
                self.schedule.steps()
            )));
        }
        Ok(steps as usize - 1)
    }

    /// Guidance schedule for a stage of `iterations` steps.
    pub fn guidance(&self, iterations: usize) -> Result<GuidanceConfig> {
        let mode = if self.enable_dcfg && iterations >= 2 {
            GuidanceMode::Dynamic
        } else {
            GuidanceMode::Static
        };
        GuidanceConfig::new(self.omega, mode, iterations)
    }

    pub fn with_flags(&self, ur: bool, dcfg: bool, sr: bool) -> Self {
        Self {
            enable_ur: ur,
            enable_dcfg: dcfg,
            enable_sr: sr,
            ..self.clone()
        }
    }
}

/// Where a stage's starting latent comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageStart {
    /// Standard-normal latent at `t = T-1`.
    Noise,
    /// Forward diffusion of the init image to `round(strength · T) - 1`.
    Renoise { strength: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub image: Grid2D,
    /// Guidance scale applied at each executed iteration.
    pub per_step_scales: Vec<f64>,
}

pub fn standard_normal_grid<R: Rng + ?Sized>(h: usize, w: usize, c: usize, rng: &mut R) -> Grid2D {
    let values = (0..h * w * c)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Grid2D::new(h, w, c, values).expect("finite gaussian draws")
}

/// Runs one guided sampling stage and composites the result over `init_image`
/// outside the mask. `stage` only labels divergence errors.
pub fn run_stage<R: Rng + ?Sized>(
    init_image: &Grid2D,
    condition: &ConditionSet,
    cfg: &PipelineConfig,
    start: StageStart,
    backend: &dyn Denoiser,
    rng: &mut R,
    stage: usize,
) -> Result<StageResult> {
    cfg.validate()?;
    condition.mask.ensure_matches(init_image, "stage mask")?;
    let sched = &cfg.schedule;
    let (h, w, c) = init_image.dims();
    let t_start = match start {
        StageStart::Noise => sched.steps() - 1,
        StageStart::Renoise { strength } => cfg.renoise_timestep(strength)?,
    };
    let mut z = match start {
        StageStart::Noise => standard_normal_grid(h, w, c, rng),
        StageStart::Renoise { .. } => {
            let noise = standard_normal_grid(h, w, c, rng);
            forward_diffuse(init_image, t_start, sched, &noise)?
        }
    };

    let iterations = t_start + 1;
    let guidance = cfg.guidance(iterations)?;
    let schedule_id = sched.id();
    let diverged = |t: usize| {
        move |e: Error| match e {
            Error::Numeric(_) => Error::Divergence { stage, timestep: t },
            other => other,
        }
    };

    let mut per_step_scales = Vec::with_capacity(iterations);
    for (i, t) in (0..=t_start).rev().enumerate() {
        let req = DenoiserRequest::new(&z, condition, t, &schedule_id)?;
        let resp = backend.denoise(&req, sched)?;
        resp.check_against(&z)?;
        let (eps_cond, eps_uncond) = split_chunk(resp.into_batch()?)?;
        let scale = guidance.scale_at(i)?;
        per_step_scales.push(scale);
        let eps = combine_cfg(&eps_uncond, &eps_cond, scale).map_err(diverged(t))?;
        let noise = standard_normal_grid(h, w, c, rng);
        z = ddpm_step(&z, &eps, t, sched, &noise).map_err(diverged(t))?;
    }

    Ok(StageResult {
        image: composite(&z, init_image, &condition.mask)?,
        per_step_scales,
    })
}

/// A complete two-stage try-on request.
#[derive(Debug, Clone)]
pub struct TryOnJob {
    pub person: Grid2D,
    /// G¹: the undergarment reference used by the first stage.
    pub undergarment_ref: Grid2D,
    /// G²: the target garment.
    pub target_garment_ref: Grid2D,
    pub mask: Mask,
    pub densepose: Grid2D,
    pub seed: u64,
    pub config: PipelineConfig,
}

impl TryOnJob {
    pub fn validate(&self) -> Result<()> {
        let p = &self.person;
        for (name, g) in [
            ("undergarment", &self.undergarment_ref),
            ("garment", &self.target_garment_ref),
            ("densepose", &self.densepose),
        ] {
            if !g.same_spatial(p) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, person is {}x{}",
                    g.height(),
                    g.width(),
                    p.height(),
                    p.width()
                )));
            }
        }
        self.mask.ensure_matches(p, "job mask")?;
        self.person.check_image()?;
        self.config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TryOnResult {
    pub image: Grid2D,
    /// One entry per executed stage, in order.
    pub stages: Vec<StageResult>,
}

/// Runs a job and keeps the per-stage audit trail.
pub fn run_job(job: &TryOnJob, backend: &dyn Denoiser) -> Result<TryOnResult> {
    job.validate()?;
    if job.mask.count_set() == 0 {
        // nothing to edit: no sampling, and refinement is skipped too
        return Ok(TryOnResult {
            image: job.person.clone(),
            stages: Vec::new(),
        });
    }
    let cfg = &job.config;
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let redress = ConditionSet::new(
        job.target_garment_ref.clone(),
        job.mask.clone(),
        job.densepose.clone(),
    )?;

    let mut stages = Vec::with_capacity(2);
    let generated = if cfg.enable_ur {
        let undress = ConditionSet::new(
            job.undergarment_ref.clone(),
            job.mask.clone(),
            job.densepose.clone(),
        )?;
        let first = run_stage(
            &job.person,
            &undress,
            cfg,
            StageStart::Noise,
            backend,
            &mut rng,
            1,
        )?;
        let intermediate = first.image.clamp01();
        stages.push(first);
        let start = StageStart::Renoise {
            strength: cfg.stage2_strength,
        };
        let second = run_stage(&intermediate, &redress, cfg, start, backend, &mut rng, 2)?;
        let image = second.image.clone();
        stages.push(second);
        image
    } else {
        let only = run_stage(
            &job.person,
            &redress,
            cfg,
            StageStart::Noise,
            backend,
            &mut rng,
            1,
        )?;
        let image = only.image.clone();
        stages.push(only);
        image
    };

    let mut image = generated.clamp01();
    if cfg.enable_sr {
        let band = make_highpass_mask(image.height(), image.width(), cfg.sr_cutoff)?;
        image = refine(&job.person, &image, &band)?;
    }
    Ok(TryOnResult { image, stages })
}

/// Two-stage try-on; the output is clamped to `[0, 1]`.
pub fn undress_redress(job: &TryOnJob, backend: &dyn Denoiser) -> Result<Grid2D> {
    Ok(run_job(job, backend)?.image)
}
