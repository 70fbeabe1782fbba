//! Two-stage diffusion virtual try-on: undress/redress sampling with dynamic
//! classifier-free guidance, a spectral refiner that restores high-frequency
//! detail from the source photo, and an evaluation harness.
//!
//! The denoiser itself is pluggable. A deterministic analytic toy model ships
//! in-tree; real models can be served over a small TCP protocol
//! (see [`backend::wire`]).

pub mod backend;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod harness;
pub mod image_io;
pub mod metrics;
pub mod pipeline;
pub mod refiner;
pub mod schedule;

pub use backend::{BackendSpec, Denoiser, DenoiserRequest, DenoiserResponse, ToyModelSpec};
pub use error::{Error, Result};
pub use grid::{composite, ConditionSet, Grid2D, Mask};
pub use guidance::{combine_cfg, dcfg_scale, GuidanceConfig, GuidanceMode};
pub use pipeline::{run_job, undress_redress, PipelineConfig, TryOnJob, TryOnResult};
pub use refiner::{make_highpass_mask, refine, FrequencyMask};
pub use schedule::{ddpm_step, forward_diffuse, NoiseSchedule};
