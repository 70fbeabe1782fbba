//! Noise-prediction backends.
//!
//! Every call returns both the conditional and the unconditional prediction
//! for one latent, i.e. the two halves of a batch-of-two model evaluation.

mod remote;
mod toy;
pub mod wire;

use std::fmt;
use std::str::FromStr;

pub use remote::{remote_denoise, RemoteDenoiser};
pub use toy::{toy_denoise, TargetRule, ToyDenoiser, ToyModelSpec};

use crate::error::{Error, Result};
use crate::grid::{ConditionSet, Grid2D};
use crate::guidance::GridBatch;
use crate::schedule::NoiseSchedule;

/// One denoiser evaluation: latent `z_t`, conditioning, timestep.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserRequest<'a> {
    pub latent: &'a Grid2D,
    pub condition: &'a ConditionSet,
    pub timestep: usize,
    pub schedule_id: &'a str,
}

impl<'a> DenoiserRequest<'a> {
    pub fn new(
        latent: &'a Grid2D,
        condition: &'a ConditionSet,
        timestep: usize,
        schedule_id: &'a str,
    ) -> Result<Self> {
        if latent.height() != condition.height() || latent.width() != condition.width() {
            return Err(Error::Shape(format!(
                "latent is {}x{}, conditioning is {}x{}",
                latent.height(),
                latent.width(),
                condition.height(),
                condition.width()
            )));
        }
        Ok(Self {
            latent,
            condition,
            timestep,
            schedule_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserResponse {
    pub eps_cond: Grid2D,
    pub eps_uncond: Grid2D,
}

impl DenoiserResponse {
    /// Checks both predictions have the latent's shape.
    pub fn check_against(&self, latent: &Grid2D) -> Result<()> {
        for (name, g) in [
            ("eps_cond", &self.eps_cond),
            ("eps_uncond", &self.eps_uncond),
        ] {
            if !g.same_shape(latent) {
                return Err(Error::Contract(format!(
                    "{name} has shape {:?}, request latent is {:?}",
                    g.dims(),
                    latent.dims()
                )));
            }
        }
        Ok(())
    }

    /// Stacks the predictions as a `(cond, uncond)` batch.
    pub fn into_batch(self) -> Result<GridBatch> {
        GridBatch::concat(self.eps_cond, self.eps_uncond)
    }
}

/// A noise predictor. Implementations must be deterministic for identical
/// requests and safe to call from several threads.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule)
        -> Result<DenoiserResponse>;

    /// Human-readable identity, echoed into evaluation reports.
    fn describe(&self) -> String;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(
        &self,
        req: &DenoiserRequest<'_>,
        sched: &NoiseSchedule,
    ) -> Result<DenoiserResponse> {
        (**self).denoise(req, sched)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Backend selector as written on the command line: `toy` or `remote:<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Toy,
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendSpec::Toy),
            _ => match s.strip_prefix("remote:") {
                Some(addr) if !addr.is_empty() => Ok(BackendSpec::Remote(addr.to_string())),
                _ => Err(Error::Domain(format!(
                    "unknown backend {s:?}; expected `toy` or `remote:<host:port>`"
                ))),
            },
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Toy => f.write_str("toy"),
            BackendSpec::Remote(addr) => write!(f, "remote:{addr}"),
        }
    }
}

impl BackendSpec {
    pub fn build(&self, toy: ToyModelSpec) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            BackendSpec::Toy => Box::new(ToyDenoiser::new(toy)?),
            BackendSpec::Remote(addr) => Box::new(RemoteDenoiser::new(addr.clone())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_backend_specs() {
        assert_eq!("toy".parse::<BackendSpec>().unwrap(), BackendSpec::Toy);
        assert_eq!(
            "remote:127.0.0.1:9000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Remote("127.0.0.1:9000".into())
        );
        assert!("remote:".parse::<BackendSpec>().is_err());
        assert!("gpu".parse::<BackendSpec>().is_err());
        assert_eq!(BackendSpec::Remote("h:1".into()).to_string(), "remote:h:1");
    }

    #[test]
    fn response_shape_contract() {
        let latent = Grid2D::zeros(2, 2, 3).unwrap();
        let ok = DenoiserResponse {
            eps_cond: latent.clone(),
            eps_uncond: latent.clone(),
        };
        assert!(ok.check_against(&latent).is_ok());
        let bad = DenoiserResponse {
            eps_cond: Grid2D::zeros(2, 2, 1).unwrap(),
            eps_uncond: latent.clone(),
        };
        assert!(matches!(
            bad.check_against(&latent),
            Err(Error::Contract(_))
        ));
    }
}
