use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ExtractorInfo, SsimParams};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Paired,
    Unpaired,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(EvalMode::Paired),
            "unpaired" => Ok(EvalMode::Unpaired),
            _ => Err(Error::Domain(format!(
                "unknown mode {s:?}; expected paired or unpaired"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    /// SSIM against ground truth (paired mode only).
    pub ssim: Option<f64>,
    /// Metric precondition failure for this item, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ssim_mean: Option<f64>,
    pub fid: Option<f64>,
    /// Raw unbiased estimate; multiply by `kid_scale` for display.
    pub kid: Option<f64>,
    pub kid_scale: f64,
    /// Always null: no perceptual network is bundled.
    pub lpips: Option<f64>,
    pub n_paired: usize,
    pub n_unpaired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub pipeline: PipelineConfig,
    pub backend: String,
    pub seed: u64,
    /// Image set the generated set is compared against for FID/KID.
    pub distribution_reference: String,
    pub ssim: SsimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: Option<String>,
    pub mode: EvalMode,
    pub per_item: Vec<ItemResult>,
    pub aggregate: Aggregate,
    pub extractor: ExtractorInfo,
    pub config_echo: ConfigEcho,
    pub wall_time_seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the report through a temporary file in the destination
    /// directory and renames it into place.
    pub fn write_atomic(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let json = self.to_json()?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(json.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}
