use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::manifest::TripletRecord;
use super::report::{Aggregate, ConfigEcho, EvalMode, EvalReport, ItemResult};
use crate::backend::Denoiser;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::image_io::{load_image, load_mask, save_image};
use crate::metrics::{
    frechet_distance, kid_reported, ssim, toy_extractor, FeatureExtractor, FeatureStats, SsimParams,
};
use crate::pipeline::{undress_redress, PipelineConfig, TryOnJob};

/// How output images are produced.
#[derive(Clone, Copy)]
pub enum Generator<'a> {
    /// Run the try-on pipeline against a denoiser backend.
    Pipeline(&'a dyn Denoiser),
    /// Test mode: the "generated" image is the record's ground truth.
    Identity,
}

impl Generator<'_> {
    fn describe(&self) -> String {
        match self {
            Generator::Pipeline(b) => b.describe(),
            Generator::Identity => "identity(ground_truth)".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub seed: u64,
    /// Records processed concurrently.
    pub jobs: usize,
    /// Generated images are written here as `<id>.png`.
    pub outdir: PathBuf,
    pub extractor_seed: u64,
    pub extractor_dim: usize,
    pub ssim: SsimParams,
}

impl EvalOptions {
    pub fn new(mode: EvalMode, outdir: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            seed: 0,
            jobs: 1,
            outdir: outdir.into(),
            extractor_seed: 0,
            extractor_dim: 64,
            ssim: SsimParams::default(),
        }
    }
}

/// Undergarment reference used when a record has none: flat mid-grey.
pub fn default_undergarment(like: &Grid2D) -> Grid2D {
    Grid2D::filled(like.height(), like.width(), like.channels(), 0.5).expect("valid dims")
}

/// Per-record sampling seed derived from the run seed.
fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn generate(
    record: &TripletRecord,
    index: usize,
    cfg: &PipelineConfig,
    generator: Generator<'_>,
    seed: u64,
) -> Result<Grid2D> {
    match generator {
        Generator::Identity => {
            let gt = record.ground_truth.as_ref().ok_or_else(|| {
                Error::Domain("identity generation needs a ground truth image".into())
            })?;
            load_image(gt)
        }
        Generator::Pipeline(backend) => {
            let person = load_image(&record.source_person)?;
            let undergarment_ref = match &record.undergarment_ref {
                Some(p) => load_image(p)?,
                None => default_undergarment(&person),
            };
            let job = TryOnJob {
                undergarment_ref,
                target_garment_ref: load_image(&record.garment_ref)?,
                mask: load_mask(&record.mask)?,
                densepose: load_image(&record.densepose)?,
                person,
                seed: record_seed(seed, index),
                config: cfg.clone(),
            };
            undress_redress(&job, backend)
        }
    }
}

fn output_path(outdir: &Path, id: &str) -> PathBuf {
    outdir.join(format!("{id}.png"))
}

/// Generates every record, persists the outputs, and scores them.
pub fn run_eval(
    records: &[TripletRecord],
    cfg: &PipelineConfig,
    generator: Generator<'_>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let started = Instant::now();
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Domain("no records to evaluate".into()));
    }
    if opts.mode == EvalMode::Paired {
        if let Some(r) = records.iter().find(|r| r.ground_truth.is_none()) {
            return Err(Error::Record {
                id: r.id.clone(),
                source: Box::new(Error::Domain("paired mode requires ground_truth".into())),
            });
        }
    }
    std::fs::create_dir_all(&opts.outdir).map_err(|e| Error::io(&opts.outdir, e))?;
    let extractor = toy_extractor(opts.extractor_seed, opts.extractor_dim)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
    let generated: Vec<Grid2D> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, record)| {
                let wrap = |e: Error| Error::Record {
                    id: record.id.clone(),
                    source: Box::new(e),
                };
                let image = generate(record, i, cfg, generator, opts.seed).map_err(wrap)?;
                let path = output_path(&opts.outdir, &record.id);
                save_image(&image, &path).map_err(wrap)?;
                // score what was persisted, so metrics can be recomputed from disk
                load_image(&path).map_err(wrap)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let references: Vec<Grid2D> = records
        .iter()
        .map(|r| {
            let path = match opts.mode {
                EvalMode::Paired => r.ground_truth.as_ref().expect("checked above"),
                EvalMode::Unpaired => &r.source_person,
            };
            load_image(path).map_err(|e| Error::Record {
                id: r.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let per_item: Vec<ItemResult> = records
        .iter()
        .zip(&generated)
        .zip(&references)
        .map(|((r, gen), reference)| match opts.mode {
            EvalMode::Paired => match ssim(gen, reference, &opts.ssim) {
                Ok(v) => ItemResult {
                    id: r.id.clone(),
                    ssim: Some(v),
                    error: None,
                },
                Err(e) => ItemResult {
                    id: r.id.clone(),
                    ssim: None,
                    error: Some(e.to_string()),
                },
            },
            EvalMode::Unpaired => ItemResult {
                id: r.id.clone(),
                ssim: None,
                error: None,
            },
        })
        .collect();

    let scored: Vec<f64> = per_item.iter().filter_map(|i| i.ssim).collect();
    let ssim_mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);

    let (fid, kid) = if records.len() >= 2 {
        let features = |set: &[Grid2D]| -> Result<Vec<Vec<f64>>> {
            set.par_iter().map(|g| extractor.extract(g)).collect()
        };
        let fa = pool.install(|| features(&generated))?;
        let fb = pool.install(|| features(&references))?;
        let fid = frechet_distance(
            &FeatureStats::from_features(&fa)?,
            &FeatureStats::from_features(&fb)?,
        )?;
        (Some(fid), Some(kid_reported(&fa, &fb, opts.seed)?))
    } else {
        (None, None)
    };

    let n = records.len();
    let (n_paired, n_unpaired) = match opts.mode {
        EvalMode::Paired => (n, 0),
        EvalMode::Unpaired => (0, n),
    };
    Ok(EvalReport {
        label: None,
        mode: opts.mode,
        per_item,
        aggregate: Aggregate {
            ssim_mean,
            fid,
            kid,
            kid_scale: 1.0,
            lpips: None,
            n_paired,
            n_unpaired,
        },
        extractor: extractor.info(),
        config_echo: ConfigEcho {
            pipeline: cfg.clone(),
            backend: generator.describe(),
            seed: opts.seed,
            distribution_reference: match opts.mode {
                EvalMode::Paired => "ground_truth".into(),
                EvalMode::Unpaired => "source_person".into(),
            },
            ssim: opts.ssim,
        },
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub label: &'static str,
    pub slug: &'static str,
    pub ur: bool,
    pub dcfg: bool,
    pub sr: bool,
}

pub fn ablation_rows() -> [AblationRow; 5] {
    let row = |label, slug, ur, dcfg, sr| AblationRow {
        label,
        slug,
        ur,
        dcfg,
        sr,
    };
    [
        row("Original", "original", false, false, false),
        row("+ UR", "ur", true, false, false),
        row("+ DCFG", "dcfg", false, true, false),
        row("+ SR", "sr", false, false, true),
        row("UR-VTON", "ur-vton", true, true, true),
    ]
}

/// Runs the five ablation configurations, each writing images to
/// `opts.outdir/<slug>/`.
pub fn run_ablation(
    records: &[TripletRecord],
    base: &PipelineConfig,
    generator: Generator<'_>,
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    ablation_rows()
        .iter()
        .map(|row| {
            let cfg = base.with_flags(row.ur, row.dcfg, row.sr);
            let row_opts = EvalOptions {
                outdir: opts.outdir.join(row.slug),
                ..opts.clone()
            };
            let mut report = run_eval(records, &cfg, generator, &row_opts)?;
            report.label = Some(row.label.to_string());
            Ok(report)
        })
        .collect()
}
