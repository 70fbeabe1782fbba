mod common;

use common::*;
use proptest::prelude::*;

use tryon_core::backend::{Denoiser, DenoiserRequest, DenoiserResponse, ToyDenoiser, ToyModelSpec};
use tryon_core::grid::{Grid2D, Mask};
use tryon_core::pipeline::{run_job, PipelineConfig, TryOnJob};
use tryon_core::schedule::NoiseSchedule;
use tryon_core::Error;

fn job(h: usize, w: usize, mask: Mask, seed: u64) -> TryOnJob {
    let mut r = rng(seed);
    TryOnJob {
        person: random_image(h, w, 3, &mut r),
        undergarment_ref: Grid2D::filled(h, w, 3, 0.5).unwrap(),
        target_garment_ref: random_image(h, w, 3, &mut r),
        mask,
        densepose: random_image(h, w, 3, &mut r),
        seed,
        config: PipelineConfig {
            schedule: NoiseSchedule::default_linear(10).unwrap(),
            ..PipelineConfig::default()
        },
    }
}

fn toy() -> ToyDenoiser {
    ToyDenoiser::new(ToyModelSpec::default().with_spread(0.2)).unwrap()
}

#[test]
fn output_is_an_image_and_stage_scales_follow_flags() {
    let j = job(10, 10, center_mask(10, 10), 1);
    let res = run_job(&j, &toy()).unwrap();
    assert!(res.image.is_image());
    assert_eq!(res.stages.len(), 2);
    for stage in &res.stages {
        let s = &stage.per_step_scales;
        assert_eq!(s.len(), 10);
        assert_eq!(s[0], 1.5);
        assert_eq!(s[9], 3.5);
    }
    let flat = TryOnJob {
        config: j.config.with_flags(true, false, true),
        ..j
    };
    let res = run_job(&flat, &toy()).unwrap();
    assert!(res
        .stages
        .iter()
        .all(|s| s.per_step_scales.iter().all(|&v| v == 2.5)));
}

#[test]
fn different_seeds_differ_inside_mask_only() {
    let a = job(10, 10, center_mask(10, 10), 1);
    let b = TryOnJob {
        seed: 2,
        ..a.clone()
    };
    let cfg = a.config.with_flags(true, true, false);
    let oa = run_job(
        &TryOnJob {
            config: cfg.clone(),
            ..a.clone()
        },
        &toy(),
    )
    .unwrap()
    .image;
    let ob = run_job(&TryOnJob { config: cfg, ..b }, &toy())
        .unwrap()
        .image;
    assert_ne!(oa, ob);
    for y in 0..10 {
        for x in 0..10 {
            if !a.mask.is_set(y, x) {
                for c in 0..3 {
                    assert_eq!(oa.get(y, x, c).to_bits(), a.person.get(y, x, c).to_bits());
                }
            }
        }
    }
}

#[test]
fn ur_changes_every_item() {
    for seed in 0..4 {
        let j = job(8, 8, center_mask(8, 8), seed);
        let original = run_job(
            &TryOnJob {
                config: j.config.with_flags(false, false, false),
                ..j.clone()
            },
            &toy(),
        )
        .unwrap()
        .image;
        let ur = run_job(
            &TryOnJob {
                config: j.config.with_flags(true, false, false),
                ..j.clone()
            },
            &toy(),
        )
        .unwrap()
        .image;
        assert!(original.max_abs_diff(&ur) > 0.0, "seed {seed}");
    }
}

#[test]
fn partial_stage2_strength_runs_fewer_steps() {
    let mut j = job(8, 8, center_mask(8, 8), 3);
    j.config.stage2_strength = 0.5;
    let res = run_job(&j, &toy()).unwrap();
    assert_eq!(res.stages[0].per_step_scales.len(), 10);
    assert_eq!(res.stages[1].per_step_scales.len(), 5);
    let s = &res.stages[1].per_step_scales;
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!((mean - 2.5).abs() < 1e-12);
}

struct Broken(fn(&Grid2D) -> DenoiserResponse);

impl Denoiser for Broken {
    fn denoise(
        &self,
        req: &DenoiserRequest<'_>,
        _: &NoiseSchedule,
    ) -> tryon_core::Result<DenoiserResponse> {
        Ok((self.0)(req.latent))
    }

    fn describe(&self) -> String {
        "broken".into()
    }
}

#[test]
fn backend_faults_surface_as_typed_errors() {
    let j = job(6, 6, center_mask(6, 6), 4);
    let wrong_shape = Broken(|_| DenoiserResponse {
        eps_cond: Grid2D::zeros(2, 2, 3).unwrap(),
        eps_uncond: Grid2D::zeros(2, 2, 3).unwrap(),
    });
    assert!(matches!(run_job(&j, &wrong_shape), Err(Error::Contract(_))));

    let exploding = Broken(|z| DenoiserResponse {
        eps_cond: Grid2D::filled(z.height(), z.width(), z.channels(), 1e308).unwrap(),
        eps_uncond: Grid2D::filled(z.height(), z.width(), z.channels(), -1e308).unwrap(),
    });
    match run_job(&j, &exploding) {
        Err(Error::Divergence { stage: 1, timestep }) => assert_eq!(timestep, 9),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let mut j = job(6, 6, center_mask(6, 6), 5);
    j.mask = Mask::filled(6, 5, true).unwrap();
    assert!(matches!(run_job(&j, &toy()), Err(Error::Shape(_))));
    let mut j = job(6, 6, center_mask(6, 6), 5);
    j.config.omega = -1.0;
    assert!(matches!(run_job(&j, &toy()), Err(Error::Domain(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outside_mask_is_preserved_without_refinement(
        seed in 0u64..1000,
        bits in proptest::collection::vec(any::<bool>(), 36),
        ur in any::<bool>(),
        dcfg in any::<bool>(),
    ) {
        let mask = Mask::new(6, 6, bits).unwrap();
        let mut j = job(6, 6, mask.clone(), seed);
        j.config = j.config.with_flags(ur, dcfg, false);
        let out = run_job(&j, &toy()).unwrap().image;
        for y in 0..6 {
            for x in 0..6 {
                if !mask.is_set(y, x) {
                    for c in 0..3 {
                        prop_assert_eq!(out.get(y, x, c).to_bits(), j.person.get(y, x, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn runs_are_reproducible(seed in 0u64..1000) {
        let j = job(6, 6, center_mask(6, 6), seed);
        let a = run_job(&j, &toy()).unwrap().image;
        let b = run_job(&j, &toy()).unwrap().image;
        prop_assert_eq!(a, b);
    }
}
