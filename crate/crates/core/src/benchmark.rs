//! Synthetic end-to-end benchmark.
//!
//! Annotations are drawn from a "true" prior and used to fit a prior model,
//! which then generates the training set. The trained regressor and the
//! geometric baseline are scored on fresh noisy tracks from the true prior,
//! both seeing the same smoothed input.

use crate::eval::{compare, e_v, BucketSpec, Comparison, EvalReport, Truth};
use crate::geometry::{geometric_velocity, Camera};
use crate::priors::{fit_priors, FitConfig, PriorModel};
use crate::regressor::{predict, train, MlpModel, TrainConfig};
use crate::synth::{generate_dataset, GenConfig, PAPER_SAMPLE_COUNT};
use crate::track::{gaussian_smooth, NoiseConfig, SmoothingConfig};
use crate::Result;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub camera: Camera,
    pub n_annotations: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Tracker noise applied to the training tracks. `None` trains on clean boxes.
    pub train_noise: Option<NoiseConfig>,
    pub test_noise: NoiseConfig,
    pub test_smoothing: f64,
    pub train: TrainConfig,
    pub annotation_seed: u64,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            camera: Camera::default(),
            n_annotations: 500,
            n_train: PAPER_SAMPLE_COUNT,
            n_test: 1000,
            train_noise: Some(NoiseConfig::default()),
            test_noise: NoiseConfig::default(),
            test_smoothing: 5.0,
            train: TrainConfig {
                seed: 3,
                train_smoothing: 5.0,
                ..TrainConfig::default()
            },
            annotation_seed: 1,
            train_seed: 2,
            test_seed: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub fitted: PriorModel,
    pub model: MlpModel,
    pub final_loss: f64,
    pub mlp: EvalReport,
    pub baseline: EvalReport,
}

impl BenchmarkResult {
    pub fn table(&self) -> Comparison {
        compare(&[
            ("mlp".to_string(), self.mlp.clone().without_residuals()),
            ("geometric".to_string(), self.baseline.clone().without_residuals()),
        ])
    }

    /// Model beats the baseline in every bucket and overall by `factor`.
    pub fn beats_baseline(&self, factor: f64) -> bool {
        let per_bucket = self
            .mlp
            .buckets
            .iter()
            .zip(&self.baseline.buckets)
            .all(|(m, b)| m.e_v < b.e_v);
        per_bucket && self.mlp.e_v * factor <= self.baseline.e_v
    }
}

pub fn run(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    let cam = &cfg.camera;
    let truth_prior = PriorModel::motorway_default(cam);

    let annotations = generate_dataset(
        cam,
        &truth_prior,
        &GenConfig {
            n_samples: cfg.n_annotations,
            seed: cfg.annotation_seed,
            ..GenConfig::default()
        },
    )?;
    let fitted = fit_priors(&annotations.samples, cam, &FitConfig::default())?.model;

    let train_set = generate_dataset(
        cam,
        &fitted,
        &GenConfig {
            n_samples: cfg.n_train,
            seed: cfg.train_seed,
            noise: cfg.train_noise,
            ..GenConfig::default()
        },
    )?;
    let trained = train(&train_set.samples, &cfg.train)?;
    let final_loss = trained.trace.last().map_or(f64::NAN, |e| e.loss);

    let test = generate_dataset(
        cam,
        &truth_prior,
        &GenConfig {
            n_samples: cfg.n_test,
            seed: cfg.test_seed,
            noise: Some(cfg.test_noise),
            ..GenConfig::default()
        },
    )?;
    let smoothing = SmoothingConfig::new(cfg.test_smoothing)?;
    let truths: Vec<Truth> = test
        .samples
        .iter()
        .map(|s| Truth {
            velocity: s.velocity,
            distance: s.distance,
        })
        .collect();
    let mlp_preds = test
        .samples
        .iter()
        .map(|s| predict(&trained.model, &s.track, &smoothing))
        .collect::<Result<Vec<_>>>()?;
    let geo_preds = test
        .samples
        .iter()
        .map(|s| geometric_velocity(cam, &gaussian_smooth(&s.track, &smoothing), None))
        .collect::<Result<Vec<_>>>()?;

    let spec = BucketSpec::default();
    Ok(BenchmarkResult {
        fitted,
        model: trained.model,
        final_loss,
        mlp: e_v(&mlp_preds, &truths, &spec)?,
        baseline: e_v(&geo_preds, &truths, &spec)?,
    })
}
