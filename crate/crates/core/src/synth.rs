//! Labeled synthetic tracks: draw a scenario from the prior, integrate the
//! motion over the track window and re-project every frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::DistanceConvention;
use crate::geometry::{project, Camera, GroundPoint, Velocity2D};
use crate::priors::{sample_scenario_with, Jitter, PriorModel};
use crate::track::{add_tracker_noise, BBox, NoiseConfig, Track, DEFAULT_FPS, DEFAULT_FRAMES};
use crate::{Error, Result};

/// Sample count of the reference training set.
pub const PAPER_SAMPLE_COUNT: usize = 11_536;

/// A track with its ground-truth velocity and distance at the final frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub track: Track,
    pub velocity: Velocity2D,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_samples: usize,
    pub frames: usize,
    pub fps: f64,
    pub jitter: Jitter,
    /// Tracker noise applied to the generated boxes; labels stay clean.
    pub noise: Option<NoiseConfig>,
    pub seed: u64,
    /// Scenario draws per sample before it is skipped.
    pub max_retries: usize,
    pub distance: DistanceConvention,
    /// Std-dev of a constant acceleration per axis, m/s^2. Zero keeps the
    /// motion at constant velocity.
    pub accel_std: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_samples: PAPER_SAMPLE_COUNT,
            frames: DEFAULT_FRAMES,
            fps: DEFAULT_FPS,
            jitter: Jitter::default(),
            noise: None,
            seed: 0,
            max_retries: 100,
            distance: DistanceConvention::Euclidean,
            accel_std: 0.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be >= 1".into()));
        }
        if self.frames < 2 {
            return Err(Error::Validation(format!("frames must be >= 2, got {}", self.frames)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.max_retries == 0 {
            return Err(Error::Validation("max_retries must be >= 1".into()));
        }
        if !(self.accel_std.is_finite() && self.accel_std >= 0.0) {
            return Err(Error::Validation(format!(
                "accel_std must be >= 0, got {}",
                self.accel_std
            )));
        }
        if !(self.jitter.lateral >= 0.0 && self.jitter.longitudinal >= 0.0) {
            return Err(Error::Validation(format!("invalid jitter {:?}", self.jitter)));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }
}

/// Why a sample index produced no track.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub index: usize,
    pub attempts: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Sample(LabeledSample),
    Skipped(Skip),
}

pub fn sample_id(index: usize) -> String {
    format!("syn-{index:06}")
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates sample `index`. The result depends only on the inputs, never on
/// which other indices were generated.
pub fn generate_track(cam: &Camera, pm: &PriorModel, cfg: &GenConfig, index: usize) -> Result<Outcome> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, index);
    let mut reason = String::new();
    for _ in 0..cfg.max_retries {
        let scenario = sample_scenario_with(pm, cam, &cfg.jitter, &mut rng)?;
        let accel = if cfg.accel_std > 0.0 {
            let ax: f64 = StandardNormal.sample(&mut rng);
            let az: f64 = StandardNormal.sample(&mut rng);
            Velocity2D::new(cfg.accel_std * ax, cfg.accel_std * az)
        } else {
            Velocity2D::default()
        };
        let noise_seed: u64 = rng.random();

        let position = |t: usize| {
            let tau = t as f64 / cfg.fps;
            let half = 0.5 * tau * tau;
            GroundPoint::new(
                scenario.start.x + scenario.velocity.vx * tau + accel.vx * half,
                scenario.start.z + scenario.velocity.vz * tau + accel.vz * half,
            )
        };

        let mut boxes = Vec::with_capacity(cfg.frames);
        for t in 0..cfg.frames {
            let p = position(t);
            let [z_lo, z_hi] = pm.bounds.location.z;
            if !(z_lo..=z_hi).contains(&p.z) {
                reason = format!("frame {} at Z = {:.2} m leaves [{z_lo}, {z_hi}]", t + 1, p.z);
                break;
            }
            let b = box_for(cam, p, scenario.width_m, scenario.height_m)?;
            if !cam.contains(&b) {
                reason = format!("frame {} box leaves the image", t + 1);
                break;
            }
            boxes.push(b);
        }
        if boxes.len() < cfg.frames {
            continue;
        }

        let last_tau = (cfg.frames - 1) as f64 / cfg.fps;
        let velocity = Velocity2D::new(
            scenario.velocity.vx + accel.vx * last_tau,
            scenario.velocity.vz + accel.vz * last_tau,
        );
        let mut track = Track::new(boxes, cfg.fps)?;
        if let Some(noise) = &cfg.noise {
            track = add_tracker_noise(&track, noise, noise_seed);
        }
        return Ok(Outcome::Sample(LabeledSample {
            id: sample_id(index),
            track,
            velocity,
            distance: cfg.distance.distance(&position(cfg.frames - 1)),
        }));
    }
    Ok(Outcome::Skipped(Skip {
        index,
        attempts: cfg.max_retries,
        reason,
    }))
}

/// Box whose bottom-center images `p` and whose size is the physical size
/// seen at depth `p.z`.
pub fn box_for(cam: &Camera, p: GroundPoint, width_m: f64, height_m: f64) -> Result<BBox> {
    let (px, py) = cam.to_pixel(project(cam, p)?);
    let w = cam.focal() * width_m / p.z;
    let h = cam.focal() * height_m / p.z;
    BBox::new(px - w / 2.0, py - h, w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub skipped: Vec<Skip>,
}

/// Generates `cfg.n_samples` indices in parallel; output order is by index.
pub fn generate_dataset(cam: &Camera, pm: &PriorModel, cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    pm.validate()?;
    let outcomes = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| generate_track(cam, pm, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Sample(s) => samples.push(s),
            Outcome::Skipped(s) => skipped.push(s),
        }
    }
    if 2 * skipped.len() > cfg.n_samples {
        return Err(Error::Config(format!(
            "{} of {} samples skipped; the prior is inconsistent with the bounds or image (first: {})",
            skipped.len(),
            cfg.n_samples,
            skipped[0].reason
        )));
    }
    Ok(Dataset { samples, skipped })
}

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub n: usize,
    pub produced: usize,
    pub skip_count: usize,
    pub skipped: Vec<Skip>,
}

impl Manifest {
    pub fn new(cam: &Camera, pm: &PriorModel, cfg: &GenConfig, ds: &Dataset) -> Result<Self> {
        let payload = serde_json::to_vec(&(cam, pm, cfg))?;
        Ok(Manifest {
            seed: cfg.seed,
            config_hash: hex::encode(Sha256::digest(&payload)),
            n: cfg.n_samples,
            produced: ds.samples.len(),
            skip_count: ds.skipped.len(),
            skipped: ds.skipped.clone(),
        })
    }
}
