//! Velocity regressor: an MLP over standardized, flattened box tracks.

mod checkpoint;
mod gradcheck;
mod mlp;

pub use checkpoint::{load, save, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheck};
pub use mlp::{crelu, Arch, Cache, Dense, Gradients, Mlp, Mode, OUTPUT_DIM};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Velocity2D;
use crate::synth::LabeledSample;
use crate::track::{featurize, gaussian_smooth, FeatureNorm, SmoothingConfig, Track};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// Whether the learning rate decays once per epoch or once per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayUnit {
    #[default]
    Epoch,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_unit: DecayUnit,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
    /// Gaussian sigma (frames) applied to training tracks before
    /// featurization; zero trains on the tracks as given.
    pub train_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            lr0: 6e-4,
            decay: 0.99,
            decay_unit: DecayUnit::Epoch,
            dropout: 0.2,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::Adam,
            hidden: Arch::DEFAULT_HIDDEN.to_vec(),
            train_smoothing: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Validation(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Validation(format!(
                "decay must be in (0, 1], got {}",
                self.decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        SmoothingConfig::new(self.train_smoothing)?;
        Ok(())
    }

    /// Learning rate after `step` decay steps: `lr0 * decay^step`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr0 * self.decay.powi(step as i32)
    }
}

/// A trained estimator: network plus the feature statistics it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub mlp: Mlp,
    pub feature_norm: FeatureNorm,
    pub train_config: TrainConfig,
}

impl MlpModel {
    pub fn frames(&self) -> usize {
        self.mlp.arch().frames
    }

    /// Eval-mode forward pass on already standardized features.
    pub fn forward_features(&self, features: &[f64]) -> Result<Velocity2D> {
        self.mlp.eval(features)
    }
}

/// Smooth, standardize with the stored statistics, then run the network in
/// eval mode.
pub fn predict(m: &MlpModel, track: &Track, smoothing: &SmoothingConfig) -> Result<Velocity2D> {
    if track.len() != m.frames() {
        return Err(Error::Validation(format!(
            "track has {} frames, model expects {}",
            track.len(),
            m.frames()
        )));
    }
    let smoothed = gaussian_smooth(track, smoothing);
    let f = featurize(&smoothed, &m.feature_norm)?;
    m.forward_features(f.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared-norm training loss over the epoch (train mode).
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    pub trace: Vec<EpochStats>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp) -> Self {
        Adam {
            m: net.gradients(),
            v: net.gradients(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        };
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gl, ml, vl) = (&g.layers[k], &mut self.m.layers[k], &mut self.v.layers[k]);
            update(&mut layer.weights, &gl.weights, &mut ml.weights, &mut vl.weights);
            update(&mut layer.bias, &gl.bias, &mut ml.bias, &mut vl.bias);
        }
    }
}

fn sgd_step(net: &mut Mlp, g: &Gradients, lr: f64) {
    for (layer, gl) in net.layers_mut().iter_mut().zip(&g.layers) {
        for (p, d) in layer.weights.iter_mut().zip(&gl.weights) {
            *p -= lr * d;
        }
        for (p, d) in layer.bias.iter_mut().zip(&gl.bias) {
            *p -= lr * d;
        }
    }
}

/// Fits the feature statistics, then minimizes the mean squared velocity
/// error with mini-batch Adam (or SGD). Single-threaded and deterministic for
/// a given seed and dataset. Returns the final-epoch weights.
pub fn train(data: &[LabeledSample], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::Validation("training set is empty".into()))?;
    let frames = first.track.len();
    if let Some(bad) = data.iter().find(|s| s.track.len() != frames) {
        return Err(Error::Validation(format!(
            "inconsistent track length: {} has {} frames, expected {frames}",
            bad.id,
            bad.track.len()
        )));
    }

    let smoothing = SmoothingConfig::new(cfg.train_smoothing)?;
    let raw: Vec<Vec<f64>> = data
        .iter()
        .map(|s| gaussian_smooth(&s.track, &smoothing).flatten())
        .collect();
    let feature_norm = FeatureNorm::fit(raw.iter().map(Vec::as_slice))?;
    let features = raw.iter().map(|r| feature_norm.apply(r)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Velocity2D> = data.iter().map(|s| s.velocity).collect();

    let arch = Arch::new(frames, cfg.hidden.clone())?;
    let mut net = Mlp::new_random(arch, cfg.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut adam = Adam::new(&net);
    let mut grads = net.gradients();
    let mut cache = Cache::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_lr = cfg.learning_rate(epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let mode = Mode::Train {
                    dropout: cfg.dropout,
                    rng: &mut dropout_rng,
                };
                let pred = net.forward_into(&features[i], mode, &mut cache)?;
                loss_sum += pred.sub(&targets[i]).norm_sq();
                net.backward_into(&cache, targets[i], weight, &mut grads)?;
            }
            let lr = match cfg.decay_unit {
                DecayUnit::Epoch => epoch_lr,
                DecayUnit::Step => cfg.learning_rate(step),
            };
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut net, &grads, lr),
                Optimizer::Sgd => sgd_step(&mut net, &grads, lr),
            }
            step += 1;
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss} at epoch {epoch}")));
        }
        trace.push(EpochStats {
            epoch,
            lr: epoch_lr,
            loss,
        });
    }

    if net
        .layers()
        .iter()
        .any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric("non-finite weights after training".into()));
    }
    Ok(Trained {
        model: MlpModel {
            mlp: net,
            feature_norm,
            train_config: cfg.clone(),
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Camera;
    use crate::priors::PriorModel;
    use crate::synth::{generate_dataset, GenConfig};
    use crate::track::BBox;

    fn dataset(n: usize, seed: u64) -> Vec<LabeledSample> {
        let cam = Camera::default();
        let cfg = GenConfig {
            n_samples: n,
            seed,
            ..GenConfig::default()
        };
        generate_dataset(&cam, &PriorModel::motorway_default(&cam), &cfg)
            .unwrap()
            .samples
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.epochs, c.lr0, c.decay, c.dropout, c.batch_size),
            (150, 6e-4, 0.99, 0.2, 64)
        );
        for e in [0usize, 1, 10, 149] {
            assert_eq!(c.learning_rate(e), 6e-4 * 0.99f64.powi(e as i32));
        }
        assert!(TrainConfig {
            dropout: 1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { lr0: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig {
            decay: 1.5,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { decay: 1.0, ..c }.validate().is_ok());
    }

    #[test]
    fn single_sample_is_memorized() {
        // A lone sample standardizes to the zero vector, so only the output
        // bias can move, by at most ~lr per Adam step. 150 steps at 6e-4
        // cannot cover a velocity of a few m/s; a larger rate is needed.
        let data = dataset(1, 2);
        let cfg = TrainConfig {
            seed: 1,
            lr0: 0.1,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let trained = train(&data, &cfg).unwrap();
        assert_eq!(trained.trace.len(), 150);
        let final_loss = trained.trace.last().unwrap().loss;
        assert!(final_loss < 1e-3, "loss {final_loss}");
        let pred = predict(&trained.model, &data[0].track, &SmoothingConfig::identity()).unwrap();
        assert!(pred.sub(&data[0].velocity).norm_sq() < 1e-3);
    }

    #[test]
    fn training_is_deterministic() {
        let data = dataset(100, 3);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let c = train(&data, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.model.mlp, c.model.mlp);
    }

    #[test]
    fn rejects_bad_training_sets() {
        assert!(train(&[], &TrainConfig::default()).is_err());
        let mut data = dataset(2, 4);
        let b = BBox::new(600.0, 400.0, 50.0, 40.0).unwrap();
        data[1].track = Track::new(vec![b; 10], 20.0).unwrap();
        assert!(matches!(
            train(&data, &TrainConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = dataset(50, 5);
        let cfg = TrainConfig {
            epochs: 20,
            lr0: 1e6,
            optimizer: Optimizer::Sgd,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn predict_is_composition() {
        let data = dataset(60, 6);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let m = train(&data, &cfg).unwrap().model;
        let smoothing = SmoothingConfig::new(5.0).unwrap();
        for s in data.iter().take(10) {
            let direct = m
                .forward_features(
                    featurize(&gaussian_smooth(&s.track, &smoothing), &m.feature_norm)
                        .unwrap()
                        .values(),
                )
                .unwrap();
            let p = predict(&m, &s.track, &smoothing).unwrap();
            assert_eq!(p, direct);
            assert_eq!(p, predict(&m, &s.track, &smoothing).unwrap());
        }
        let b = BBox::new(600.0, 400.0, 50.0, 40.0).unwrap();
        let short = Track::new(vec![b; 10], 20.0).unwrap();
        assert!(predict(&m, &short, &smoothing).is_err());
    }

    #[test]
    fn loss_falls_over_training() {
        let data = dataset(1000, 7);
        let cfg = TrainConfig {
            epochs: 40,
            seed: 2,
            ..TrainConfig::default()
        };
        let trace = train(&data, &cfg).unwrap().trace;
        let avg: Vec<f64> = trace
            .windows(10)
            .map(|w| w.iter().map(|e| e.loss).sum::<f64>() / 10.0)
            .collect();
        assert!(avg.last().unwrap() < &(avg[0] * 0.5), "{avg:?}");
    }
}
