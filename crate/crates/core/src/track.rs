//! Bounding-box tracks: the mid-level representation between a visual
//! tracker and the velocity regressor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frames per track in the reference data (2 s at 20 fps).
pub const DEFAULT_FRAMES: usize = 40;
pub const DEFAULT_FPS: f64 = 20.0;

/// Axis-aligned box: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || !(self.w > 0.0) || !(self.h > 0.0) {
            return Err(Error::Validation(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

/// A fixed-rate sequence of at least two boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    boxes: Vec<BBox>,
    fps: f64,
}

impl Track {
    pub fn new(boxes: Vec<BBox>, fps: f64) -> Result<Self> {
        if boxes.len() < 2 {
            return Err(Error::Validation(format!(
                "track needs at least 2 frames, got {}",
                boxes.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Validation(format!("fps must be > 0, got {fps}")));
        }
        for b in &boxes {
            b.validate()?;
        }
        Ok(Track { boxes, fps })
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn first(&self) -> &BBox {
        &self.boxes[0]
    }

    pub fn last(&self) -> &BBox {
        &self.boxes[self.boxes.len() - 1]
    }

    /// Frame-major flattening `(x1, y1, w1, h1, x2, ...)`.
    pub fn flatten(&self) -> Vec<f64> {
        self.boxes.iter().flat_map(|b| b.to_array()).collect()
    }

    /// Inverse of [`Track::flatten`].
    pub fn unflatten(values: &[f64], fps: f64) -> Result<Self> {
        if values.len() % 4 != 0 {
            return Err(Error::Validation(format!(
                "flat track length {} is not a multiple of 4",
                values.len()
            )));
        }
        let boxes = values
            .chunks_exact(4)
            .map(|c| BBox::new(c[0], c[1], c[2], c[3]))
            .collect::<Result<Vec<_>>>()?;
        Track::new(boxes, fps)
    }

    /// Builds a track from per-coordinate series, clamping sizes to at least
    /// `min_size` pixels.
    fn from_columns(cols: &[Vec<f64>; 4], fps: f64, min_size: f64) -> Result<Self> {
        let boxes = (0..cols[0].len())
            .map(|t| {
                BBox::new(
                    cols[0][t],
                    cols[1][t],
                    cols[2][t].max(min_size),
                    cols[3][t].max(min_size),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Track::new(boxes, fps)
    }

    fn columns(&self) -> [Vec<f64>; 4] {
        let mut cols: [Vec<f64>; 4] = Default::default();
        for b in &self.boxes {
            for (col, v) in cols.iter_mut().zip(b.to_array()) {
                col.push(v);
            }
        }
        cols
    }
}

/// Temporal Gaussian filter parameters, in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    sigma: f64,
    radius: usize,
}

impl SmoothingConfig {
    /// Kernel truncated at `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Validation(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(SmoothingConfig {
            sigma,
            radius: (3.0 * sigma).ceil() as usize,
        })
    }

    pub fn with_radius(sigma: f64, radius: usize) -> Result<Self> {
        let cfg = SmoothingConfig::new(sigma)?;
        if radius < cfg.radius {
            return Err(Error::Validation(format!(
                "radius {radius} is below ceil(3 sigma) = {}",
                cfg.radius
            )));
        }
        Ok(SmoothingConfig { sigma, radius })
    }

    pub fn identity() -> Self {
        SmoothingConfig { sigma: 0.0, radius: 0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0
    }

    /// Normalized weights for offsets `-radius..=radius`.
    pub fn kernel(&self) -> Vec<f64> {
        if self.is_identity() {
            return vec![1.0];
        }
        let r = self.radius as i64;
        let denom = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / denom).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Smooths each coordinate series independently with a truncated Gaussian,
/// replicating the first and last frames past the track ends.
pub fn gaussian_smooth(t: &Track, cfg: &SmoothingConfig) -> Track {
    if cfg.is_identity() {
        return t.clone();
    }
    let kernel = cfg.kernel();
    let r = cfg.radius as i64;
    let n = t.len() as i64;
    let cols = t.columns().map(|col| {
        (0..n)
            .map(|i| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * col[(i + j as i64 - r).clamp(0, n - 1) as usize])
                    .sum()
            })
            .collect::<Vec<f64>>()
    });
    // A convex combination of positive sizes stays positive.
    Track::from_columns(&cols, t.fps(), f64::MIN_POSITIVE).expect("smoothing preserves validity")
}

/// Lower bound applied to feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(len: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    /// Population mean and standard deviation of each feature, with the
    /// deviation floored at [`STD_FLOOR`].
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut rows = rows.into_iter().peekable();
        let len = match rows.peek() {
            Some(r) => r.len(),
            None => return Err(Error::Fit("cannot fit feature norm on zero rows".into())),
        };
        let mut count = 0usize;
        let mut mean = vec![0.0; len];
        let mut m2 = vec![0.0; len];
        // Welford keeps the variance accurate for large pixel offsets.
        for row in rows {
            if row.len() != len {
                return Err(Error::Validation(format!(
                    "feature length {} differs from {len}",
                    row.len()
                )));
            }
            count += 1;
            for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let d = x - *m;
                *m += d / count as f64;
                *s += d * (x - *m);
            }
        }
        let std = m2.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(FeatureNorm { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.len() {
            return Err(Error::Validation(format!(
                "feature length {} does not match expected {}",
                raw.len(),
                self.len()
            )));
        }
        Ok(raw
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

/// A standardized, frame-major flattened track of length `4T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

pub fn featurize(t: &Track, norm: &FeatureNorm) -> Result<FeatureVector> {
    if 4 * t.len() != norm.len() {
        return Err(Error::Validation(format!(
            "track has {} frames, model expects {}",
            t.len(),
            norm.len() / 4
        )));
    }
    norm.apply(&t.flatten()).map(FeatureVector)
}

/// Simulated tracker imperfection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std-dev of the noise on `x` and `y`, pixels.
    pub sigma_xy: f64,
    /// Std-dev of the noise on `w` and `h`, pixels.
    pub sigma_wh: f64,
    /// Linear drift added to `w` and `h`, pixels per frame.
    pub drift_wh: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_xy: 2.0,
            sigma_wh: 1.0,
            drift_wh: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            sigma_xy: 0.0,
            sigma_wh: 0.0,
            drift_wh: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.sigma_xy) || !ok(self.sigma_wh) || !self.drift_wh.is_finite() {
            return Err(Error::Validation(format!("invalid noise config {self:?}")));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.sigma_xy == 0.0 && self.sigma_wh == 0.0 && self.drift_wh == 0.0
    }
}

/// Adds i.i.d. Gaussian pixel noise and optional size drift. Sizes are
/// clamped to at least one pixel.
pub fn add_tracker_noise(t: &Track, noise: &NoiseConfig, seed: u64) -> Track {
    if noise.is_none() {
        return t.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    let boxes = t
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let drift = noise.drift_wh * i as f64;
            let x = b.x + draw(noise.sigma_xy);
            let y = b.y + draw(noise.sigma_xy);
            let w = (b.w + drift + draw(noise.sigma_wh)).max(1.0);
            let h = (b.h + drift + draw(noise.sigma_wh)).max(1.0);
            BBox { x, y, w, h }
        })
        .collect();
    Track::new(boxes, t.fps()).expect("noise keeps boxes valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_track(n: usize) -> Track {
        let boxes = (0..n)
            .map(|t| BBox::new(2.0 * t as f64, 300.0 + t as f64, 50.0, 40.0 - 0.1 * t as f64).unwrap())
            .collect();
        Track::new(boxes, 20.0).unwrap()
    }

    #[test]
    fn track_invariants() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Track::new(vec![b], 20.0).is_err());
        assert!(Track::new(vec![b, b], 0.0).is_err());
        assert!(BBox::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.0, 0.3, 1.0, 2.5, 5.0, 11.0] {
            let k = SmoothingConfig::new(sigma).unwrap().kernel();
            let total: f64 = k.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sigma {sigma}: {total}");
        }
        assert_eq!(SmoothingConfig::new(5.0).unwrap().radius(), 15);
        assert!(SmoothingConfig::with_radius(5.0, 14).is_err());
        assert!(SmoothingConfig::new(-1.0).is_err());
    }

    #[test]
    fn smoothing_constant_track_is_identity() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let t = Track::new(vec![b; 40], 20.0).unwrap();
        for sigma in [0.5, 2.0, 5.0, 20.0] {
            let s = gaussian_smooth(&t, &SmoothingConfig::new(sigma).unwrap());
            for sb in s.boxes() {
                for (a, e) in sb.to_array().iter().zip(b.to_array()) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn smoothing_sigma_zero_is_identity() {
        let t = ramp_track(40);
        assert_eq!(gaussian_smooth(&t, &SmoothingConfig::new(0.0).unwrap()), t);
    }

    #[test]
    fn smoothing_preserves_interior_ramp() {
        let t = ramp_track(40);
        let s = gaussian_smooth(&t, &SmoothingConfig::new(5.0).unwrap());
        for i in 15..=(40 - 16) {
            assert!((s.boxes()[i].x - 2.0 * i as f64).abs() < 1e-9, "frame {i}");
        }
        // Replicate padding pulls the ends towards the edge values.
        assert!(s.boxes()[0].x > 0.0);
        assert!(s.boxes()[39].x < 78.0);
    }

    #[test]
    fn featurize_examples() {
        let t = Track::new(
            vec![
                BBox::new(1.0, 2.0, 3.0, 4.0).unwrap(),
                BBox::new(5.0, 6.0, 7.0, 8.0).unwrap(),
            ],
            20.0,
        )
        .unwrap();
        let f = featurize(&t, &FeatureNorm::identity(8)).unwrap();
        assert_eq!(f.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

        let flat = t.flatten();
        let norm = FeatureNorm::fit([flat.as_slice()]).unwrap();
        assert!(norm.std.iter().all(|&s| s == STD_FLOOR));
        let f = featurize(&t, &norm).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));

        assert_eq!(
            featurize(&ramp_track(40), &FeatureNorm::identity(160)).unwrap().len(),
            160
        );
        assert!(matches!(
            featurize(&ramp_track(39), &FeatureNorm::identity(160)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn norm_fit_matches_population_stats() {
        let rows = [vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let norm = FeatureNorm::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert!((norm.mean[0] - 3.0).abs() < 1e-12);
        assert!((norm.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(norm.std[1], STD_FLOOR);
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = ramp_track(40);
        assert_eq!(add_tracker_noise(&t, &NoiseConfig::none(), 3), t);
    }

    #[test]
    fn noise_is_deterministic() {
        let t = ramp_track(40);
        let a = add_tracker_noise(&t, &NoiseConfig::default(), 42);
        let b = add_tracker_noise(&t, &NoiseConfig::default(), 42);
        let c = add_tracker_noise(&t, &NoiseConfig::default(), 43);
        let bits = |t: &Track| t.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn noise_std_matches_config() {
        // 2500 tracks of 40 frames: 10^5 x-coordinate draws.
        let t = ramp_track(40);
        let cfg = NoiseConfig::default();
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for seed in 0..2500 {
            let noisy = add_tracker_noise(&t, &cfg, seed);
            for (a, b) in noisy.boxes().iter().zip(t.boxes()) {
                sum_sq += (a.x - b.x).powi(2);
                n += 1;
            }
        }
        assert_eq!(n, 100_000);
        let sd = (sum_sq / n as f64).sqrt();
        assert!((1.98..=2.02).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn drift_and_clamping() {
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let t = Track::new(vec![b; 5], 20.0).unwrap();
        let grow = NoiseConfig {
            sigma_xy: 0.0,
            sigma_wh: 0.0,
            drift_wh: 0.5,
        };
        let out = add_tracker_noise(&t, &grow, 0);
        assert_eq!(out.last().w, 4.0);
        let shrink = NoiseConfig { drift_wh: -1.0, ..grow };
        let out = add_tracker_noise(&t, &shrink, 0);
        assert_eq!(out.last().h, 1.0);
    }

    proptest! {
        #[test]
        fn smoothing_commutes_with_offsets(
            offset in -500.0f64..500.0,
            sigma in 0.0f64..8.0,
            coord in 0usize..2,
        ) {
            let t = ramp_track(40);
            let cfg = SmoothingConfig::new(sigma).unwrap();
            let shift = |t: &Track| {
                let boxes = t.boxes().iter().map(|b| {
                    let mut a = b.to_array();
                    a[coord] += offset;
                    BBox::from_array(a).unwrap()
                }).collect();
                Track::new(boxes, t.fps()).unwrap()
            };
            let lhs = gaussian_smooth(&shift(&t), &cfg);
            let rhs = shift(&gaussian_smooth(&t, &cfg));
            for (a, b) in lhs.flatten().iter().zip(rhs.flatten()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn unflatten_then_flatten_is_identity(
            vals in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, 0.1f64..500.0, 0.1f64..500.0), 2..60)
        ) {
            let flat: Vec<f64> = vals.iter().flat_map(|&(x, y, w, h)| [x, y, w, h]).collect();
            let t = Track::unflatten(&flat, 20.0).unwrap();
            let f = featurize(&t, &FeatureNorm::identity(flat.len())).unwrap();
            prop_assert_eq!(f.values(), flat.as_slice());
        }
    }
}
