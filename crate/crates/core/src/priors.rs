//! Statistics distilled from a small labeled sample: where vehicles appear,
//! how large they are at a given depth, and how fast they move.
//!
//! The location prior is kept empirical (a list of seed ground points plus
//! jitter) while sizes and velocities are parametric (polynomials in depth and
//! a bivariate Gaussian).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{back_project, bbox_reference_point, Camera, GroundPoint, Velocity2D};
use crate::synth::LabeledSample;
use crate::{Error, Result};

pub const PRIOR_FORMAT_VERSION: u32 = 1;

/// Least-squares polynomial fit via the normal equations.
///
/// Coefficients are returned highest degree first, so `[2, 3, 1]` is
/// `2x^2 + 3x + 1`.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!("polyfit: {} xs but {} ys", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("polyfit: non-finite data".into()));
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::Fit(format!(
            "polyfit: rank-deficient design, degree {degree} needs {} distinct x values, got {}",
            degree + 1,
            distinct.len()
        )));
    }

    // Scaling x to unit magnitude keeps the Gram matrix well conditioned.
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let m = degree + 1;
    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    let mut powers = vec![0.0; 2 * degree + 1];
    for (&x, &y) in xs.iter().zip(ys) {
        let s = x / scale;
        let mut p = 1.0;
        for slot in powers.iter_mut() {
            *slot = p;
            p *= s;
        }
        for (i, row) in gram.iter_mut().enumerate() {
            for (j, g) in row.iter_mut().enumerate() {
                *g += powers[i + j];
            }
            rhs[i] += powers[i] * y;
        }
    }
    let ascending = solve(gram, rhs)?;
    // Undo the scaling: c_k (x/scale)^k = (c_k / scale^k) x^k.
    Ok(ascending
        .iter()
        .enumerate()
        .map(|(k, c)| c / scale.powi(k as i32))
        .rev()
        .collect())
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let norm = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-13 * norm {
            return Err(Error::Fit("polyfit: rank-deficient design matrix".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Evaluates a highest-degree-first polynomial with Horner's rule.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

pub type Cov2 = [[f64; 2]; 2];

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(vels: &[Velocity2D]) -> Result<(Velocity2D, Cov2)> {
    if vels.len() < 2 {
        return Err(Error::Fit(format!(
            "velocity Gaussian needs at least 2 samples, got {}",
            vels.len()
        )));
    }
    let n = vels.len() as f64;
    let mx = vels.iter().map(|v| v.vx).sum::<f64>() / n;
    let mz = vels.iter().map(|v| v.vz).sum::<f64>() / n;
    let (mut sxx, mut sxz, mut szz) = (0.0, 0.0, 0.0);
    for v in vels {
        let (dx, dz) = (v.vx - mx, v.vz - mz);
        sxx += dx * dx;
        sxz += dx * dz;
        szz += dz * dz;
    }
    let d = n - 1.0;
    Ok((Velocity2D::new(mx, mz), [[sxx / d, sxz / d], [sxz / d, szz / d]]))
}

/// Lower-triangular Cholesky factor of `cov + 1e-12 I`.
pub fn cholesky2(cov: &Cov2) -> Result<Cov2> {
    let a = cov[0][0] + 1e-12;
    let b = cov[1][0];
    let c = cov[1][1] + 1e-12;
    if !(a > 0.0) {
        return Err(Error::Validation(format!("covariance is not PSD: {cov:?}")));
    }
    let l11 = a.sqrt();
    let l21 = b / l11;
    let rest = c - l21 * l21;
    // Rounding can leave a PSD matrix a hair negative here.
    if rest < -1e-9 * c.abs().max(1.0) {
        return Err(Error::Validation(format!("covariance is not PSD: {cov:?}")));
    }
    Ok([[l11, 0.0], [l21, rest.max(0.0).sqrt()]])
}

/// Region where synthetic vehicles may be placed, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationBounds {
    pub x: [f64; 2],
    pub z: [f64; 2],
}

impl Default for LocationBounds {
    fn default() -> Self {
        LocationBounds {
            x: [-9.0, 9.0],
            z: [5.0, 100.0],
        }
    }
}

impl LocationBounds {
    pub fn contains(&self, p: &GroundPoint) -> bool {
        (self.x[0]..=self.x[1]).contains(&p.x) && (self.z[0]..=self.z[1]).contains(&p.z)
    }

    pub fn clamp(&self, p: GroundPoint) -> GroundPoint {
        GroundPoint::new(p.x.clamp(self.x[0], self.x[1]), p.z.clamp(self.z[0], self.z[1]))
    }
}

/// Plausible physical vehicle dimensions, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub height_m: [f64; 2],
    pub width_m: [f64; 2],
}

impl Default for SizeBounds {
    fn default() -> Self {
        SizeBounds {
            height_m: [1.3, 2.5],
            width_m: [1.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(flatten)]
    pub location: LocationBounds,
    #[serde(flatten)]
    pub size: SizeBounds,
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("x", self.location.x),
            ("z", self.location.z),
            ("height_m", self.size.height_m),
            ("width_m", self.size.width_m),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!(
                    "bounds.{name}: need min < max, got [{lo}, {hi}]"
                )));
            }
        }
        if self.location.z[0] <= 0.0 {
            return Err(Error::Validation("bounds.z must lie in front of the camera".into()));
        }
        Ok(())
    }
}

/// Variable the size polynomials are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SizeBasis {
    /// Polynomial in `1/Z`; degree 1 with zero intercept is the pinhole model.
    #[default]
    #[serde(rename = "inv_z")]
    InvZ,
    #[serde(rename = "z")]
    Z,
}

impl SizeBasis {
    pub fn transform(self, z: f64) -> f64 {
        match self {
            SizeBasis::InvZ => 1.0 / z,
            SizeBasis::Z => z,
        }
    }

    pub fn default_degree(self) -> usize {
        match self {
            SizeBasis::InvZ => 1,
            SizeBasis::Z => 2,
        }
    }
}

/// Fitted statistics from which synthetic tracks are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPriorModel", into = "RawPriorModel")]
pub struct PriorModel {
    pub seed_points: Vec<GroundPoint>,
    /// Box height in pixels as a polynomial in `basis(Z)`.
    pub h_poly: Vec<f64>,
    /// Box width in pixels as a polynomial in `basis(Z)`.
    pub w_poly: Vec<f64>,
    pub basis: SizeBasis,
    pub vel_mean: Velocity2D,
    pub vel_cov: Cov2,
    pub bounds: Bounds,
}

#[derive(Serialize, Deserialize)]
struct RawPriorModel {
    seed_points: Vec<[f64; 2]>,
    h_poly: Vec<f64>,
    w_poly: Vec<f64>,
    basis: SizeBasis,
    vel_mean: [f64; 2],
    vel_cov: Cov2,
    bounds: Bounds,
    version: u32,
}

impl TryFrom<RawPriorModel> for PriorModel {
    type Error = Error;

    fn try_from(raw: RawPriorModel) -> Result<Self> {
        if raw.version != PRIOR_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: raw.version,
                supported: PRIOR_FORMAT_VERSION,
            });
        }
        let pm = PriorModel {
            seed_points: raw.seed_points.iter().map(|&[x, z]| GroundPoint::new(x, z)).collect(),
            h_poly: raw.h_poly,
            w_poly: raw.w_poly,
            basis: raw.basis,
            vel_mean: Velocity2D::new(raw.vel_mean[0], raw.vel_mean[1]),
            vel_cov: raw.vel_cov,
            bounds: raw.bounds,
        };
        pm.validate()?;
        Ok(pm)
    }
}

impl From<PriorModel> for RawPriorModel {
    fn from(pm: PriorModel) -> Self {
        RawPriorModel {
            seed_points: pm.seed_points.iter().map(|p| [p.x, p.z]).collect(),
            h_poly: pm.h_poly,
            w_poly: pm.w_poly,
            basis: pm.basis,
            vel_mean: [pm.vel_mean.vx, pm.vel_mean.vz],
            vel_cov: pm.vel_cov,
            bounds: pm.bounds,
            version: PRIOR_FORMAT_VERSION,
        }
    }
}

impl PriorModel {
    /// A motorway-like prior for a given camera, used when no annotated sample
    /// is available.
    ///
    /// Seeds sit on five lanes 3.7 m apart, denser in the ego lane, every
    /// 2.5 m between 12 and 90 m, keeping only those whose 1.85 m wide
    /// vehicle is fully visible. Vehicles are 1.55 m tall and 1.85 m wide.
    /// Velocities are centred near zero with 0.4 m/s lateral and 1.5 m/s
    /// longitudinal spread.
    pub fn motorway_default(cam: &Camera) -> Self {
        let (img_w, _) = cam.image_size();
        let (height_m, width_m) = (1.55, 1.85);
        let lanes: [(f64, usize); 5] = [(-7.4, 1), (-3.7, 2), (0.0, 4), (3.7, 2), (7.4, 1)];
        let mut seed_points = Vec::new();
        for k in 0..=((90.0 - 12.0) / 2.5) as usize {
            let z = 12.0 + 2.5 * k as f64;
            for &(x, weight) in &lanes {
                let half_extent = cam.focal() * (x.abs() + width_m / 2.0) / z;
                if half_extent <= img_w / 2.0 - 1.0 {
                    seed_points.extend(std::iter::repeat_n(GroundPoint::new(x, z), weight));
                }
            }
        }
        PriorModel {
            seed_points,
            h_poly: vec![cam.focal() * height_m, 0.0],
            w_poly: vec![cam.focal() * width_m, 0.0],
            basis: SizeBasis::InvZ,
            vel_mean: Velocity2D::new(0.0, -0.3),
            vel_cov: [[0.16, 0.0], [0.0, 2.25]],
            bounds: Bounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_points.is_empty() {
            return Err(Error::Validation("prior has no seed points".into()));
        }
        if self.h_poly.is_empty() || self.w_poly.is_empty() {
            return Err(Error::Validation("prior size polynomials are empty".into()));
        }
        let c = &self.vel_cov;
        if c.iter().flatten().any(|v| !v.is_finite()) || (c[0][1] - c[1][0]).abs() > 1e-12 * (c[0][1].abs() + 1.0) {
            return Err(Error::Validation(format!("velocity covariance not symmetric: {c:?}")));
        }
        if c[0][0] < 0.0 || c[1][1] < 0.0 || c[0][0] * c[1][1] - c[0][1] * c[1][0] < -1e-12 {
            return Err(Error::Validation(format!("velocity covariance not PSD: {c:?}")));
        }
        cholesky2(c)?;
        self.bounds.validate()
    }

    /// Box height and width in pixels predicted by the polynomials at depth `z`.
    pub fn size_px(&self, z: f64) -> (f64, f64) {
        let s = self.basis.transform(z);
        (polyval(&self.h_poly, s), polyval(&self.w_poly, s))
    }

    /// Physical vehicle height and width implied by the polynomials at depth
    /// `z`, clamped to the size bounds.
    pub fn physical_size(&self, cam: &Camera, z: f64) -> (f64, f64) {
        let (h_px, w_px) = self.size_px(z);
        let [h_lo, h_hi] = self.bounds.size.height_m;
        let [w_lo, w_hi] = self.bounds.size.width_m;
        let to_m = |px: f64| px * z / cam.focal();
        (to_m(h_px).clamp(h_lo, h_hi), to_m(w_px).clamp(w_lo, w_hi))
    }
}

/// Per-axis Gaussian jitter added to a drawn seed point, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub lateral: f64,
    pub longitudinal: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            lateral: 0.5,
            longitudinal: 2.0,
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Jitter {
            lateral: 0.0,
            longitudinal: 0.0,
        }
    }
}

/// One draw from the prior: where a vehicle starts, how it moves and its size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub start: GroundPoint,
    pub velocity: Velocity2D,
    pub height_m: f64,
    pub width_m: f64,
}

pub fn sample_scenario(pm: &PriorModel, cam: &Camera, jitter: &Jitter, seed: u64) -> Result<Scenario> {
    sample_scenario_with(pm, cam, jitter, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_scenario_with<R: Rng + ?Sized>(
    pm: &PriorModel,
    cam: &Camera,
    jitter: &Jitter,
    rng: &mut R,
) -> Result<Scenario> {
    let chol = cholesky2(&pm.vel_cov)?;
    let seed = pm.seed_points[rng.random_range(0..pm.seed_points.len())];
    let n0: f64 = StandardNormal.sample(rng);
    let n1: f64 = StandardNormal.sample(rng);
    let start = pm.bounds.location.clamp(GroundPoint::new(
        seed.x + jitter.lateral * n0,
        seed.z + jitter.longitudinal * n1,
    ));

    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    let velocity = Velocity2D::new(
        pm.vel_mean.vx + chol[0][0] * z0,
        pm.vel_mean.vz + chol[1][0] * z0 + chol[1][1] * z1,
    );
    let (height_m, width_m) = pm.physical_size(cam, start.z);
    Ok(Scenario {
        start,
        velocity,
        height_m,
        width_m,
    })
}

/// Which depth the size polynomials are regressed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DepthSource {
    /// Every frame's box against its back-projected depth.
    #[default]
    BackProjected,
    /// The last frame's box against the labeled distance.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub basis: SizeBasis,
    pub degree: usize,
    pub depth_source: DepthSource,
    pub bounds: Bounds,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            basis: SizeBasis::InvZ,
            degree: SizeBasis::InvZ.default_degree(),
            depth_source: DepthSource::BackProjected,
            bounds: Bounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorFit {
    pub model: PriorModel,
    /// Seeds that fell outside the location bounds and were left out.
    pub dropped_seeds: usize,
}

pub fn fit_priors(samples: &[LabeledSample], cam: &Camera, cfg: &FitConfig) -> Result<PriorFit> {
    if samples.is_empty() {
        return Err(Error::Fit("no samples to fit priors from".into()));
    }
    cfg.bounds.validate()?;

    let ground = |s: &LabeledSample, b| -> Result<GroundPoint> {
        back_project(cam, bbox_reference_point(cam, b)?).map_err(|e| Error::Fit(format!("sample {}: {e}", s.id)))
    };

    let mut seed_points = Vec::with_capacity(samples.len());
    let mut dropped = 0;
    let (mut depths, mut heights, mut widths) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let seed = ground(s, s.track.first())?;
        if cfg.bounds.location.contains(&seed) {
            seed_points.push(seed);
        } else {
            dropped += 1;
        }
        match cfg.depth_source {
            DepthSource::BackProjected => {
                for b in s.track.boxes() {
                    depths.push(ground(s, b)?.z);
                    heights.push(b.h);
                    widths.push(b.w);
                }
            }
            DepthSource::Label => {
                depths.push(s.distance);
                heights.push(s.track.last().h);
                widths.push(s.track.last().w);
            }
        }
    }
    if seed_points.is_empty() {
        return Err(Error::Fit(format!(
            "all {} seed points fall outside the location bounds",
            samples.len()
        )));
    }

    let xs: Vec<f64> = depths.iter().map(|&z| cfg.basis.transform(z)).collect();
    let h_poly = polyfit(&xs, &heights, cfg.degree)?;
    let w_poly = polyfit(&xs, &widths, cfg.degree)?;
    let vels: Vec<Velocity2D> = samples.iter().map(|s| s.velocity).collect();
    let (vel_mean, vel_cov) = fit_gaussian(&vels)?;

    let model = PriorModel {
        seed_points,
        h_poly,
        w_poly,
        basis: cfg.basis,
        vel_mean,
        vel_cov,
        bounds: cfg.bounds,
    };
    model.validate()?;
    Ok(PriorFit {
        model,
        dropped_seeds: dropped,
    })
}
