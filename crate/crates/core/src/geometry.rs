//! Pinhole projection between the road plane and the image.
//!
//! Conventions: `u` grows to the right and `v` downwards, both measured in
//! pixels from the principal point (the image center). On the ground side `X`
//! is lateral offset (right positive) and `Z` is distance along the optical
//! axis. The camera looks straight ahead from height `H`, so a ground point
//! `(X, 0, Z)` images at `(f X / Z, f H / Z)`.

use serde::{Deserialize, Serialize};

use crate::track::{BBox, Track};
use crate::{Error, Result};

/// Intrinsics and mounting height of a forward-looking camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera", into = "RawCamera")]
pub struct Camera {
    focal: f64,
    height: f64,
    img_w: f64,
    img_h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCamera {
    f: f64,
    #[serde(rename = "H")]
    height: f64,
    img_w: f64,
    img_h: f64,
}

impl TryFrom<RawCamera> for Camera {
    type Error = Error;

    fn try_from(raw: RawCamera) -> Result<Self> {
        Camera::new(raw.f, raw.height, raw.img_w, raw.img_h)
    }
}

impl From<Camera> for RawCamera {
    fn from(cam: Camera) -> Self {
        RawCamera {
            f: cam.focal,
            height: cam.height,
            img_w: cam.img_w,
            img_h: cam.img_h,
        }
    }
}

impl Default for Camera {
    /// 1000 px focal length, 1.5 m mounting height, 1280x720 image.
    fn default() -> Self {
        Camera {
            focal: 1000.0,
            height: 1.5,
            img_w: 1280.0,
            img_h: 720.0,
        }
    }
}

impl Camera {
    pub fn new(focal: f64, height: f64, img_w: f64, img_h: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(focal) {
            return Err(Error::Validation(format!("focal length must be > 0, got {focal}")));
        }
        if !positive(height) {
            return Err(Error::Validation(format!("camera height must be > 0, got {height}")));
        }
        if !positive(img_w) || !positive(img_h) {
            return Err(Error::Validation(format!(
                "image size must be positive, got {img_w}x{img_h}"
            )));
        }
        Ok(Camera {
            focal,
            height,
            img_w,
            img_h,
        })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn image_size(&self) -> (f64, f64) {
        (self.img_w, self.img_h)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.img_w / 2.0, self.img_h / 2.0)
    }

    /// Converts absolute pixel coordinates to principal-point-relative ones.
    pub fn to_centered(&self, px: f64, py: f64) -> ImagePoint {
        let (cx, cy) = self.principal_point();
        ImagePoint { u: px - cx, v: py - cy }
    }

    /// Converts principal-point-relative coordinates to absolute pixels.
    pub fn to_pixel(&self, ip: ImagePoint) -> (f64, f64) {
        let (cx, cy) = self.principal_point();
        (ip.u + cx, ip.v + cy)
    }

    /// Whether a box lies entirely inside the image.
    pub fn contains(&self, b: &BBox) -> bool {
        b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= self.img_w && b.y + b.h <= self.img_h
    }
}

/// A point on the road plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub z: f64,
}

impl GroundPoint {
    pub fn new(x: f64, z: f64) -> Self {
        GroundPoint { x, z }
    }

    pub fn euclidean(&self) -> f64 {
        self.x.hypot(self.z)
    }
}

/// Pixel coordinates relative to the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        ImagePoint { u, v }
    }
}

/// Lateral and longitudinal velocity relative to the ego-vehicle, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity2D {
    pub vx: f64,
    pub vz: f64,
}

impl Velocity2D {
    pub fn new(vx: f64, vz: f64) -> Self {
        Velocity2D { vx, vz }
    }

    pub fn norm_sq(&self) -> f64 {
        self.vx * self.vx + self.vz * self.vz
    }

    pub fn sub(&self, other: &Velocity2D) -> Velocity2D {
        Velocity2D::new(self.vx - other.vx, self.vz - other.vz)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vz.is_finite()
    }
}

pub fn project(cam: &Camera, p: GroundPoint) -> Result<ImagePoint> {
    if !(p.z > 0.0) {
        return Err(Error::Domain(format!("point not in front of camera (Z = {})", p.z)));
    }
    Ok(ImagePoint {
        u: cam.focal * p.x / p.z,
        v: cam.focal * cam.height / p.z,
    })
}

pub fn back_project(cam: &Camera, ip: ImagePoint) -> Result<GroundPoint> {
    if !(ip.v > 0.0) {
        return Err(Error::Domain(format!("point at or above horizon (v = {})", ip.v)));
    }
    Ok(GroundPoint {
        x: cam.height * ip.u / ip.v,
        z: cam.focal * cam.height / ip.v,
    })
}

/// Bottom-center of the box, relative to the principal point.
pub fn bbox_reference_point(cam: &Camera, b: &BBox) -> Result<ImagePoint> {
    b.validate()?;
    Ok(cam.to_centered(b.x + b.w / 2.0, b.y + b.h))
}

/// Back-projects every frame's reference point and returns the least-squares
/// slopes of `X` and `Z` against time.
///
/// `window` restricts the fit to the final `K` frames; `None` uses the whole
/// track.
pub fn geometric_velocity(cam: &Camera, track: &Track, window: Option<usize>) -> Result<Velocity2D> {
    let n = track.len();
    if n < 2 {
        return Err(Error::Validation(format!("track needs at least 2 frames, got {n}")));
    }
    let k = match window {
        None => n,
        Some(k) if (2..=n).contains(&k) => k,
        Some(k) => {
            return Err(Error::Validation(format!(
                "velocity window must be in [2, {n}], got {k}"
            )))
        }
    };

    let start = n - k;
    let dt = 1.0 / track.fps();
    let mut ts = Vec::with_capacity(k);
    let mut xs = Vec::with_capacity(k);
    let mut zs = Vec::with_capacity(k);
    for (i, b) in track.boxes()[start..].iter().enumerate() {
        let g = back_project(cam, bbox_reference_point(cam, b)?)?;
        ts.push(i as f64 * dt);
        xs.push(g.x);
        zs.push(g.z);
    }
    Ok(Velocity2D {
        vx: ols_slope(&ts, &xs),
        vz: ols_slope(&ts, &zs),
    })
}

/// Slope of the least-squares line through `(ts[i], ys[i])`.
pub(crate) fn ols_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(ys) {
        let dt = t - t_mean;
        sty += dt * (y - y_mean);
        stt += dt * dt;
    }
    sty / stt
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> Camera {
        Camera::default()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn project_examples() {
        let p = project(&cam(), GroundPoint::new(3.0, 30.0)).unwrap();
        assert_eq!((p.u, p.v), (100.0, 50.0));

        let p = project(&cam(), GroundPoint::new(0.0, 17.0)).unwrap();
        assert_eq!(p.u, 0.0);
        assert!(close(p.v, 1500.0 / 17.0, 1e-12));
        assert!(close(p.v, 88.235, 1e-3));

        let p = project(&cam(), GroundPoint::new(-9.0, 60.0)).unwrap();
        assert_eq!((p.u, p.v), (-150.0, 25.0));
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        for z in [0.0, -1.0, f64::NAN] {
            let err = project(&cam(), GroundPoint::new(1.0, z)).unwrap_err();
            assert!(err.to_string().contains("point not in front of camera"));
        }
    }

    #[test]
    fn back_project_examples() {
        let g = back_project(&cam(), ImagePoint::new(100.0, 50.0)).unwrap();
        assert_eq!((g.x, g.z), (3.0, 30.0));
        let g = back_project(&cam(), ImagePoint::new(0.0, 30.0)).unwrap();
        assert_eq!((g.x, g.z), (0.0, 50.0));
        let g = back_project(&cam(), ImagePoint::new(-150.0, 25.0)).unwrap();
        assert_eq!((g.x, g.z), (-9.0, 60.0));
    }

    #[test]
    fn back_project_rejects_horizon() {
        for v in [0.0, -3.0] {
            let err = back_project(&cam(), ImagePoint::new(5.0, v)).unwrap_err();
            assert!(err.to_string().contains("point at or above horizon"));
        }
    }

    #[test]
    fn reference_point_examples() {
        let c = cam();
        let at_horizon = BBox::new(600.0, 310.0, 80.0, 50.0).unwrap();
        let ip = bbox_reference_point(&c, &at_horizon).unwrap();
        assert_eq!((ip.u, ip.v), (0.0, 0.0));
        assert!(back_project(&c, ip)
            .unwrap_err()
            .to_string()
            .contains("at or above horizon"));

        let b = BBox::new(600.0, 360.0, 80.0, 50.0).unwrap();
        let ip = bbox_reference_point(&c, &b).unwrap();
        assert_eq!((ip.u, ip.v), (0.0, 50.0));

        let b = BBox::new(0.0, 500.0, 100.0, 60.0).unwrap();
        let ip = bbox_reference_point(&c, &b).unwrap();
        assert_eq!((ip.u, ip.v), (-590.0, 200.0));
    }

    #[test]
    fn reference_point_rejects_degenerate_box() {
        let b = BBox {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 10.0,
        };
        assert!(matches!(bbox_reference_point(&cam(), &b), Err(Error::Validation(_))));
    }

    #[test]
    fn camera_json_layout() {
        let json = serde_json::to_value(cam()).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"f": 1000.0, "H": 1.5, "img_w": 1280.0, "img_h": 720.0})
        );
        let bad = r#"{"f": -1, "H": 1.5, "img_w": 1280, "img_h": 720}"#;
        assert!(serde_json::from_str::<Camera>(bad).is_err());
    }

    fn box_at(c: &Camera, g: GroundPoint, w_m: f64, h_m: f64) -> BBox {
        let ip = project(c, g).unwrap();
        let (px, py) = c.to_pixel(ip);
        let w = c.focal() * w_m / g.z;
        let h = c.focal() * h_m / g.z;
        BBox::new(px - w / 2.0, py - h, w, h).unwrap()
    }

    #[test]
    fn constant_velocity_track_is_exact() {
        let c = cam();
        let (vx, vz) = (0.5, -3.0);
        let boxes = (0..40)
            .map(|t| {
                let tau = t as f64 / 20.0;
                box_at(&c, GroundPoint::new(1.0 + vx * tau, 50.0 + vz * tau), 1.8, 1.6)
            })
            .collect();
        let track = Track::new(boxes, 20.0).unwrap();
        let v = geometric_velocity(&c, &track, None).unwrap();
        assert!(close(v.vx, vx, 1e-6) && close(v.vz, vz, 1e-6), "{v:?}");

        let v = geometric_velocity(&c, &track, Some(5)).unwrap();
        assert!(close(v.vx, vx, 1e-6) && close(v.vz, vz, 1e-6), "{v:?}");
    }

    #[test]
    fn stationary_track_has_zero_velocity() {
        let b = BBox::new(600.0, 400.0, 60.0, 40.0).unwrap();
        let track = Track::new(vec![b; 40], 20.0).unwrap();
        let v = geometric_velocity(&cam(), &track, None).unwrap();
        assert_eq!((v.vx, v.vz), (0.0, 0.0));
    }

    #[test]
    fn geometric_velocity_errors() {
        let above = BBox::new(600.0, 100.0, 60.0, 40.0).unwrap();
        let below = BBox::new(600.0, 400.0, 60.0, 40.0).unwrap();
        let track = Track::new(vec![below, above], 20.0).unwrap();
        assert!(matches!(
            geometric_velocity(&cam(), &track, None),
            Err(Error::Domain(_))
        ));
        let track = Track::new(vec![below, below], 20.0).unwrap();
        assert!(matches!(
            geometric_velocity(&cam(), &track, Some(3)),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn round_trip(x in -9.0f64..=9.0, z in 5.0f64..=100.0) {
            let c = cam();
            let g = back_project(&c, project(&c, GroundPoint::new(x, z)).unwrap()).unwrap();
            prop_assert!((g.x - x).abs() <= 1e-9 * x.abs().max(1e-300) || (g.x - x).abs() <= 1e-12);
            prop_assert!((g.z - z).abs() <= 1e-9 * z);
        }
    }

    proptest! {
        #[test]
        fn depth_decreases_with_v(u in -600.0f64..600.0, v in 1.0f64..300.0, dv in 1e-6f64..50.0) {
            let c = cam();
            let near = back_project(&c, ImagePoint::new(u, v + dv)).unwrap();
            let far = back_project(&c, ImagePoint::new(u, v)).unwrap();
            prop_assert!(near.z < far.z);
        }
    }
}
