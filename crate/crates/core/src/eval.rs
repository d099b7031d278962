//! Distance-bucketed velocity error.
//!
//! Each bucket's error is the mean squared norm of the velocity residual over
//! its samples; the overall error is the plain average of the three bucket
//! errors, so small buckets weigh as much as large ones.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::geometry::{GroundPoint, Velocity2D};
use crate::{Error, Result};

/// How a ground point's distance from the ego-vehicle is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceConvention {
    #[default]
    Euclidean,
    Longitudinal,
}

impl DistanceConvention {
    pub fn distance(self, p: &GroundPoint) -> f64 {
        match self {
            DistanceConvention::Euclidean => p.euclidean(),
            DistanceConvention::Longitudinal => p.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Near,
    Medium,
    Far,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Near, Bucket::Medium, Bucket::Far];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Near => "near",
            Bucket::Medium => "medium",
            Bucket::Far => "far",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bucket boundaries in meters: near below `near_max`, far from `far_min` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub near_max: f64,
    pub far_min: f64,
    pub convention: DistanceConvention,
}

impl Default for BucketSpec {
    fn default() -> Self {
        BucketSpec {
            near_max: 20.0,
            far_min: 45.0,
            convention: DistanceConvention::Euclidean,
        }
    }
}

impl BucketSpec {
    pub fn new(near_max: f64, far_min: f64, convention: DistanceConvention) -> Result<Self> {
        if !(near_max > 0.0 && near_max < far_min && far_min.is_finite()) {
            return Err(Error::Validation(format!(
                "bucket boundaries must satisfy 0 < {near_max} < {far_min}"
            )));
        }
        Ok(BucketSpec {
            near_max,
            far_min,
            convention,
        })
    }
}

pub fn bucketize(d: f64, spec: &BucketSpec) -> Result<Bucket> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Validation(format!("distance must be > 0, got {d}")));
    }
    Ok(if d < spec.near_max {
        Bucket::Near
    } else if d < spec.far_min {
        Bucket::Medium
    } else {
        Bucket::Far
    })
}

/// Ground truth for one evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub velocity: Velocity2D,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub bucket: Bucket,
    pub distance: f64,
    pub dvx: f64,
    pub dvz: f64,
    pub sq_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketError {
    pub bucket: Bucket,
    pub count: usize,
    /// Mean squared velocity error, m^2/s^2.
    pub e_v: f64,
    /// Square root of `e_v`, m/s.
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub e_v: f64,
    pub buckets: [BucketError; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<Residual>,
}

impl EvalReport {
    pub fn bucket(&self, b: Bucket) -> &BucketError {
        &self.buckets[b.index()]
    }

    pub fn rms(&self) -> f64 {
        self.e_v.sqrt()
    }

    pub fn without_residuals(mut self) -> Self {
        self.residuals.clear();
        self
    }

    /// Plain-text rendering, one line per quantity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>6} {:>10} {:>10}", "subset", "n", "E_v", "rms");
        for b in &self.buckets {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>10.4} {:>10.4}",
                b.bucket.name(),
                b.count,
                b.e_v,
                b.rms
            );
        }
        let total: usize = self.buckets.iter().map(|b| b.count).sum();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>10.4} {:>10.4}",
            "overall",
            total,
            self.e_v,
            self.rms()
        );
        s
    }
}

/// Per-bucket mean squared velocity error and their average.
///
/// Every bucket must contain at least one sample; an empty one is an error
/// naming it rather than being dropped from the average.
pub fn e_v(preds: &[Velocity2D], truths: &[Truth], spec: &BucketSpec) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} ground-truth samples",
            preds.len(),
            truths.len()
        )));
    }
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    let mut residuals = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truths) {
        if !p.is_finite() {
            return Err(Error::Numeric(format!("non-finite prediction {p:?}")));
        }
        let bucket = bucketize(t.distance, spec)?;
        let r = t.velocity.sub(p);
        let sq = r.norm_sq();
        sums[bucket.index()] += sq;
        counts[bucket.index()] += 1;
        residuals.push(Residual {
            bucket,
            distance: t.distance,
            dvx: r.vx,
            dvz: r.vz,
            sq_error: sq,
        });
    }
    if let Some(b) = Bucket::ALL.iter().find(|b| counts[b.index()] == 0) {
        return Err(Error::Validation(format!("bucket '{b}' has no samples")));
    }
    let buckets = Bucket::ALL.map(|b| {
        let e = sums[b.index()] / counts[b.index()] as f64;
        BucketError {
            bucket: b,
            count: counts[b.index()],
            e_v: e,
            rms: e.sqrt(),
        }
    });
    let overall = buckets.iter().map(|b| b.e_v).sum::<f64>() / 3.0;
    Ok(EvalReport {
        e_v: overall,
        buckets,
        residuals,
    })
}

/// One method's row in a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub e_v: f64,
    pub near: f64,
    pub medium: f64,
    pub far: f64,
}

const CSV_HEADER: &str = "method,e_v,e_v_near,e_v_medium,e_v_far";

/// Rows sorted by overall error, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(reports: &[(String, EvalReport)]) -> Comparison {
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            method: name.clone(),
            e_v: r.e_v,
            near: r.bucket(Bucket::Near).e_v,
            medium: r.bucket(Bucket::Medium).e_v,
            far: r.bucket(Bucket::Far).e_v,
        })
        .collect();
    rows.sort_by(|a, b| a.e_v.total_cmp(&b.e_v));
    Comparison { rows }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} {:>10} {:>10} {:>10} {:>10}",
            "method", "E_v", "near", "medium", "far"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.method, r.e_v, r.near, r.medium, r.far
            );
        }
        s
    }

    /// CSV with full-precision numbers. Method names must not contain commas
    /// or newlines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.method, r.e_v, r.near, r.medium, r.far);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    context: "comparison csv".into(),
                    line: 1,
                    message: format!("expected header '{CSV_HEADER}'"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let err = |message: String| Error::Parse {
                context: "comparison csv".into(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            rows.push(ComparisonRow {
                method: fields[0].to_string(),
                e_v: num(fields[1])?,
                near: num(fields[2])?,
                medium: num(fields[3])?,
                far: num(fields[4])?,
            });
        }
        Ok(Comparison { rows })
    }
}

/// Reference errors reported for the real benchmark, for display next to
/// local results: (method, E_v, near, medium, far).
pub const REFERENCE_ROWS: [(&str, f64, f64, f64, f64); 2] = [
    ("reference: MLP trained on synthetic tracks", 1.28, 0.17, 0.72, 2.96),
    ("reference: geometric back-projection", 8.5, 0.48, 1.50, 23.60),
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth(vx: f64, vz: f64, d: f64) -> Truth {
        Truth {
            velocity: Velocity2D::new(vx, vz),
            distance: d,
        }
    }

    #[test]
    fn bucket_boundaries() {
        let spec = BucketSpec::default();
        assert_eq!(bucketize(15.0, &spec).unwrap(), Bucket::Near);
        assert_eq!(bucketize(20.0, &spec).unwrap(), Bucket::Medium);
        assert_eq!(bucketize(44.999, &spec).unwrap(), Bucket::Medium);
        assert_eq!(bucketize(45.0, &spec).unwrap(), Bucket::Far);
        assert_eq!(bucketize(60.0, &spec).unwrap(), Bucket::Far);
        assert!(bucketize(0.0, &spec).is_err());
        assert!(bucketize(-3.0, &spec).is_err());
        assert!(BucketSpec::new(30.0, 20.0, DistanceConvention::Euclidean).is_err());
    }

    #[test]
    fn hand_computed_report() {
        let truths = [truth(1.0, 0.0, 10.0), truth(0.0, 2.0, 30.0), truth(2.0, 2.0, 70.0)];
        let preds = [Velocity2D::default(); 3];
        let r = e_v(&preds, &truths, &BucketSpec::default()).unwrap();
        assert_eq!(r.bucket(Bucket::Near).e_v, 1.0);
        assert_eq!(r.bucket(Bucket::Medium).e_v, 4.0);
        assert_eq!(r.bucket(Bucket::Far).e_v, 8.0);
        assert_eq!(r.e_v, 13.0 / 3.0);
    }

    #[test]
    fn perfect_predictions() {
        let truths = [truth(1.0, -3.0, 10.0), truth(0.5, 2.0, 30.0), truth(-2.0, 2.0, 70.0)];
        let preds: Vec<Velocity2D> = truths.iter().map(|t| t.velocity).collect();
        let r = e_v(&preds, &truths, &BucketSpec::default()).unwrap();
        assert_eq!(r.e_v, 0.0);
        assert!(r.buckets.iter().all(|b| b.e_v == 0.0));
    }

    #[test]
    fn unweighted_average_over_buckets() {
        let mut truths = vec![truth(1.0, 0.0, 10.0); 9];
        truths.push(truth(3.0, 0.0, 30.0));
        truths.push(truth(0.0, 0.0, 50.0));
        let preds = vec![Velocity2D::default(); truths.len()];
        let r = e_v(&preds, &truths, &BucketSpec::default()).unwrap();
        assert_eq!(r.e_v, (1.0 + 9.0 + 0.0) / 3.0);
    }

    #[test]
    fn empty_bucket_is_named() {
        let truths = [truth(1.0, 0.0, 10.0), truth(0.0, 2.0, 70.0)];
        let err = e_v(&[Velocity2D::default(); 2], &truths, &BucketSpec::default()).unwrap_err();
        assert!(err.to_string().contains("'medium'"), "{err}");
    }

    fn report(n: f64, m: f64, f: f64) -> EvalReport {
        let truths = [
            truth(n.sqrt(), 0.0, 10.0),
            truth(m.sqrt(), 0.0, 30.0),
            truth(f.sqrt(), 0.0, 70.0),
        ];
        e_v(&[Velocity2D::default(); 3], &truths, &BucketSpec::default()).unwrap()
    }

    #[test]
    fn comparison_table() {
        let single = compare(&[("only".into(), report(1.0, 2.0, 3.0))]);
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.to_text().lines().count(), 2);

        let c = compare(&[
            ("worse".into(), report(5.0, 5.0, 5.0)),
            ("better".into(), report(0.1, 0.3, 1.0 / 3.0)),
        ]);
        assert_eq!(c.rows[0].method, "better");
        assert_eq!(Comparison::from_csv(&c.to_csv()).unwrap(), c);
    }

    #[test]
    fn report_json_round_trip() {
        let r = report(1.0, 4.0, 8.0);
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("overall"));
    }

    fn case() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, f64)>> {
        proptest::collection::vec(
            (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, 1.0f64..90.0),
            3..40,
        )
        .prop_map(|mut v| {
            v[0].4 = 10.0;
            v[1].4 = 30.0;
            v[2].4 = 70.0;
            v
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(rows in case(), rot in 0usize..40) {
            let truths: Vec<Truth> = rows.iter().map(|r| truth(r.0, r.1, r.4)).collect();
            let preds: Vec<Velocity2D> = rows.iter().map(|r| Velocity2D::new(r.2, r.3)).collect();
            let a = e_v(&preds, &truths, &BucketSpec::default()).unwrap();
            let k = rot % rows.len();
            let mut t2 = truths.clone();
            let mut p2 = preds.clone();
            t2.rotate_left(k);
            p2.rotate_left(k);
            t2.reverse();
            p2.reverse();
            let b = e_v(&p2, &t2, &BucketSpec::default()).unwrap();
            prop_assert!((a.e_v - b.e_v).abs() <= 1e-12 * (1.0 + a.e_v));
            for bk in Bucket::ALL {
                prop_assert!((a.bucket(bk).e_v - b.bucket(bk).e_v).abs() <= 1e-12 * (1.0 + a.bucket(bk).e_v));
            }
        }

        #[test]
        fn quadratic_in_residual_scale(rows in case(), c in -4.0f64..4.0) {
            let truths: Vec<Truth> = rows.iter().map(|r| truth(r.0, r.1, r.4)).collect();
            let scaled: Vec<Truth> = rows.iter().map(|r| truth(c * r.0, c * r.1, r.4)).collect();
            let zero = vec![Velocity2D::default(); rows.len()];
            let a = e_v(&zero, &truths, &BucketSpec::default()).unwrap();
            let b = e_v(&zero, &scaled, &BucketSpec::default()).unwrap();
            for bk in Bucket::ALL {
                let want = c * c * a.bucket(bk).e_v;
                prop_assert!((b.bucket(bk).e_v - want).abs() <= 1e-9 * (1.0 + want));
            }
        }
    }
}
