//! JSONL record streams.
//!
//! A track record is one JSON object per line:
//!
//! ```text
//! {"id": "syn-000000", "fps": 20.0, "boxes": [[x, y, w, h], ...],
//!  "velocity": [vx, vz], "distance": d}
//! ```
//!
//! `velocity` and `distance` are present only on labeled samples. Box
//! coordinates are absolute pixels with the origin at the top-left corner of
//! the image. Predictions use `{"id": ..., "velocity": [vx, vz]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::geometry::Velocity2D;
use crate::synth::LabeledSample;
use crate::track::{BBox, Track};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub fps: f64,
    pub boxes: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl TrackRecord {
    pub fn from_track(id: impl Into<String>, track: &Track) -> Self {
        TrackRecord {
            id: id.into(),
            fps: track.fps(),
            boxes: track.boxes().iter().map(|b| b.to_array()).collect(),
            velocity: None,
            distance: None,
        }
    }

    pub fn from_sample(s: &LabeledSample) -> Self {
        TrackRecord {
            velocity: Some([s.velocity.vx, s.velocity.vz]),
            distance: Some(s.distance),
            ..TrackRecord::from_track(s.id.clone(), &s.track)
        }
    }

    pub fn to_track(&self) -> Result<Track> {
        let boxes = self
            .boxes
            .iter()
            .map(|&a| BBox::from_array(a))
            .collect::<Result<Vec<_>>>()?;
        Track::new(boxes, self.fps)
    }

    pub fn to_sample(&self) -> Result<LabeledSample> {
        let track = self.to_track()?;
        let [vx, vz] = self
            .velocity
            .ok_or_else(|| Error::Validation(format!("record {} has no velocity label", self.id)))?;
        let distance = self
            .distance
            .ok_or_else(|| Error::Validation(format!("record {} has no distance label", self.id)))?;
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::Validation(format!(
                "record {} has non-positive distance {distance}",
                self.id
            )));
        }
        Ok(LabeledSample {
            id: self.id.clone(),
            track,
            velocity: Velocity2D::new(vx, vz),
            distance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub velocity: [f64; 2],
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, v: Velocity2D) -> Self {
        PredictionRecord {
            id: id.into(),
            velocity: [v.vx, v.vz],
        }
    }

    pub fn velocity(&self) -> Velocity2D {
        Velocity2D::new(self.velocity[0], self.velocity[1])
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

/// A record that could not be read, with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFailure {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)>> {
    let owned = path.to_path_buf();
    Ok(open(path)?
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(&owned, e))))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty())))
}

/// Reads every non-blank line, failing on the first malformed one.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line, text) in lines(path)? {
        let item = serde_json::from_str(&text?).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Reads labeled samples; any malformed or unlabeled record is an error
/// citing its line.
pub fn read_samples(path: &Path) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (line, text) in lines(path)? {
        let parsed = serde_json::from_str::<TrackRecord>(&text?)
            .map_err(Error::from)
            .and_then(|r| r.to_sample());
        out.push(parsed.map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads track records, collecting per-record failures instead of stopping.
/// I/O errors are still fatal.
pub fn read_tracks_lenient(path: &Path) -> Result<(Vec<(String, Track)>, Vec<RecordFailure>)> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (line, text) in lines(path)? {
        let text = text?;
        let value: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                failed.push(RecordFailure {
                    line,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let id = value.get("id").map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
        let parsed = serde_json::from_value::<TrackRecord>(value)
            .map_err(Error::from)
            .and_then(|r| r.to_track().map(|t| (r.id, t)));
        match parsed {
            Ok(pair) => ok.push(pair),
            Err(e) => failed.push(RecordFailure {
                line,
                id,
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, failed))
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_samples(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let records: Vec<TrackRecord> = samples.iter().map(TrackRecord::from_sample).collect();
    write_jsonl(path, &records)
}

/// Reads a single JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes a single pretty-printed JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
