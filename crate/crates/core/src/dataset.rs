//! TUM trajectories, detection files and timestamp association.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::geometry::Pose;
use crate::probmap::{BoundingBox, Detection};

/// Default association window (seconds).
pub const DEFAULT_MAX_DT: f64 = 0.02;

// Quaternions further than this from unit norm are rejected on load.
const MAX_QUATERNION_DEVIATION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<TimedPose>) -> Result<Self, DatasetError> {
        let mut t = Self::new();
        for (i, e) in entries.into_iter().enumerate() {
            t.push(e.timestamp, e.pose).map_err(|err| match err {
                DatasetError::NonMonotonicTimestamps { timestamp, .. } => {
                    DatasetError::NonMonotonicTimestamps { line: i + 1, timestamp }
                }
                other => other,
            })?;
        }
        Ok(t)
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<(), DatasetError> {
        let increasing = self.entries.last().map_or(true, |last| timestamp > last.timestamp);
        if !increasing || !timestamp.is_finite() {
            return Err(DatasetError::NonMonotonicTimestamps {
                line: self.entries.len() + 1,
                timestamp,
            });
        }
        self.entries.push(TimedPose { timestamp, pose });
        Ok(())
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.timestamp).collect()
    }

    /// Applies `transform * pose` to every entry.
    pub fn transformed(&self, transform: &Pose) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| TimedPose {
                    timestamp: e.timestamp,
                    pose: transform.compose(&e.pose),
                })
                .collect(),
        }
    }
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines.
pub fn read_tum_trajectory(text: &str) -> Result<Trajectory, DatasetError> {
    let mut traj = Trajectory::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 8];
        for (slot, s) in v.iter_mut().zip(&fields) {
            *slot = s.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| DatasetError::Parse {
                line,
                message: format!("invalid number {s:?}"),
            })?;
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = v;
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > MAX_QUATERNION_DEVIATION {
            return Err(DatasetError::QuaternionNorm { line, norm });
        }
        let pose = Pose::from_wxyz(qw, qx, qy, qz, Vector3::new(tx, ty, tz))
            .map_err(|e| DatasetError::Parse { line, message: e.to_string() })?;
        traj.push(t, pose).map_err(|_| DatasetError::NonMonotonicTimestamps { line, timestamp: t })?;
    }
    Ok(traj)
}

pub fn write_tum_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for e in traj.entries() {
        let t = e.pose.translation();
        let [w, x, y, z] = e.pose.wxyz();
        let _ = writeln!(
            out,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            e.timestamp, t.x, t.y, t.z, x, y, z, w
        );
    }
    out
}

/// Detections produced for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionFrame {
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: f64,
    w: u32,
    h: u32,
    dets: Vec<DetectionRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    label: String,
    cx: f64,
    cy: f64,
    hw: f64,
    hh: f64,
    score: f64,
    #[serde(rename = "static")]
    is_static: bool,
}

/// Parses one JSON frame object per non-blank line.
pub fn read_detections(text: &str) -> Result<Vec<DetectionFrame>, DatasetError> {
    let mut frames = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(raw).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.w == 0 || record.h == 0 || !record.t.is_finite() {
            return Err(DatasetError::Parse {
                line,
                message: "image size must be positive and time finite".into(),
            });
        }
        let detections = record
            .dets
            .into_iter()
            .map(|d| {
                let bbox = BoundingBox::new(Vector2::new(d.cx, d.cy), d.hw, d.hh)
                    .map_err(|source| DatasetError::InvalidBox { line, source })?;
                Detection::new(d.label, bbox, d.score, d.is_static).map_err(|e| DatasetError::Parse {
                    line,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(DetectionFrame {
            timestamp: record.t,
            width: record.w,
            height: record.h,
            detections,
        });
    }
    Ok(frames)
}

pub fn write_detections(frames: &[DetectionFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let record = FrameRecord {
            t: f.timestamp,
            w: f.width,
            h: f.height,
            dets: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    label: d.label.clone(),
                    cx: d.bbox.center().x,
                    cy: d.bbox.center().y,
                    hw: d.bbox.half_width(),
                    hh: d.bbox.half_height(),
                    score: d.detector_score,
                    is_static: d.is_static,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

/// Greedy nearest-timestamp matching of two sorted timestamp lists.
///
/// Candidate pairs within `max_dt` are visited by increasing `|dt|` (ties by
/// index) and kept when neither side is taken yet. Result is sorted by the
/// first index.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let start = b.partition_point(|&tb| tb < ta - max_dt);
        for (j, &tb) in b.iter().enumerate().skip(start) {
            if tb > ta + max_dt {
                break;
            }
            let dt = (ta - tb).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn associate(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    associate_timestamps(&a.timestamps(), &b.timestamps(), max_dt)
}
