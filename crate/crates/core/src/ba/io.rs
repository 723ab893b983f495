//! Line-oriented text form of a [`BaProblem`].
//!
//! ```text
//! # comment
//! CAMERA fx fy cx cy width height
//! STAMP frame_id seconds
//! POSE frame_id qw qx qy qz tx ty tz [FIXED]
//! LM landmark_id x y z [FIXED]
//! OBS frame_id landmark_id u v weight
//! ```
//!
//! `CAMERA` must come first. Reals are written with nine significant digits,
//! timestamps with six decimals. `STAMP` lines are optional.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};

use super::{BaProblem, Landmark, Observation};
use crate::error::BaError;
use crate::fmt::sig9;
use crate::geometry::{CameraIntrinsics, Pose};

pub fn write_problem(problem: &BaProblem) -> String {
    let mut out = String::new();
    let k = problem.intrinsics();
    out.push_str("# bundle adjustment problem\n");
    let _ = writeln!(
        out,
        "CAMERA {} {} {} {} {} {}",
        sig9(k.fx),
        sig9(k.fy),
        sig9(k.cx),
        sig9(k.cy),
        k.width,
        k.height
    );
    for (&id, t) in problem.timestamps() {
        let _ = writeln!(out, "STAMP {id} {t:.6}");
    }
    for (&id, pose) in problem.poses() {
        let [w, x, y, z] = pose.wxyz();
        let t = pose.translation();
        let _ = write!(
            out,
            "POSE {id} {} {} {} {} {} {} {}",
            sig9(w),
            sig9(x),
            sig9(y),
            sig9(z),
            sig9(t.x),
            sig9(t.y),
            sig9(t.z)
        );
        out.push_str(if problem.is_pose_fixed(id) { " FIXED\n" } else { "\n" });
    }
    for (&id, p) in problem.landmarks() {
        let _ = write!(out, "LM {id} {} {} {}", sig9(p.x), sig9(p.y), sig9(p.z));
        out.push_str(if problem.is_landmark_fixed(id) { " FIXED\n" } else { "\n" });
    }
    for o in problem.observations() {
        let _ = writeln!(
            out,
            "OBS {} {} {} {} {}",
            o.frame_id,
            o.landmark_id,
            sig9(o.pixel.x),
            sig9(o.pixel.y),
            sig9(o.weight)
        );
    }
    out
}

pub fn read_problem(text: &str) -> Result<BaProblem, BaError> {
    let mut problem: Option<BaProblem> = None;
    let mut stamps = Vec::new();
    let mut observations = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |message: String| BaError::Parse { line, message };
        let real = |i: usize| -> Result<f64, BaError> {
            let s = fields.get(i).ok_or_else(|| err(format!("missing field {}", i + 1)))?;
            let v: f64 = s.parse().map_err(|_| err(format!("invalid number {s:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite number {s:?}")));
            }
            Ok(v)
        };
        let int = |i: usize| -> Result<u64, BaError> {
            let s = fields.get(i).ok_or_else(|| err(format!("missing field {}", i + 1)))?;
            s.parse().map_err(|_| err(format!("invalid integer {s:?}")))
        };
        let fixed_flag = |n: usize| -> Result<bool, BaError> {
            match fields.len() {
                l if l == n => Ok(false),
                l if l == n + 1 && fields[n] == "FIXED" => Ok(true),
                _ => Err(err(format!("expected {n} fields, optionally followed by FIXED"))),
            }
        };
        let exact = |n: usize| -> Result<(), BaError> {
            if fields.len() == n {
                Ok(())
            } else {
                Err(err(format!("expected {n} fields, found {}", fields.len())))
            }
        };

        if fields[0] == "CAMERA" {
            if problem.is_some() {
                return Err(err("repeated CAMERA line".into()));
            }
            exact(7)?;
            let dim = |i: usize| -> Result<u32, BaError> {
                u32::try_from(int(i)?).map_err(|_| err("image size out of range".into()))
            };
            let k = CameraIntrinsics::new(real(1)?, real(2)?, real(3)?, real(4)?, dim(5)?, dim(6)?)
                .map_err(|e| err(e.to_string()))?;
            problem = Some(BaProblem::new(k));
            continue;
        }
        let Some(p) = problem.as_mut() else {
            return Err(err("CAMERA line must come first".into()));
        };
        match fields[0] {
            "STAMP" => {
                exact(3)?;
                stamps.push((line, int(1)?, real(2)?));
            }
            "POSE" => {
                let fixed = fixed_flag(9)?;
                let id = int(1)?;
                let pose = Pose::from_wxyz(
                    real(2)?,
                    real(3)?,
                    real(4)?,
                    real(5)?,
                    Vector3::new(real(6)?, real(7)?, real(8)?),
                )
                .map_err(|e| err(e.to_string()))?;
                p.add_pose(id, pose).map_err(|e| err(e.to_string()))?;
                p.set_pose_fixed(id, fixed);
            }
            "LM" => {
                let fixed = fixed_flag(5)?;
                let id = int(1)?;
                let position = Vector3::new(real(2)?, real(3)?, real(4)?);
                p.add_landmark(Landmark { id, position }).map_err(|e| err(e.to_string()))?;
                p.set_landmark_fixed(id, fixed);
            }
            "OBS" => {
                exact(6)?;
                let obs = Observation::new(int(1)?, int(2)?, Vector2::new(real(3)?, real(4)?), real(5)?);
                observations.push((line, obs));
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }

    let mut problem = problem.ok_or(BaError::Parse {
        line: 0,
        message: "missing CAMERA line".into(),
    })?;
    for (line, id, t) in stamps {
        problem
            .set_timestamp(id, t)
            .map_err(|e| BaError::Parse { line, message: e.to_string() })?;
    }
    for (line, obs) in observations {
        problem
            .add_observation(obs)
            .map_err(|e| BaError::Parse { line, message: e.to_string() })?;
    }
    Ok(problem)
}
