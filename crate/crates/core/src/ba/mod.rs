//! Confidence-weighted reprojection bundle adjustment.
//!
//! Each observation carries a weight in `[0, 1]` that scales its information
//! matrix (`weight * I2`), so the objective is
//! `1/2 * sum_k weight_k * |U_k - pi(K, T, P_k)|^2`.

mod io;
mod solver;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

pub use io::{read_problem, write_problem};
pub use solver::{
    cost_gradient, residual, solve, weighted_cost, CostGradient, SolveOptions, SolveReport,
    Termination,
};

use crate::error::BaError;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::probmap::ProbabilityMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub frame_id: u64,
    pub landmark_id: u64,
    /// Measured pixel.
    pub pixel: Vector2<f64>,
    /// Confidence in `[0, 1]`; scales the residual's information.
    pub weight: f64,
}

impl Observation {
    pub fn new(frame_id: u64, landmark_id: u64, pixel: Vector2<f64>, weight: f64) -> Self {
        Self {
            frame_id,
            landmark_id,
            pixel,
            weight,
        }
    }
}

/// Poses, landmarks and weighted observations.
///
/// Poses map world to camera. A frame may carry a timestamp so solved
/// trajectories can be written out in TUM format.
#[derive(Clone, Debug, PartialEq)]
pub struct BaProblem {
    intrinsics: CameraIntrinsics,
    poses: BTreeMap<u64, Pose>,
    timestamps: BTreeMap<u64, f64>,
    fixed_poses: BTreeSet<u64>,
    landmarks: BTreeMap<u64, Vector3<f64>>,
    fixed_landmarks: BTreeSet<u64>,
    observations: Vec<Observation>,
    observed_pairs: BTreeSet<(u64, u64)>,
}

impl BaProblem {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            poses: BTreeMap::new(),
            timestamps: BTreeMap::new(),
            fixed_poses: BTreeSet::new(),
            landmarks: BTreeMap::new(),
            fixed_landmarks: BTreeSet::new(),
            observations: Vec::new(),
            observed_pairs: BTreeSet::new(),
        }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn add_pose(&mut self, frame_id: u64, pose: Pose) -> Result<(), BaError> {
        if self.poses.insert(frame_id, pose).is_some() {
            return Err(BaError::DuplicateId {
                kind: "pose",
                id: frame_id,
            });
        }
        Ok(())
    }

    pub fn add_landmark(&mut self, landmark: Landmark) -> Result<(), BaError> {
        if self.landmarks.insert(landmark.id, landmark.position).is_some() {
            return Err(BaError::DuplicateId {
                kind: "landmark",
                id: landmark.id,
            });
        }
        Ok(())
    }

    pub fn add_observation(&mut self, obs: Observation) -> Result<(), BaError> {
        if !(0.0..=1.0).contains(&obs.weight) {
            return Err(BaError::InvalidWeight(obs.weight));
        }
        if !self.poses.contains_key(&obs.frame_id) {
            return Err(BaError::MissingPose(obs.frame_id));
        }
        if !self.landmarks.contains_key(&obs.landmark_id) {
            return Err(BaError::MissingLandmark(obs.landmark_id));
        }
        if !self.observed_pairs.insert((obs.frame_id, obs.landmark_id)) {
            return Err(BaError::DuplicateObservation {
                frame_id: obs.frame_id,
                landmark_id: obs.landmark_id,
            });
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn set_timestamp(&mut self, frame_id: u64, timestamp: f64) -> Result<(), BaError> {
        if !self.poses.contains_key(&frame_id) {
            return Err(BaError::MissingPose(frame_id));
        }
        self.timestamps.insert(frame_id, timestamp);
        Ok(())
    }

    /// Timestamp of a frame; falls back to the frame id in seconds.
    pub fn timestamp(&self, frame_id: u64) -> f64 {
        self.timestamps
            .get(&frame_id)
            .copied()
            .unwrap_or(frame_id as f64)
    }

    pub fn has_timestamp(&self, frame_id: u64) -> bool {
        self.timestamps.contains_key(&frame_id)
    }

    pub fn set_pose_fixed(&mut self, frame_id: u64, fixed: bool) {
        if fixed {
            self.fixed_poses.insert(frame_id);
        } else {
            self.fixed_poses.remove(&frame_id);
        }
    }

    pub fn set_landmark_fixed(&mut self, landmark_id: u64, fixed: bool) {
        if fixed {
            self.fixed_landmarks.insert(landmark_id);
        } else {
            self.fixed_landmarks.remove(&landmark_id);
        }
    }

    /// Switches to motion-only adjustment.
    pub fn fix_all_landmarks(&mut self) {
        self.fixed_landmarks = self.landmarks.keys().copied().collect();
    }

    pub fn is_pose_fixed(&self, frame_id: u64) -> bool {
        self.fixed_poses.contains(&frame_id)
    }

    pub fn is_landmark_fixed(&self, landmark_id: u64) -> bool {
        self.fixed_landmarks.contains(&landmark_id)
    }

    pub fn is_pose_only(&self) -> bool {
        self.landmarks.keys().all(|id| self.fixed_landmarks.contains(id))
    }

    pub fn pose(&self, frame_id: u64) -> Option<&Pose> {
        self.poses.get(&frame_id)
    }

    pub fn set_pose(&mut self, frame_id: u64, pose: Pose) -> Result<(), BaError> {
        match self.poses.get_mut(&frame_id) {
            Some(p) => {
                *p = pose;
                Ok(())
            }
            None => Err(BaError::MissingPose(frame_id)),
        }
    }

    pub fn poses(&self) -> &BTreeMap<u64, Pose> {
        &self.poses
    }

    pub fn landmark(&self, id: u64) -> Option<&Vector3<f64>> {
        self.landmarks.get(&id)
    }

    pub fn landmarks(&self) -> &BTreeMap<u64, Vector3<f64>> {
        &self.landmarks
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.poses.keys().copied()
    }

    /// Same problem with every weight set to one.
    pub fn with_uniform_weights(&self) -> Self {
        self.map_weights(|_| 1.0)
    }

    /// Same problem with every weight transformed by `f`.
    pub fn map_weights(&self, f: impl Fn(&Observation) -> f64) -> Self {
        let mut out = self.clone();
        for obs in &mut out.observations {
            obs.weight = f(obs);
        }
        out
    }

    /// Removes one observation, if present.
    pub fn without_observation(&self, frame_id: u64, landmark_id: u64) -> Self {
        let mut out = self.clone();
        out.observations
            .retain(|o| !(o.frame_id == frame_id && o.landmark_id == landmark_id));
        out.observed_pairs.remove(&(frame_id, landmark_id));
        out
    }

    /// One frame with its observations and the landmarks they reference.
    /// Fixed flags and the timestamp are carried over.
    pub fn frame_subproblem(&self, frame_id: u64) -> Result<Self, BaError> {
        let pose = *self.poses.get(&frame_id).ok_or(BaError::MissingPose(frame_id))?;
        let mut sub = BaProblem::new(self.intrinsics);
        sub.add_pose(frame_id, pose)?;
        if let Some(&t) = self.timestamps.get(&frame_id) {
            sub.timestamps.insert(frame_id, t);
        }
        sub.set_pose_fixed(frame_id, self.is_pose_fixed(frame_id));
        for obs in self.observations.iter().filter(|o| o.frame_id == frame_id) {
            if !sub.landmarks.contains_key(&obs.landmark_id) {
                sub.add_landmark(Landmark {
                    id: obs.landmark_id,
                    position: self.landmarks[&obs.landmark_id],
                })?;
                sub.set_landmark_fixed(obs.landmark_id, self.is_landmark_fixed(obs.landmark_id));
            }
            sub.add_observation(*obs)?;
        }
        Ok(sub)
    }

    pub(crate) fn landmark_mut(&mut self, id: u64) -> Option<&mut Vector3<f64>> {
        self.landmarks.get_mut(&id)
    }

    pub(crate) fn timestamps(&self) -> &BTreeMap<u64, f64> {
        &self.timestamps
    }
}

/// Sets each observation's weight from its frame's confidence map by
/// nearest-pixel lookup.
pub fn attach_weights(
    problem: &BaProblem,
    maps: &BTreeMap<u64, ProbabilityMap>,
) -> Result<BaProblem, BaError> {
    let k = problem.intrinsics();
    for (&frame_id, map) in maps {
        if problem.poses.contains_key(&frame_id) && (map.width(), map.height()) != (k.width, k.height) {
            return Err(BaError::DimensionMismatch {
                frame_id,
                width: k.width,
                height: k.height,
                got_width: map.width(),
                got_height: map.height(),
            });
        }
    }
    let mut out = problem.clone();
    for obs in &mut out.observations {
        let map = maps.get(&obs.frame_id).ok_or(BaError::MissingMap(obs.frame_id))?;
        obs.weight = map.sample(&obs.pixel);
    }
    Ok(out)
}
