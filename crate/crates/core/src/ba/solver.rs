//! Levenberg-Marquardt over left-multiplied pose twists and landmark offsets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, Vector2, Vector3, Vector6};

use super::{BaProblem, Observation};
use crate::error::{BaError, GeometryError};
use crate::geometry::{skew, Twist, MIN_DEPTH};

// Damping schedule.
const LAMBDA_DECREASE: f64 = 0.5;
const LAMBDA_INCREASE: f64 = 4.0;
const LAMBDA_MAX: f64 = 1e12;
// An accepted step that improves the cost by less than this fraction ends the solve.
const STALL_RELATIVE: f64 = 1e-15;
// Bearings closer than this (1 - cos) count as the same direction.
const SAME_DIRECTION: f64 = 1e-12;

pub const MIN_OBSERVATIONS_PER_POSE: usize = 6;
pub const MIN_DIRECTIONS_PER_POSE: usize = 4;
pub const MIN_OBSERVATIONS_PER_LANDMARK: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Infinity norm of the weighted gradient `J^T W r`.
    pub gradient_tol: f64,
    /// Norm of the stacked increment.
    pub step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientSmall,
    StepSmall,
    MaxIterations,
    CostStalled,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::GradientSmall => "gradient_small",
            Termination::StepSmall => "step_small",
            Termination::MaxIterations => "max_iterations",
            Termination::CostStalled => "cost_stalled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Observations behind the camera at the final estimate.
    pub skipped_observations: usize,
    /// Frame held fixed to remove the gauge freedom of a full adjustment.
    pub anchored_frame: Option<u64>,
}

/// Reprojection residual `U - pi(K, T, P)` of one observation.
pub fn residual(problem: &BaProblem, obs: &Observation) -> Result<Vector2<f64>, BaError> {
    let pose = problem.pose(obs.frame_id).ok_or(BaError::MissingPose(obs.frame_id))?;
    let point = problem
        .landmark(obs.landmark_id)
        .ok_or(BaError::MissingLandmark(obs.landmark_id))?;
    let pc = pose.transform_point(point);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z }.into());
    }
    Ok(obs.pixel - problem.intrinsics().project_camera_point(&pc))
}

/// `1/2 * sum weight * |r|^2` over observations with positive depth.
pub fn weighted_cost(problem: &BaProblem) -> f64 {
    problem
        .observations()
        .iter()
        .filter_map(|obs| residual(problem, obs).ok().map(|r| 0.5 * obs.weight * r.norm_squared()))
        .sum()
}

/// Gradient of [`weighted_cost`] with respect to every pose twist (left
/// perturbation) and every landmark position, fixed or not.
#[derive(Clone, Debug, PartialEq)]
pub struct CostGradient {
    pub poses: BTreeMap<u64, Vector6<f64>>,
    pub landmarks: BTreeMap<u64, Vector3<f64>>,
}

pub fn cost_gradient(problem: &BaProblem) -> CostGradient {
    let mut poses: BTreeMap<u64, Vector6<f64>> =
        problem.frame_ids().map(|id| (id, Vector6::zeros())).collect();
    let mut landmarks: BTreeMap<u64, Vector3<f64>> =
        problem.landmarks().keys().map(|&id| (id, Vector3::zeros())).collect();
    for obs in problem.observations() {
        if let Some(lin) = linearize_observation(problem, obs) {
            let wr = lin.residual * obs.weight;
            *poses.get_mut(&obs.frame_id).unwrap() += lin.d_pose.transpose() * wr;
            *landmarks.get_mut(&obs.landmark_id).unwrap() += lin.d_landmark.transpose() * wr;
        }
    }
    CostGradient { poses, landmarks }
}

struct Linearization {
    residual: Vector2<f64>,
    /// d residual / d (rotation, translation) twist
    d_pose: SMatrix<f64, 2, 6>,
    /// d residual / d landmark
    d_landmark: Matrix2x3<f64>,
}

fn linearize_observation(problem: &BaProblem, obs: &Observation) -> Option<Linearization> {
    let pose = problem.pose(obs.frame_id)?;
    let point = problem.landmark(obs.landmark_id)?;
    let pc = pose.transform_point(point);
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let k = problem.intrinsics();
    let inv_z = 1.0 / pc.z;
    let inv_z2 = inv_z * inv_z;
    // d pixel / d camera point
    let d_pix = Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * pc.x * inv_z2,
        0.0,
        k.fy * inv_z,
        -k.fy * pc.y * inv_z2,
    );
    // d(exp(delta) * pc) = -[pc]x d_rot + d_trans; the residual subtracts the prediction.
    let mut d_pose = SMatrix::<f64, 2, 6>::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_pix * skew(&pc)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-d_pix));
    let d_landmark = -(d_pix * pose.rotation_matrix());
    Some(Linearization {
        residual: obs.pixel - k.project_camera_point(&pc),
        d_pose,
        d_landmark,
    })
}

// Column offsets of the free parameters in the stacked state.
struct Layout {
    poses: BTreeMap<u64, usize>,
    landmarks: BTreeMap<u64, usize>,
    dim: usize,
}

impl Layout {
    fn new(problem: &BaProblem, anchored: Option<u64>) -> Self {
        let mut dim = 0;
        let mut poses = BTreeMap::new();
        for id in problem.frame_ids() {
            if !problem.is_pose_fixed(id) && Some(id) != anchored {
                poses.insert(id, dim);
                dim += 6;
            }
        }
        let mut landmarks = BTreeMap::new();
        for &id in problem.landmarks().keys() {
            if !problem.is_landmark_fixed(id) {
                landmarks.insert(id, dim);
                dim += 3;
            }
        }
        Self {
            poses,
            landmarks,
            dim,
        }
    }
}

struct NormalEquations {
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
    cost: f64,
}

fn build_normal_equations(problem: &BaProblem, layout: &Layout) -> NormalEquations {
    let n = layout.dim;
    let mut hessian = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    let mut cost = 0.0;
    // Accumulated strictly in observation order.
    for obs in problem.observations() {
        let Some(lin) = linearize_observation(problem, obs) else {
            continue;
        };
        let w = obs.weight;
        cost += 0.5 * w * lin.residual.norm_squared();
        let pose_col = layout.poses.get(&obs.frame_id).copied();
        let lm_col = layout.landmarks.get(&obs.landmark_id).copied();
        let wr = lin.residual * w;
        if let Some(p) = pose_col {
            let jt = lin.d_pose.transpose();
            let mut block = hessian.view_mut((p, p), (6, 6));
            block += jt * lin.d_pose * w;
            let mut g = gradient.rows_mut(p, 6);
            g += jt * wr;
        }
        if let Some(l) = lm_col {
            let jt = lin.d_landmark.transpose();
            let mut block = hessian.view_mut((l, l), (3, 3));
            block += jt * lin.d_landmark * w;
            let mut g = gradient.rows_mut(l, 3);
            g += jt * wr;
        }
        if let (Some(p), Some(l)) = (pose_col, lm_col) {
            let cross = lin.d_pose.transpose() * lin.d_landmark * w;
            let mut upper = hessian.view_mut((p, l), (6, 3));
            upper += cross;
            let mut lower = hessian.view_mut((l, p), (3, 6));
            lower += cross.transpose();
        }
    }
    NormalEquations {
        hessian,
        gradient,
        cost,
    }
}

fn apply_step(problem: &BaProblem, layout: &Layout, step: &DVector<f64>) -> BaProblem {
    let mut out = problem.clone();
    for (&id, &col) in &layout.poses {
        let delta = Twist::from_slice(step.rows(col, 6).as_slice());
        let updated = problem.pose(id).expect("layout pose").retract(&delta);
        out.set_pose(id, updated).expect("layout pose");
    }
    for (&id, &col) in &layout.landmarks {
        let p = out.landmark_mut(id).expect("layout landmark");
        *p += Vector3::new(step[col], step[col + 1], step[col + 2]);
    }
    out
}

fn check_determined(problem: &BaProblem, anchored: Option<u64>) -> Result<(), BaError> {
    let free_poses: Vec<u64> = problem
        .frame_ids()
        .filter(|&id| !problem.is_pose_fixed(id) && Some(id) != anchored)
        .collect();
    if free_poses.is_empty() {
        return Err(BaError::NoFreePose);
    }
    for frame_id in free_poses {
        let pose = problem.pose(frame_id).expect("frame id from problem");
        let mut count = 0;
        let mut directions: Vec<Vector3<f64>> = Vec::new();
        for obs in problem.observations().iter().filter(|o| o.frame_id == frame_id && o.weight > 0.0) {
            let pc = pose.transform_point(&problem.landmarks()[&obs.landmark_id]);
            if pc.z <= MIN_DEPTH {
                continue;
            }
            count += 1;
            let bearing = pc.normalize();
            if directions.iter().all(|d| 1.0 - d.dot(&bearing) > SAME_DIRECTION) {
                directions.push(bearing);
            }
        }
        if count < MIN_OBSERVATIONS_PER_POSE || directions.len() < MIN_DIRECTIONS_PER_POSE {
            return Err(BaError::Underdetermined(format!(
                "frame {frame_id} has {count} usable observations in {} distinct directions \
                 (need {MIN_OBSERVATIONS_PER_POSE} in {MIN_DIRECTIONS_PER_POSE})",
                directions.len()
            )));
        }
    }
    for &id in problem.landmarks().keys().filter(|&&id| !problem.is_landmark_fixed(id)) {
        let count = problem
            .observations()
            .iter()
            .filter(|o| o.landmark_id == id && o.weight > 0.0)
            .count();
        if count < MIN_OBSERVATIONS_PER_LANDMARK {
            return Err(BaError::Underdetermined(format!(
                "landmark {id} has {count} weighted observations (need {MIN_OBSERVATIONS_PER_LANDMARK})"
            )));
        }
    }
    Ok(())
}

/// Minimizes the weighted reprojection cost.
///
/// With every landmark fixed this is motion-only adjustment. Otherwise, if
/// no pose is marked fixed, the lowest frame id is held fixed for the solve.
/// Damping is Marquardt-style (`lambda * diag(H)`), so uniformly rescaling
/// the weights leaves every step unchanged.
pub fn solve(problem: &BaProblem, options: &SolveOptions) -> Result<(BaProblem, SolveReport), BaError> {
    let anchored = if !problem.is_pose_only() && problem.frame_ids().all(|id| !problem.is_pose_fixed(id)) {
        problem.frame_ids().next()
    } else {
        None
    };
    check_determined(problem, anchored)?;
    let layout = Layout::new(problem, anchored);

    let mut state = problem.clone();
    let mut lambda = options.initial_lambda;
    let mut normal = build_normal_equations(&state, &layout);
    let initial_cost = normal.cost;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < options.max_iterations {
        if normal.gradient.amax() < options.gradient_tol {
            termination = Termination::GradientSmall;
            break;
        }
        let diag_floor = 1e-12;
        loop {
            let mut damped = normal.hessian.clone();
            for i in 0..layout.dim {
                damped[(i, i)] += lambda * normal.hessian[(i, i)].max(diag_floor);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&normal.gradient)));
            if let Some(step) = step {
                if step.norm() < options.step_tol {
                    termination = Termination::StepSmall;
                    break 'outer;
                }
                let candidate = apply_step(&state, &layout, &step);
                let candidate_normal = build_normal_equations(&candidate, &layout);
                if candidate_normal.cost < normal.cost {
                    let decrease = normal.cost - candidate_normal.cost;
                    let stalled = decrease <= STALL_RELATIVE * normal.cost;
                    state = candidate;
                    normal = candidate_normal;
                    lambda *= LAMBDA_DECREASE;
                    iterations += 1;
                    if stalled {
                        termination = Termination::CostStalled;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= LAMBDA_INCREASE;
            if lambda > LAMBDA_MAX {
                return Err(BaError::SolverDiverged { lambda });
            }
        }
    }

    let skipped_observations = state
        .observations()
        .iter()
        .filter(|o| residual(&state, o).is_err())
        .count();
    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: normal.cost,
        converged: termination != Termination::MaxIterations,
        termination,
        skipped_observations,
        anchored_frame: anchored,
    };
    Ok((state, report))
}
