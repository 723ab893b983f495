//! Problem generators and reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix2x3, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use probslam::ba::{weighted_cost, BaProblem, Landmark, Observation};
use probslam::dataset::Trajectory;
use probslam::geometry::{exp_map, project, CameraIntrinsics, Pose, Twist};
use probslam::rng::SimRng;

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
}

pub fn random_twist(rng: &mut SimRng, norm: f64) -> Twist {
    let v = Vector6::from_fn(|_, _| rng.gaussian());
    let v = v * (norm / v.norm());
    Twist::from_slice(v.as_slice())
}

pub fn random_pose(rng: &mut SimRng) -> Pose {
    let norm = rng.uniform(0.1, 2.5);
    exp_map(&random_twist(rng, norm))
}

/// Rotation angle of `a^-1 b`, accurate near zero.
pub fn angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let q = a.inverse() * b;
    2.0 * q.imag().norm().atan2(q.w.abs())
}

pub fn pose_difference(a: &Pose, b: &Pose) -> (f64, f64) {
    (
        angle_between(a.rotation(), b.rotation()),
        (a.translation() - b.translation()).norm(),
    )
}

pub struct PoseOnlyCase {
    pub problem: BaProblem,
    pub points: Vec<Vector3<f64>>,
    pub pixels: Vec<Vector2<f64>>,
}

pub fn pose_only_case(rng: &mut SimRng, n_points: usize) -> PoseOnlyCase {
    let k = intrinsics();
    let truth = random_pose(rng);
    let world_from_cam = truth.inverse();
    let mut problem = BaProblem::new(k);
    let start = truth.retract(&random_twist(rng, 0.05));
    problem.add_pose(0, start).unwrap();
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for i in 0..n_points {
        let z = rng.uniform(2.0, 6.0);
        let pc = Vector3::new(rng.uniform(-0.5, 0.5) * z, rng.uniform(-0.4, 0.4) * z, z);
        let pw = world_from_cam.transform_point(&pc);
        let px = project(&k, &truth, &pw).unwrap().pixel + Vector2::new(rng.gaussian(), rng.gaussian());
        problem.add_landmark(Landmark { id: i as u64, position: pw }).unwrap();
        problem.add_observation(Observation::new(0, i as u64, px, 1.0)).unwrap();
        points.push(pw);
        pixels.push(px);
    }
    problem.fix_all_landmarks();
    PoseOnlyCase { problem, points, pixels }
}

/// Plain Gauss-Newton on (rotation, translation) with updates
/// `R <- exp(dθ) R`, `t <- t + dt`, no weights anywhere.
pub fn gauss_newton_reference(k: &CameraIntrinsics, points: &[Vector3<f64>], pixels: &[Vector2<f64>], init: &Pose) -> Pose {
    let mut rot = *init.rotation();
    let mut t = *init.translation();
    for _ in 0..100 {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (p, u) in points.iter().zip(pixels) {
            let rp = rot * p;
            let pc = rp + t;
            let (x, y, z) = (pc.x, pc.y, pc.z);
            let proj = Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
            let r = u - proj;
            let dproj = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
            let skew_rp = Matrix3::new(0.0, -rp.z, rp.y, rp.z, 0.0, -rp.x, -rp.y, rp.x, 0.0);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dproj * -skew_rp));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-dproj));
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let step = h.cholesky().expect("well-posed reference").solve(&(-g));
        rot = UnitQuaternion::from_scaled_axis(step.fixed_rows::<3>(0).into_owned()) * rot;
        t += step.fixed_rows::<3>(3);
        if step.norm() < 1e-15 {
            break;
        }
    }
    Pose::from_parts(rot, t)
}

pub fn gradient_case(rng: &mut SimRng) -> BaProblem {
    let k = intrinsics();
    let mut problem = BaProblem::new(k);
    let base = random_pose(rng);
    let frames: Vec<Pose> = (0..3).map(|_| base.retract(&random_twist(rng, 0.1))).collect();
    for (i, f) in frames.iter().enumerate() {
        problem.add_pose(i as u64, *f).unwrap();
    }
    let world_from_cam = base.inverse();
    for id in 0..15u64 {
        let z = rng.uniform(2.0, 6.0);
        let pc = Vector3::new(rng.uniform(-0.4, 0.4) * z, rng.uniform(-0.3, 0.3) * z, z);
        problem.add_landmark(Landmark { id, position: world_from_cam.transform_point(&pc) }).unwrap();
    }
    for (i, f) in frames.iter().enumerate() {
        for id in 0..15u64 {
            let p = problem.landmark(id).unwrap();
            let Ok(proj) = project(&k, f, p) else { continue };
            let noisy = proj.pixel + Vector2::new(rng.normal(3.0), rng.normal(3.0));
            problem.add_observation(Observation::new(i as u64, id, noisy, rng.uniform01())).unwrap();
        }
    }
    problem
}

pub fn random_trajectory(rng: &mut SimRng, n: usize) -> Trajectory {
    let mut traj = Trajectory::new();
    let mut pose = random_pose(rng);
    for i in 0..n {
        traj.push(i as f64 / 30.0, pose).unwrap();
        pose = pose.retract(&random_twist(rng, 0.2));
    }
    traj
}

pub fn noisy_copy(rng: &mut SimRng, traj: &Trajectory) -> Trajectory {
    let mut out = Trajectory::new();
    for e in traj.entries() {
        out.push(e.timestamp, e.pose.retract(&random_twist(rng, 0.02))).unwrap();
    }
    out
}

/// Central finite-difference gradient of the weighted cost with respect to
/// the left-applied twist of one pose.
pub fn fd_pose_gradient(problem: &BaProblem, id: u64, h: f64) -> Vector6<f64> {
    let pose = *problem.pose(id).unwrap();
    let mut p = problem.clone();
    let mut fd = Vector6::zeros();
    for i in 0..6 {
        let mut e = [0.0; 6];
        e[i] = h;
        p.set_pose(id, pose.retract(&Twist::from_slice(&e))).unwrap();
        let c_plus = weighted_cost(&p);
        e[i] = -h;
        p.set_pose(id, pose.retract(&Twist::from_slice(&e))).unwrap();
        let c_minus = weighted_cost(&p);
        fd[i] = (c_plus - c_minus) / (2.0 * h);
    }
    fd
}
