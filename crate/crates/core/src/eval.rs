//! Trajectory accuracy: ATE after Umeyama alignment, RPE drift, summaries.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::dataset::{associate, Trajectory};
use crate::error::EvalError;
use crate::fmt::sig9;
use crate::geometry::Pose;

// Second singular value of a point scatter below this fraction of the first
// means the points are (numerically) collinear.
const COLLINEAR_RATIO: f64 = 1e-12;

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares alignment of `estimate` onto `reference`, minimizing
/// `sum |reference_i - (s R estimate_i + t)|^2`. With `with_scale = false`
/// the scale is pinned to one.
pub fn align_umeyama(
    reference: &[Vector3<f64>],
    estimate: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Alignment, EvalError> {
    if reference.len() != estimate.len() {
        return Err(EvalError::DegenerateConfiguration(format!(
            "{} reference points but {} estimate points",
            reference.len(),
            estimate.len()
        )));
    }
    let n = reference.len();
    if n < 3 {
        return Err(EvalError::DegenerateConfiguration(format!("{n} point pairs, need at least 3")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_ref = reference.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_est = estimate.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cross = Matrix3::zeros();
    let mut scatter_ref = Matrix3::zeros();
    let mut scatter_est = Matrix3::zeros();
    let mut var_est = 0.0;
    for (r, e) in reference.iter().zip(estimate) {
        let dr = r - mu_ref;
        let de = e - mu_est;
        cross += dr * de.transpose();
        scatter_ref += dr * dr.transpose();
        scatter_est += de * de.transpose();
        var_est += de.norm_squared();
    }
    cross *= inv_n;
    var_est *= inv_n;
    for (name, scatter) in [("reference", scatter_ref), ("estimate", scatter_est)] {
        let mut sv = scatter.symmetric_eigenvalues();
        sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        if sv[0] <= 0.0 || sv[1] <= COLLINEAR_RATIO * sv[0] {
            return Err(EvalError::DegenerateConfiguration(format!("{name} points are collinear")));
        }
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_est
    } else {
        1.0
    };
    Ok(Alignment {
        scale,
        rotation,
        translation: mu_ref - rotation * mu_est * scale,
    })
}

/// Per-pair errors tagged with the reference timestamp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorSeries {
    pub entries: Vec<(f64, f64)>,
}

impl ErrorSeries {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// `timestamp,error` CSV; timestamps with six decimals, errors with nine
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,error\n");
        for (t, e) in &self.entries {
            let _ = writeln!(out, "{t:.6},{}", sig9(*e));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub n: usize,
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub const SUMMARY_CSV_HEADER: &str = "metric,n,rmse,mean,median,std,min,max";

impl MetricSummary {
    pub fn csv_row(&self, metric: &str) -> String {
        format!(
            "{metric},{},{},{},{},{},{},{}",
            self.n,
            sig9(self.rmse),
            sig9(self.mean),
            sig9(self.median),
            sig9(self.std),
            sig9(self.min),
            sig9(self.max)
        )
    }
}

pub fn summarize(values: &[f64]) -> Result<MetricSummary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MetricSummary {
        n,
        rmse: mean_sq.sqrt(),
        mean,
        median: sorted[(n - 1) / 2],
        std: var.sqrt(),
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub series: ErrorSeries,
    pub summary: MetricSummary,
    pub alignment: Alignment,
}

/// Absolute trajectory error of camera positions after aligning `estimate`
/// onto `reference`.
pub fn ate(
    reference: &Trajectory,
    estimate: &Trajectory,
    max_dt: f64,
    with_scale: bool,
) -> Result<AteResult, EvalError> {
    let pairs = associate(reference, estimate, max_dt);
    let refs: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(i, _)| *reference.entries()[i].pose.translation())
        .collect();
    let ests: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(_, j)| *estimate.entries()[j].pose.translation())
        .collect();
    let alignment = align_umeyama(&refs, &ests, with_scale)?;
    let entries: Vec<(f64, f64)> = pairs
        .iter()
        .zip(refs.iter().zip(&ests))
        .map(|(&(i, _), (r, e))| (reference.entries()[i].timestamp, (r - alignment.apply(e)).norm()))
        .collect();
    let series = ErrorSeries { entries };
    let summary = summarize(&series.values())?;
    Ok(AteResult {
        series,
        summary,
        alignment,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeResult {
    pub translation: (ErrorSeries, MetricSummary),
    pub rotation: (ErrorSeries, MetricSummary),
}

/// Relative pose error over a gap of `delta` associated frames.
pub fn rpe(
    reference: &Trajectory,
    estimate: &Trajectory,
    delta: usize,
    max_dt: f64,
) -> Result<RpeResult, EvalError> {
    if delta == 0 {
        return Err(EvalError::DegenerateConfiguration("frame delta must be at least 1".into()));
    }
    let pairs = associate(reference, estimate, max_dt);
    if pairs.len() <= delta {
        return Err(EvalError::InsufficientPairs(pairs.len()));
    }
    let pose_ref = |i: usize| -> &Pose { &reference.entries()[i].pose };
    let pose_est = |j: usize| -> &Pose { &estimate.entries()[j].pose };
    let mut trans = Vec::with_capacity(pairs.len() - delta);
    let mut rot = Vec::with_capacity(pairs.len() - delta);
    for (&(i, j), &(i2, j2)) in pairs.iter().zip(&pairs[delta..]) {
        let motion_ref = pose_ref(i).inverse().compose(pose_ref(i2));
        let motion_est = pose_est(j).inverse().compose(pose_est(j2));
        let err = motion_ref.inverse().compose(&motion_est);
        let t = reference.entries()[i].timestamp;
        trans.push((t, err.translation().norm()));
        rot.push((t, err.rotation_angle()));
    }
    let trans = ErrorSeries { entries: trans };
    let rot = ErrorSeries { entries: rot };
    let trans_summary = summarize(&trans.values())?;
    let rot_summary = summarize(&rot.values())?;
    Ok(RpeResult {
        translation: (trans, trans_summary),
        rotation: (rot, rot_summary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, Twist};
    use crate::rng::SimRng;
    use nalgebra::Rotation3;

    fn cloud(rng: &mut SimRng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)))
            .collect()
    }

    fn random_pose(rng: &mut SimRng, rot: f64, trans: f64) -> Pose {
        exp_map(&Twist::new(
            Vector3::new(rng.uniform(-rot, rot), rng.uniform(-rot, rot), rng.uniform(-rot, rot)),
            Vector3::new(rng.uniform(-trans, trans), rng.uniform(-trans, trans), rng.uniform(-trans, trans)),
        ))
    }

    fn random_trajectory(rng: &mut SimRng, n: usize) -> Trajectory {
        let mut traj = Trajectory::new();
        for i in 0..n {
            traj.push(i as f64 * 0.05, random_pose(rng, 1.0, 3.0)).unwrap();
        }
        traj
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[3.0, 4.0]).unwrap();
        assert!((s.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!((s.mean, s.std, s.median, s.min, s.max, s.n), (3.5, 0.5, 3.0, 3.0, 4.0, 2));
        let s = summarize(&[2.5]).unwrap();
        assert_eq!((s.rmse, s.mean, s.median, s.std), (2.5, 2.5, 2.5, 0.0));
        let s = summarize(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((s.rmse, s.mean, s.median, s.std, s.max), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(summarize(&[]), Err(EvalError::EmptySeries));
    }

    #[test]
    fn identical_point_sets_align_to_identity() {
        let mut rng = SimRng::new(1);
        let pts = cloud(&mut rng, 10);
        let a = align_umeyama(&pts, &pts, true).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        assert!((a.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(a.translation.amax() < 1e-12);
    }

    #[test]
    fn recovers_rotation_about_z_and_shift() {
        let mut rng = SimRng::new(2);
        let reference = cloud(&mut rng, 20);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let estimate: Vec<_> = reference.iter().map(|p| rot * p + shift).collect();
        let a = align_umeyama(&reference, &estimate, false).unwrap();
        assert_eq!(a.scale, 1.0);
        let inv = rot.inverse();
        assert!((a.rotation - inv.matrix()).amax() < 1e-9);
        assert!((a.translation + (inv * shift)).norm() < 1e-9);
        for (r, e) in reference.iter().zip(&estimate) {
            assert!((r - a.apply(e)).norm() < 1e-9);
        }
    }

    #[test]
    fn recovers_scale() {
        let mut rng = SimRng::new(3);
        let reference = cloud(&mut rng, 15);
        let estimate: Vec<_> = reference.iter().map(|p| p * 2.0).collect();
        let a = align_umeyama(&reference, &estimate, true).unwrap();
        assert!((a.scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_never_returned() {
        let mut rng = SimRng::new(4);
        let reference = cloud(&mut rng, 12);
        let mirrored: Vec<_> = reference.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let a = align_umeyama(&reference, &mirrored, false).unwrap();
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(align_umeyama(&two, &two, false), Err(EvalError::DegenerateConfiguration(_))));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(align_umeyama(&line, &line, false), Err(EvalError::DegenerateConfiguration(_))));
    }

    #[test]
    fn ate_of_identical_and_offset_trajectories() {
        let mut rng = SimRng::new(5);
        let traj = random_trajectory(&mut rng, 30);
        let res = ate(&traj, &traj, 0.02, false).unwrap();
        assert!(res.summary.rmse < 1e-12);
        let shifted = traj.transformed(&Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)));
        assert!(ate(&traj, &shifted, 0.02, false).unwrap().summary.rmse < 1e-12);
    }

    #[test]
    fn rpe_is_zero_for_identical_and_globally_moved_trajectories() {
        let mut rng = SimRng::new(6);
        let traj = random_trajectory(&mut rng, 30);
        let res = rpe(&traj, &traj, 1, 0.02).unwrap();
        assert!(res.translation.1.max < 1e-12 && res.rotation.1.max < 1e-7);
        let g = random_pose(&mut rng, 2.0, 10.0);
        let moved = traj.transformed(&g);
        let res = rpe(&traj, &moved, 3, 0.02).unwrap();
        assert!(res.translation.1.max < 1e-9 && res.rotation.1.max < 1e-7);
        assert_eq!(res.translation.0.entries.len(), 27);
    }

    #[test]
    fn rpe_needs_pairs() {
        let mut rng = SimRng::new(7);
        let traj = random_trajectory(&mut rng, 3);
        assert_eq!(rpe(&traj, &traj, 3, 0.02), Err(EvalError::InsufficientPairs(3)));
        assert!(rpe(&traj, &traj, 0, 0.02).is_err());
    }

    #[test]
    fn csv_shapes() {
        let series = ErrorSeries { entries: vec![(1.5, 0.25), (1.6, 1.0 / 3.0)] };
        assert_eq!(series.to_csv(), "timestamp,error\n1.500000,0.25\n1.600000,0.333333333\n");
        let s = summarize(&[0.0]).unwrap();
        assert_eq!(s.csv_row("ate"), "ate,1,0,0,0,0,0,0");
    }
}
