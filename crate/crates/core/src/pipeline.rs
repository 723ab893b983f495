//! Detections to maps to weighted solves to trajectory errors.
//!
//! Pose-only problems are solved frame by frame. Map construction runs on a
//! producer thread feeding a bounded queue, so the map for frame `t` is built
//! while frame `t - 1` is being solved. Every frame's result depends only on
//! its own map and subproblem, so the output does not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use crate::ba::{attach_weights, solve, BaProblem, Observation, SolveOptions, SolveReport};
use crate::dataset::{associate_timestamps, DetectionFrame, Trajectory, DEFAULT_MAX_DT};
use crate::error::Error;
use crate::eval::{ate, rpe, AteResult, RpeResult};
use crate::fmt::sig9;
use crate::geometry::Pose;
use crate::probmap::{build_map, GaussianWeightModel, ProbabilityMap};
use crate::simulator::{Initialization, SyntheticScene};

/// Maps in flight between the producer and the solver.
pub const QUEUE_DEPTH: usize = 2;

#[derive(Clone, Copy, Debug)]
pub enum WeightSource<'a> {
    /// Keep the weights stored in the problem.
    AsGiven,
    /// Every observation weighted 1.
    Uniform,
    /// Weights sampled from maps built from these detections.
    Detections(&'a [DetectionFrame]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub solve: SolveOptions,
    pub model: GaussianWeightModel,
    /// Largest timestamp gap for matching a frame to a detection frame.
    pub max_dt: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            model: GaussianWeightModel::default(),
            max_dt: DEFAULT_MAX_DT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub frame_id: u64,
    pub timestamp: f64,
    pub report: SolveReport,
    /// Index of the detection frame used, if any.
    pub detection_frame: Option<usize>,
}

/// Wall-clock totals in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub probmap_ms: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutput {
    /// Input problem with solved poses and weights as used.
    pub problem: BaProblem,
    pub frames: Vec<FrameResult>,
    pub timings: StageTimings,
}

impl SolveOutput {
    /// Camera-to-world estimate at the problem's timestamps.
    pub fn trajectory(&self) -> Trajectory {
        poses_to_trajectory(&self.problem)
    }
}

pub fn poses_to_trajectory(problem: &BaProblem) -> Trajectory {
    let mut entries: Vec<(f64, Pose)> = problem
        .poses()
        .iter()
        .map(|(&id, pose)| (problem.timestamp(id), pose.inverse()))
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut traj = Trajectory::new();
    for (t, pose) in entries {
        traj.push(t, pose).expect("distinct frame timestamps");
    }
    traj
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// For each frame id, the detection frame nearest in time within `max_dt`.
fn match_detection_frames(
    problem: &BaProblem,
    detections: &[DetectionFrame],
    max_dt: f64,
) -> BTreeMap<u64, usize> {
    let ids: Vec<u64> = problem.frame_ids().collect();
    let times: Vec<f64> = ids.iter().map(|&id| problem.timestamp(id)).collect();
    let det_times: Vec<f64> = detections.iter().map(|d| d.timestamp).collect();
    associate_timestamps(&times, &det_times, max_dt)
        .into_iter()
        .map(|(i, j)| (ids[i], j))
        .collect()
}

fn frame_map(
    problem: &BaProblem,
    detections: &[DetectionFrame],
    matched: Option<usize>,
    model: &GaussianWeightModel,
) -> Result<ProbabilityMap, Error> {
    let k = problem.intrinsics();
    Ok(match matched {
        Some(j) => {
            let d = &detections[j];
            build_map(&d.detections, d.width, d.height, model)?
        }
        None => ProbabilityMap::uniform(k.width, k.height, model.floor())?,
    })
}

/// Attaches weights and solves. Pose-only problems are solved one frame at a
/// time; problems with free landmarks are solved jointly.
pub fn solve_frames(
    problem: &BaProblem,
    weights: WeightSource<'_>,
    options: &PipelineOptions,
) -> Result<SolveOutput, Error> {
    let matched = match weights {
        WeightSource::Detections(dets) => match_detection_frames(problem, dets, options.max_dt),
        _ => BTreeMap::new(),
    };
    let base = match weights {
        WeightSource::Uniform => problem.with_uniform_weights(),
        _ => problem.clone(),
    };
    if !base.is_pose_only() {
        return solve_jointly(&base, weights, &matched, options);
    }

    let ids: Vec<u64> = base.frame_ids().collect();
    let mut out = base.clone();
    let mut frames = Vec::with_capacity(ids.len());
    let mut solve_ms = 0.0;
    let mut probmap_ms = 0.0;
    let mut weighted_obs = Vec::with_capacity(base.observations().len());

    let mut solve_one = |id: u64, map: Option<ProbabilityMap>| -> Result<(), Error> {
        let start = Instant::now();
        let mut sub = base.frame_subproblem(id).map_err(|source| Error::Frame { frame_id: id, source })?;
        if let Some(map) = map {
            let maps = BTreeMap::from([(id, map)]);
            sub = attach_weights(&sub, &maps).map_err(|source| Error::Frame { frame_id: id, source })?;
        }
        let (solved, report) = solve(&sub, &options.solve).map_err(|source| Error::Frame { frame_id: id, source })?;
        out.set_pose(id, *solved.pose(id).expect("frame in its subproblem"))
            .expect("frame in problem");
        weighted_obs.extend_from_slice(sub.observations());
        frames.push(FrameResult {
            frame_id: id,
            timestamp: base.timestamp(id),
            report,
            detection_frame: matched.get(&id).copied(),
        });
        solve_ms += elapsed_ms(start);
        Ok(())
    };

    match weights {
        WeightSource::Detections(dets) => {
            std::thread::scope(|scope| -> Result<(), Error> {
                let (tx, rx) = sync_channel::<Result<(u64, ProbabilityMap, f64), Error>>(QUEUE_DEPTH);
                let ids_ref = &ids;
                let base_ref = &base;
                let matched_ref = &matched;
                scope.spawn(move || {
                    for &id in ids_ref {
                        let start = Instant::now();
                        let msg = frame_map(base_ref, dets, matched_ref.get(&id).copied(), &options.model)
                            .map(|map| (id, map, elapsed_ms(start)));
                        let failed = msg.is_err();
                        if tx.send(msg).is_err() || failed {
                            break;
                        }
                    }
                });
                for msg in rx {
                    let (id, map, ms) = msg?;
                    probmap_ms += ms;
                    solve_one(id, Some(map))?;
                }
                Ok(())
            })?;
        }
        _ => {
            for &id in &ids {
                solve_one(id, None)?;
            }
        }
    }

    drop(solve_one);
    Ok(SolveOutput {
        problem: with_weights_of(&out, &weighted_obs),
        frames,
        timings: StageTimings { probmap_ms, solve_ms },
    })
}

/// Copy of `src` taking each observation's weight from `observations`.
fn with_weights_of(src: &BaProblem, observations: &[Observation]) -> BaProblem {
    let lookup: BTreeMap<(u64, u64), f64> = observations
        .iter()
        .map(|o| ((o.frame_id, o.landmark_id), o.weight))
        .collect();
    src.map_weights(|o| lookup.get(&(o.frame_id, o.landmark_id)).copied().unwrap_or(o.weight))
}

fn solve_jointly(
    base: &BaProblem,
    weights: WeightSource<'_>,
    matched: &BTreeMap<u64, usize>,
    options: &PipelineOptions,
) -> Result<SolveOutput, Error> {
    let mut timings = StageTimings::default();
    let mut problem = base.clone();
    if let WeightSource::Detections(dets) = weights {
        let start = Instant::now();
        let mut maps = BTreeMap::new();
        for id in base.frame_ids() {
            maps.insert(id, frame_map(base, dets, matched.get(&id).copied(), &options.model)?);
        }
        timings.probmap_ms = elapsed_ms(start);
        problem = attach_weights(&problem, &maps)?;
    }
    let start = Instant::now();
    let (solved, report) = solve(&problem, &options.solve)?;
    timings.solve_ms = elapsed_ms(start);
    let frames = solved
        .frame_ids()
        .map(|id| FrameResult {
            frame_id: id,
            timestamp: solved.timestamp(id),
            report: report.clone(),
            detection_frame: matched.get(&id).copied(),
        })
        .collect();
    Ok(SolveOutput {
        problem: solved,
        frames,
        timings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub output: SolveOutput,
    pub ate: AteResult,
    pub rpe: RpeResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub ground_truth: Trajectory,
    pub weighted: MethodResult,
    pub uniform: MethodResult,
}

pub const COMPARISON_CSV_HEADER: &str =
    "method,ate_rmse,ate_mean,ate_median,ate_max,rpe_trans_rmse,rpe_rot_rmse";

impl Comparison {
    /// Relative ATE rmse reduction of the weighted solve, `1 - weighted / uniform`.
    pub fn improvement(&self) -> f64 {
        let u = self.uniform.ate.summary.rmse;
        let w = self.weighted.ate.summary.rmse;
        if u == 0.0 {
            0.0
        } else {
            1.0 - w / u
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_CSV_HEADER}\n");
        for (name, m) in [("weighted", &self.weighted), ("uniform", &self.uniform)] {
            let a = &m.ate.summary;
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                sig9(a.rmse),
                sig9(a.mean),
                sig9(a.median),
                sig9(a.max),
                sig9(m.rpe.translation.1.rmse),
                sig9(m.rpe.rotation.1.rmse)
            );
        }
        out
    }
}

pub fn evaluate(
    ground_truth: &Trajectory,
    output: SolveOutput,
    max_dt: f64,
) -> Result<MethodResult, Error> {
    let est = output.trajectory();
    let ate = ate(ground_truth, &est, max_dt, false)?;
    let rpe = rpe(ground_truth, &est, 1, max_dt)?;
    Ok(MethodResult { output, ate, rpe })
}

/// Solves the scene's pose-only problem with detection-derived weights and
/// with uniform weights, and evaluates both against ground truth.
pub fn run_comparison(scene: &SyntheticScene, options: &PipelineOptions) -> Result<Comparison, Error> {
    let problem = scene.problem(Initialization::PreviousFrame);
    let detections = scene.detection_frames();
    let ground_truth = scene.ground_truth();
    let weighted = solve_frames(&problem, WeightSource::Detections(&detections), options)?;
    let uniform = solve_frames(&problem, WeightSource::Uniform, options)?;
    Ok(Comparison {
        weighted: evaluate(&ground_truth, weighted, options.max_dt)?,
        uniform: evaluate(&ground_truth, uniform, options.max_dt)?,
        ground_truth,
    })
}
