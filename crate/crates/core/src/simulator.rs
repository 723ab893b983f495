//! Synthetic desk-scale scenes with ground truth.
//!
//! A scene is a camera trajectory looking at the origin, static landmarks
//! grouped into object clusters, dynamic landmarks moving at constant
//! velocity, noisy pixel observations and ground-truth-derived detection
//! boxes around the static clusters.
//!
//! Random draws happen in a fixed order so a seed reproduces a scene on any
//! platform: cluster centers, static landmark offsets, dynamic start points
//! and velocities, the covered-cluster shuffle, then per frame the pixel
//! noise of every visible landmark (by id) followed by jitter and score of
//! every covered cluster's box (by cluster index).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::Serialize;

use crate::ba::{BaProblem, Landmark, Observation};
use crate::dataset::{DetectionFrame, Trajectory};
use crate::error::SimError;
use crate::fmt::sig9;
use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::probmap::{BoundingBox, Detection};
use crate::rng::SimRng;

/// Frame rate used to stamp frames.
pub const FRAME_RATE: f64 = 30.0;
/// Cluster centers are drawn uniformly in a ball of this radius.
pub const CLUSTER_SPREAD: f64 = 1.0;
/// Static landmarks are drawn uniformly in a ball of this radius around their
/// cluster center.
pub const CLUSTER_RADIUS: f64 = 0.1;
/// Dynamic landmarks start uniformly in a ball of this radius.
pub const DYNAMIC_SPREAD: f64 = 1.0;
/// Detection boxes are the projected cluster extent scaled by this factor.
pub const BOX_INFLATION: f64 = 1.1;
/// Smallest half extent of a detection box, in pixels.
pub const MIN_BOX_HALF_EXTENT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Full circle of `radius` around the origin.
    Orbit,
    /// Straight segment of `length`, at distance `radius` from the origin.
    Line,
    /// Circular arc of arc length `length` and `radius`.
    Arc,
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "line" => Ok(Self::Line),
            "arc" => Ok(Self::Arc),
            other => Err(format!("unknown trajectory {other:?}, expected orbit, line or arc")),
        }
    }
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Orbit => "orbit",
            Self::Line => "line",
            Self::Arc => "arc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub n_static_landmarks: usize,
    pub n_dynamic_landmarks: usize,
    pub n_clusters: usize,
    pub pixel_noise_sigma: f64,
    /// Per-axis standard deviation of dynamic landmark velocity, meters/frame.
    pub dynamic_velocity_sigma: f64,
    pub trajectory: TrajectoryKind,
    pub radius: f64,
    pub length: f64,
    pub camera_height: f64,
    #[serde(serialize_with = "serialize_intrinsics")]
    pub intrinsics: CameraIntrinsics,
    pub detection_coverage: f64,
    pub box_jitter_sigma: f64,
    /// Treat dynamic landmarks as static points when building problems.
    pub contaminate: bool,
}

fn serialize_intrinsics<S: serde::Serializer>(k: &CameraIntrinsics, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("CameraIntrinsics", 6)?;
    st.serialize_field("fx", &k.fx)?;
    st.serialize_field("fy", &k.fy)?;
    st.serialize_field("cx", &k.cx)?;
    st.serialize_field("cy", &k.cy)?;
    st.serialize_field("width", &k.width)?;
    st.serialize_field("height", &k.height)?;
    st.end()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_frames: 60,
            n_static_landmarks: 200,
            n_dynamic_landmarks: 50,
            n_clusters: 8,
            pixel_noise_sigma: 1.0,
            dynamic_velocity_sigma: 0.01,
            trajectory: TrajectoryKind::Orbit,
            radius: 2.0,
            length: 1.0,
            camera_height: 0.5,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            detection_coverage: 1.0,
            box_jitter_sigma: 2.0,
            contaminate: true,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1");
        }
        if self.n_static_landmarks > 0 && self.n_clusters == 0 {
            return bad("n_clusters must be at least 1 when there are static landmarks");
        }
        let nonneg = [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("dynamic_velocity_sigma", self.dynamic_velocity_sigma),
            ("box_jitter_sigma", self.box_jitter_sigma),
            ("length", self.length),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !self.camera_height.is_finite() {
            return bad("camera_height must be finite");
        }
        if !(0.0..=1.0).contains(&self.detection_coverage) {
            return bad("detection_coverage must lie in [0, 1]");
        }
        let k = &self.intrinsics;
        CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// their defaults; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| SimError::ConfigParse { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(value: &str) -> Result<T, String> {
                value.parse().map_err(|_| format!("invalid value {value:?}"))
            }
            let res: Result<(), String> = (|| {
                match key {
                    "seed" => cfg.seed = num(value)?,
                    "n_frames" => cfg.n_frames = num(value)?,
                    "n_static_landmarks" => cfg.n_static_landmarks = num(value)?,
                    "n_dynamic_landmarks" => cfg.n_dynamic_landmarks = num(value)?,
                    "n_clusters" => cfg.n_clusters = num(value)?,
                    "pixel_noise_sigma" => cfg.pixel_noise_sigma = num(value)?,
                    "dynamic_velocity_sigma" => cfg.dynamic_velocity_sigma = num(value)?,
                    "trajectory" => cfg.trajectory = value.parse()?,
                    "radius" => cfg.radius = num(value)?,
                    "length" => cfg.length = num(value)?,
                    "camera_height" => cfg.camera_height = num(value)?,
                    "fx" => cfg.intrinsics.fx = num(value)?,
                    "fy" => cfg.intrinsics.fy = num(value)?,
                    "cx" => cfg.intrinsics.cx = num(value)?,
                    "cy" => cfg.intrinsics.cy = num(value)?,
                    "image_width" => cfg.intrinsics.width = num(value)?,
                    "image_height" => cfg.intrinsics.height = num(value)?,
                    "detection_coverage" => cfg.detection_coverage = num(value)?,
                    "box_jitter_sigma" => cfg.box_jitter_sigma = num(value)?,
                    "contaminate" => cfg.contaminate = num(value)?,
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            res.map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Text form accepted by [`SceneConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let k = &self.intrinsics;
        let mut out = String::new();
        let mut kv = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        kv("seed", self.seed.to_string());
        kv("n_frames", self.n_frames.to_string());
        kv("n_static_landmarks", self.n_static_landmarks.to_string());
        kv("n_dynamic_landmarks", self.n_dynamic_landmarks.to_string());
        kv("n_clusters", self.n_clusters.to_string());
        kv("pixel_noise_sigma", sig9(self.pixel_noise_sigma));
        kv("dynamic_velocity_sigma", sig9(self.dynamic_velocity_sigma));
        kv("trajectory", self.trajectory.as_str().to_string());
        kv("radius", sig9(self.radius));
        kv("length", sig9(self.length));
        kv("camera_height", sig9(self.camera_height));
        kv("fx", sig9(k.fx));
        kv("fy", sig9(k.fy));
        kv("cx", sig9(k.cx));
        kv("cy", sig9(k.cy));
        kv("image_width", k.width.to_string());
        kv("image_height", k.height.to_string());
        kv("detection_coverage", sig9(self.detection_coverage));
        kv("box_jitter_sigma", sig9(self.box_jitter_sigma));
        kv("contaminate", self.contaminate.to_string());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandmarkKind {
    Static { cluster: usize },
    Dynamic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneLandmark {
    pub id: u64,
    pub kind: LandmarkKind,
    /// Position at frame 0.
    pub initial: Vector3<f64>,
    /// Displacement per frame; zero for static landmarks.
    pub velocity: Vector3<f64>,
}

impl SceneLandmark {
    pub fn position_at(&self, frame: usize) -> Vector3<f64> {
        self.initial + self.velocity * frame as f64
    }

    pub fn is_dynamic(&self) -> bool {
        self.kind == LandmarkKind::Dynamic
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub frame_id: u64,
    pub timestamp: f64,
    /// World-to-camera ground truth.
    pub pose: Pose,
    /// Noisy observations with weight 1.
    pub observations: Vec<Observation>,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub landmarks: Vec<SceneLandmark>,
    pub frames: Vec<SceneFrame>,
    /// Dynamic landmarks enter problems as fixed points at their frame-0
    /// position.
    pub contaminated: bool,
}

/// Where each frame's pose starts before solving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initialization {
    GroundTruth,
    /// Ground truth of the preceding frame; frame 0 starts at its own.
    PreviousFrame,
}

fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let up = Vector3::z();
    let forward = (target - center).normalize();
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
    let rot_cw = cam_to_world.transpose();
    let rotation = UnitQuaternion::from_matrix(&rot_cw);
    Pose::from_parts(rotation, -(rot_cw * center))
}

fn camera_poses(cfg: &SceneConfig) -> Vec<Pose> {
    let n = cfg.n_frames;
    let s = |k: usize| if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
    let h = cfg.camera_height;
    (0..n)
        .map(|k| match cfg.trajectory {
            TrajectoryKind::Orbit => {
                let theta = 2.0 * PI * k as f64 / n as f64;
                let c = Vector3::new(cfg.radius * theta.cos(), cfg.radius * theta.sin(), h);
                look_at(&c, &Vector3::zeros())
            }
            TrajectoryKind::Arc => {
                let theta = cfg.length / cfg.radius * (s(k) - 0.5);
                let c = Vector3::new(cfg.radius * theta.cos(), cfg.radius * theta.sin(), h);
                look_at(&c, &Vector3::zeros())
            }
            TrajectoryKind::Line => {
                let x = cfg.length * (s(k) - 0.5);
                let c = Vector3::new(x, -cfg.radius, h);
                look_at(&c, &Vector3::new(x, 0.0, 0.0))
            }
        })
        .collect()
}

fn in_ball(rng: &mut SimRng, radius: f64) -> Vector3<f64> {
    loop {
        let p = Vector3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

pub fn generate(config: &SceneConfig) -> Result<SyntheticScene, SimError> {
    config.validate()?;
    let cfg = config;
    let k = cfg.intrinsics;
    let mut rng = SimRng::new(cfg.seed);

    let n_clusters = if cfg.n_static_landmarks > 0 { cfg.n_clusters } else { 0 };
    let centers: Vec<Vector3<f64>> = (0..n_clusters).map(|_| in_ball(&mut rng, CLUSTER_SPREAD)).collect();
    let mut landmarks = Vec::with_capacity(cfg.n_static_landmarks + cfg.n_dynamic_landmarks);
    for i in 0..cfg.n_static_landmarks {
        let cluster = i % n_clusters;
        landmarks.push(SceneLandmark {
            id: i as u64,
            kind: LandmarkKind::Static { cluster },
            initial: centers[cluster] + in_ball(&mut rng, CLUSTER_RADIUS),
            velocity: Vector3::zeros(),
        });
    }
    for i in 0..cfg.n_dynamic_landmarks {
        let initial = in_ball(&mut rng, DYNAMIC_SPREAD);
        let sigma = cfg.dynamic_velocity_sigma;
        let velocity = Vector3::new(rng.normal(sigma), rng.normal(sigma), rng.normal(sigma));
        landmarks.push(SceneLandmark {
            id: (cfg.n_static_landmarks + i) as u64,
            kind: LandmarkKind::Dynamic,
            initial,
            velocity,
        });
    }

    let mut order: Vec<usize> = (0..n_clusters).collect();
    for i in (1..order.len()).rev() {
        let j = ((rng.uniform01() * (i + 1) as f64) as usize).min(i);
        order.swap(i, j);
    }
    let n_covered = (cfg.detection_coverage * n_clusters as f64).round() as usize;
    let mut covered = order[..n_covered].to_vec();
    covered.sort_unstable();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut any_visible = false;
    for (f, pose) in camera_poses(cfg).into_iter().enumerate() {
        let frame_id = f as u64;
        let mut observations = Vec::new();
        let mut extents: Vec<Option<(Vector2<f64>, Vector2<f64>)>> = vec![None; n_clusters];
        for lm in &landmarks {
            let Ok(proj) = project(&k, &pose, &lm.position_at(f)) else {
                continue;
            };
            if !k.contains(&proj.pixel) {
                continue;
            }
            any_visible = true;
            let noise = Vector2::new(rng.normal(cfg.pixel_noise_sigma), rng.normal(cfg.pixel_noise_sigma));
            observations.push(Observation::new(frame_id, lm.id, proj.pixel + noise, 1.0));
            if let LandmarkKind::Static { cluster } = lm.kind {
                let e = extents[cluster].get_or_insert((proj.pixel, proj.pixel));
                e.0 = e.0.inf(&proj.pixel);
                e.1 = e.1.sup(&proj.pixel);
            }
        }
        let mut detections = Vec::new();
        for &c in &covered {
            let Some((lo, hi)) = extents[c] else {
                continue;
            };
            let jitter = Vector2::new(rng.normal(cfg.box_jitter_sigma), rng.normal(cfg.box_jitter_sigma));
            let score = rng.uniform(0.5, 1.0);
            let half = ((hi - lo) * 0.5 * BOX_INFLATION).map(|v| v.max(MIN_BOX_HALF_EXTENT));
            let bbox = BoundingBox::new((lo + hi) * 0.5 + jitter, half.x, half.y)
                .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            let det = Detection::new(format!("object_{c}"), bbox, score, true)
                .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            detections.push(det);
        }
        frames.push(SceneFrame {
            frame_id,
            timestamp: f as f64 / FRAME_RATE,
            pose,
            observations,
            detections,
        });
    }
    if !any_visible {
        return Err(SimError::EmptyScene);
    }
    let mut scene = SyntheticScene {
        config: config.clone(),
        landmarks,
        frames,
        contaminated: false,
    };
    if config.contaminate {
        scene = contaminate_as_static(&scene);
    }
    Ok(scene)
}

/// Variant whose problems hold each dynamic landmark as one fixed point at
/// its frame-0 position while keeping the observations of its true motion.
pub fn contaminate_as_static(scene: &SyntheticScene) -> SyntheticScene {
    let mut out = scene.clone();
    if scene.landmarks.iter().any(SceneLandmark::is_dynamic) {
        out.contaminated = true;
    }
    out
}

impl SyntheticScene {
    fn landmark(&self, id: u64) -> &SceneLandmark {
        &self.landmarks[id as usize]
    }

    fn uses(&self, lm: &SceneLandmark) -> bool {
        !lm.is_dynamic() || self.contaminated
    }

    /// Camera-to-world ground truth, in the convention of TUM files.
    pub fn ground_truth(&self) -> Trajectory {
        let mut traj = Trajectory::new();
        for f in &self.frames {
            traj.push(f.timestamp, f.pose.inverse())
                .expect("frame timestamps increase");
        }
        traj
    }

    /// Pose-only problem over all frames with unit weights. Observations of
    /// dynamic landmarks are included only for contaminated scenes.
    pub fn problem(&self, init: Initialization) -> BaProblem {
        let mut problem = BaProblem::new(self.config.intrinsics);
        for (i, f) in self.frames.iter().enumerate() {
            let start = match init {
                Initialization::GroundTruth => f.pose,
                Initialization::PreviousFrame => self.frames[i.saturating_sub(1)].pose,
            };
            problem.add_pose(f.frame_id, start).expect("unique frame ids");
            problem.set_timestamp(f.frame_id, f.timestamp).expect("frame exists");
        }
        let mut observed = std::collections::BTreeSet::new();
        for f in &self.frames {
            for o in &f.observations {
                if self.uses(self.landmark(o.landmark_id)) {
                    observed.insert(o.landmark_id);
                }
            }
        }
        for &id in &observed {
            let position = self.landmark(id).initial;
            problem.add_landmark(Landmark { id, position }).expect("unique landmark ids");
        }
        problem.fix_all_landmarks();
        for f in &self.frames {
            for o in &f.observations {
                if observed.contains(&o.landmark_id) {
                    problem.add_observation(*o).expect("valid observation");
                }
            }
        }
        problem
    }

    pub fn detection_frames(&self) -> Vec<DetectionFrame> {
        let k = self.config.intrinsics;
        self.frames
            .iter()
            .map(|f| DetectionFrame {
                timestamp: f.timestamp,
                width: k.width,
                height: k.height,
                detections: f.detections.clone(),
            })
            .collect()
    }

    /// Number of observations of dynamic landmarks.
    pub fn dynamic_observation_count(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| &f.observations)
            .filter(|o| self.landmark(o.landmark_id).is_dynamic())
            .count()
    }
}
