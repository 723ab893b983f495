use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("rotation angle is pi; the logarithm axis is ambiguous")]
    HalfTurnRotation,
    #[error("quaternion with norm {norm} cannot be normalized")]
    InvalidQuaternion { norm: f64 },
    #[error("intrinsics require fx > 0, fy > 0 and a non-empty image")]
    InvalidIntrinsics,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbMapError {
    #[error("bounding box half extents must be positive and finite (got {half_width} x {half_height})")]
    InvalidBox { half_width: f64, half_height: f64 },
    #[error("detector score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("weight model requires 0 < floor < peak <= 1 (got floor {floor}, peak {peak})")]
    InvalidModel { peak: f64, floor: f64 },
    #[error("probability map must be at least 1x1 (got {width}x{height})")]
    EmptyMap { width: u32, height: u32 },
    #[error("raster has {got} values, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("map value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("observation references missing frame {0}")]
    MissingPose(u64),
    #[error("observation references missing landmark {0}")]
    MissingLandmark(u64),
    #[error("duplicate observation of landmark {landmark_id} in frame {frame_id}")]
    DuplicateObservation { frame_id: u64, landmark_id: u64 },
    #[error("observation weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("no free pose to optimize")]
    NoFreePose,
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("solver diverged: damping exceeded {lambda:e} without an accepted step")]
    SolverDiverged { lambda: f64 },
    #[error("map for frame {frame_id} is {got_width}x{got_height}, camera is {width}x{height}")]
    DimensionMismatch {
        frame_id: u64,
        width: u32,
        height: u32,
        got_width: u32,
        got_height: u32,
    },
    #[error("no probability map for frame {0}")]
    MissingMap(u64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp} does not increase")]
    NonMonotonicTimestamps { line: usize, timestamp: f64 },
    #[error("line {line}: quaternion norm {norm} deviates from 1 by more than 1e-3")]
    QuaternionNorm { line: usize, norm: f64 },
    #[error("line {line}: {source}")]
    InvalidBox { line: usize, source: ProbMapError },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("not enough associated pose pairs ({0})")]
    InsufficientPairs(usize),
    #[error("error series is empty")]
    EmptySeries,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no landmark is visible in any frame")]
    EmptyScene,
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    ProbMap(#[from] ProbMapError),
    #[error(transparent)]
    Ba(#[from] BaError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("frame {frame_id}: {source}")]
    Frame { frame_id: u64, source: BaError },
}
