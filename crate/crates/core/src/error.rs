use thiserror::Error;

/// Errors raised by the fitting library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rotation angle is within tolerance of pi; logarithm is not continuous there")]
    AngleNearPi,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parent pointers contain a cycle through part {0}")]
    CycleDetected(usize),

    #[error("part {child} has parent {parent}, which does not precede it")]
    NonTopologicalOrder { child: usize, parent: usize },

    #[error("keypoint {keypoint} references body part {body_part}, which does not exist")]
    BadAttachment { keypoint: usize, body_part: usize },

    #[error("the root part has no relative pose")]
    RootHasNoRelativePose,

    #[error("the root part has no kinematic constraint")]
    RootHasNoConstraint,

    #[error("keypoint {0} is behind the camera")]
    BehindCamera(usize),

    #[error("keypoint {0} coincides with its part origin")]
    DegenerateBone(usize),

    #[error("dense system is singular (smallest pivot {smallest_pivot:e}, damping {damping:e})")]
    SingularSystem { smallest_pivot: f64, damping: f64 },

    #[error("joint block at node {node} is not positive definite (pivot {pivot:e})")]
    IndefiniteQ22 { node: usize, pivot: f64 },

    #[error("root block is singular (smallest pivot {0:e})")]
    SingularRoot(f64),

    #[error("objective is not finite")]
    NonFiniteObjective,

    #[error("unknown keypoint {0}")]
    UnknownKeypoint(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("json error: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
