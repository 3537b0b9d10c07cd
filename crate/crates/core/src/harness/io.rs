//! JSON file formats for models, measurement sets, states and fit reports.
//!
//! Floats are written in shortest round-trip form, so reading back what was
//! written reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};
use crate::model::{forward_kinematics, keypoint_position, KeypointAttachment, KinematicTree, ModelState};
use crate::optimizer::SolveReport;
use crate::residuals::{CameraIntrinsics, JointPrior, Measurement, ObjectiveConfig, Observation, Problem, Weights};

/// Orthonormality tolerance for rotations read from files.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointJson {
    pub id: usize,
    pub body_part: usize,
    /// 3×P, row-major.
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub v0: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub num_joints: usize,
    pub num_shape_params: usize,
    /// `-1` for the root.
    pub parents: Vec<i64>,
    /// One 3×P matrix per non-root part.
    pub shape_basis: Vec<Vec<Vec<f64>>>,
    /// One `l_i` per non-root part.
    pub offsets: Vec<[f64; 3]>,
    pub keypoints: Vec<KeypointJson>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], p: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != 3 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::DimensionMismatch(format!("{what} must be 3×{p}")));
    }
    Ok(DMatrix::from_fn(3, p, |r, c| rows[r][c]))
}

impl ModelJson {
    pub fn from_tree(tree: &KinematicTree) -> Self {
        ModelJson {
            num_joints: tree.num_joints(),
            num_shape_params: tree.num_shape_params,
            parents: tree.parents.iter().map(|p| p.map_or(-1, |q| q as i64)).collect(),
            shape_basis: tree.shape_basis[1..].iter().map(matrix_rows).collect(),
            offsets: tree.bone_offsets[1..].iter().map(|l| [l.x, l.y, l.z]).collect(),
            keypoints: tree
                .keypoints
                .iter()
                .map(|k| KeypointJson { id: k.id, body_part: k.body_part, v: matrix_rows(&k.shape_basis), v0: [k.offset.x, k.offset.y, k.offset.z] })
                .collect(),
        }
    }

    pub fn to_tree(&self) -> Result<KinematicTree> {
        let k = self.num_joints;
        let p = self.num_shape_params;
        if self.parents.len() != k + 1 || self.shape_basis.len() != k || self.offsets.len() != k {
            return Err(Error::DimensionMismatch(format!("model arrays do not match {k} joints")));
        }
        let parents = self
            .parents
            .iter()
            .map(|&q| if q < 0 { None } else { Some(q as usize) })
            .collect();
        let mut basis = vec![DMatrix::zeros(3, p)];
        for (i, s) in self.shape_basis.iter().enumerate() {
            basis.push(matrix_from_rows(s, p, &format!("shape_basis[{i}]"))?);
        }
        let mut offsets = vec![Vector3::zeros()];
        offsets.extend(self.offsets.iter().map(|o| Vector3::from(*o)));
        let keypoints = self
            .keypoints
            .iter()
            .map(|kp| {
                Ok(KeypointAttachment {
                    id: kp.id,
                    body_part: kp.body_part,
                    shape_basis: matrix_from_rows(&kp.v, p, &format!("keypoint {} V", kp.id))?,
                    offset: Vector3::from(kp.v0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        KinematicTree::new(parents, p, basis, offsets, keypoints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

fn rotation_from(v: &[f64; 9]) -> Result<Rotation> {
    Rotation::from_matrix(Matrix3::from_row_slice(v), ROTATION_TOLERANCE)
}

fn rotation_to(r: &Rotation) -> [f64; 9] {
    r.to_row_vec().try_into().expect("nine entries")
}

impl PoseJson {
    pub fn from_pose(p: &Pose) -> Self {
        PoseJson { rotation: rotation_to(&p.rotation), translation: [p.translation.x, p.translation.y, p.translation.z] }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose::new(rotation_from(&self.rotation)?, Vector3::from(self.translation)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementJson {
    pub kind: String,
    pub keypoint: usize,
    pub value: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePriorJson {
    pub part: usize,
    #[serde(flatten)]
    pub pose: PoseJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPriorJson {
    pub joint: usize,
    pub rotation: [f64; 9],
    /// `W^½`, row-major.
    pub sqrt_weight: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorsJson {
    #[serde(default)]
    pub pose: Vec<PosePriorJson>,
    #[serde(default)]
    pub joint: Vec<JointPriorJson>,
    #[serde(default)]
    pub shape_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsJson {
    pub keypoint_3d: f64,
    pub pof: f64,
    pub pose_prior: f64,
    pub joint_prior: f64,
    pub shape_prior: f64,
}

impl Default for WeightsJson {
    fn default() -> Self {
        let w = Weights::default();
        WeightsJson { keypoint_3d: w.keypoint_3d, pof: w.pof, pose_prior: w.pose_prior, joint_prior: w.joint_prior, shape_prior: w.shape_prior }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetJson {
    pub camera: CameraJson,
    pub measurements: Vec<MeasurementJson>,
    #[serde(default)]
    pub priors: PriorsJson,
    #[serde(default)]
    pub weights: WeightsJson,
}

impl MeasurementSetJson {
    pub fn from_problem(problem: &Problem) -> Self {
        let c = problem.camera;
        let measurements = problem
            .measurements
            .iter()
            .map(|m| {
                let (kind, value) = match m.observation {
                    Observation::Keypoint2D(v) => ("kp2d", vec![v.x, v.y]),
                    Observation::Keypoint3D(v) => ("kp3d", vec![v.x, v.y, v.z]),
                    Observation::Pof(v) => ("pof", vec![v.x, v.y, v.z]),
                };
                MeasurementJson { kind: kind.into(), keypoint: m.keypoint, value, weight: m.weight }
            })
            .collect();
        let obj = &problem.objective;
        let w = obj.weights;
        MeasurementSetJson {
            camera: CameraJson { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy },
            measurements,
            priors: PriorsJson {
                pose: obj.pose_priors.iter().map(|(&part, p)| PosePriorJson { part, pose: PoseJson::from_pose(p) }).collect(),
                joint: obj
                    .joint_priors
                    .iter()
                    .map(|(&joint, p)| JointPriorJson {
                        joint,
                        rotation: rotation_to(&p.mean),
                        sqrt_weight: p.sqrt_weight.transpose().as_slice().try_into().expect("nine entries"),
                    })
                    .collect(),
                shape_mean: obj.shape_mean.as_ref().map(|m| m.iter().copied().collect()),
            },
            weights: WeightsJson { keypoint_3d: w.keypoint_3d, pof: w.pof, pose_prior: w.pose_prior, joint_prior: w.joint_prior, shape_prior: w.shape_prior },
        }
    }

    /// Combine with a model into a validated problem.
    pub fn to_problem(&self, tree: KinematicTree) -> Result<Problem> {
        let measurements = self
            .measurements
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let v = &m.value;
                let observation = match (m.kind.as_str(), v.len()) {
                    ("kp2d", 2) => Observation::Keypoint2D(Vector2::new(v[0], v[1])),
                    ("kp3d", 3) => Observation::Keypoint3D(Vector3::new(v[0], v[1], v[2])),
                    ("pof", 3) => Observation::Pof(Vector3::new(v[0], v[1], v[2])),
                    (kind, n) => return Err(Error::Invalid(format!("measurement {k}: kind {kind:?} with {n} values"))),
                };
                Ok(Measurement { keypoint: m.keypoint, observation, weight: m.weight })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = self.weights;
        let objective = ObjectiveConfig {
            weights: Weights { keypoint_3d: w.keypoint_3d, pof: w.pof, pose_prior: w.pose_prior, joint_prior: w.joint_prior, shape_prior: w.shape_prior },
            pose_priors: self.priors.pose.iter().map(|p| Ok((p.part, p.pose.to_pose()?))).collect::<Result<BTreeMap<_, _>>>()?,
            joint_priors: self
                .priors
                .joint
                .iter()
                .map(|p| Ok((p.joint, JointPrior { mean: rotation_from(&p.rotation)?, sqrt_weight: Matrix3::from_row_slice(&p.sqrt_weight) })))
                .collect::<Result<BTreeMap<_, _>>>()?,
            shape_mean: self.priors.shape_mean.as_ref().map(|m| DVector::from_column_slice(m)),
        };
        let c = self.camera;
        Problem::new(tree, CameraIntrinsics { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy }, measurements, objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointPositionJson {
    pub id: usize,
    pub position: [f64; 3],
}

/// A model state, optionally with the world keypoint positions it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub root: PoseJson,
    /// One row-major rotation per joint.
    pub joints: Vec<[f64; 9]>,
    pub shape: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<KeypointPositionJson>,
}

impl StateJson {
    pub fn from_state(state: &ModelState, tree: Option<&KinematicTree>) -> Self {
        let keypoints = tree
            .map(|t| {
                let view = forward_kinematics(state, t);
                t.keypoints
                    .iter()
                    .map(|k| {
                        let p = keypoint_position(&view, k, &state.shape);
                        KeypointPositionJson { id: k.id, position: [p.x, p.y, p.z] }
                    })
                    .collect()
            })
            .unwrap_or_default();
        StateJson {
            root: PoseJson::from_pose(&state.root),
            joints: state.joints.iter().map(rotation_to).collect(),
            shape: state.shape.iter().copied().collect(),
            keypoints,
        }
    }

    pub fn to_state(&self) -> Result<ModelState> {
        Ok(ModelState {
            root: self.root.to_pose()?,
            joints: self.joints.iter().map(rotation_from).collect::<Result<Vec<_>>>()?,
            shape: DVector::from_column_slice(&self.shape),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedJson {
    pub behind_camera: usize,
    pub degenerate_bone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub solver: String,
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub direction_times_us: Vec<f64>,
    pub total_time_us: f64,
    pub skipped: SkippedJson,
    pub termination: String,
    pub final_damping: f64,
}

impl ReportJson {
    pub fn from_report(solver: &str, r: &SolveReport) -> Self {
        ReportJson {
            solver: solver.into(),
            iterations: r.iterations,
            final_objective: r.final_objective,
            objective_trace: r.objective_trace.clone(),
            direction_times_us: r.direction_times_us.clone(),
            total_time_us: r.total_time_us,
            skipped: SkippedJson { behind_camera: r.skipped.behind_camera, degenerate_bone: r.skipped.degenerate_bone },
            termination: r.termination.as_str().into(),
            final_damping: r.final_damping,
        }
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json_string(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_model, generate_problem, SyntheticSpec};

    #[test]
    fn model_round_trip_is_lossless() {
        let spec = SyntheticSpec { seed: 5, ..Default::default() };
        let m = generate_model(&spec).unwrap();
        let json = to_json_string(&ModelJson::from_tree(&m.tree)).unwrap();
        let back: ModelJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_tree().unwrap(), m.tree);
    }

    #[test]
    fn measurement_round_trip_is_lossless() {
        let spec = SyntheticSpec { seed: 6, noise_2d: 1.0, noise_3d: 0.01, noise_pof: 0.01, ..Default::default() };
        let m = generate_model(&spec).unwrap();
        let sp = generate_problem(&m.tree, &spec).unwrap();
        let json = to_json_string(&MeasurementSetJson::from_problem(&sp.problem)).unwrap();
        let back: MeasurementSetJson = serde_json::from_str(&json).unwrap();
        let p = back.to_problem(m.tree.clone()).unwrap();
        assert_eq!(p.measurements, sp.problem.measurements);
        assert_eq!(p.objective, sp.problem.objective);
        assert_eq!(p.camera, sp.problem.camera);

        let s = to_json_string(&StateJson::from_state(&sp.truth, None)).unwrap();
        let back: StateJson = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_state().unwrap(), sp.truth);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let spec = SyntheticSpec { joints: 2, shape_params: 1, topology: crate::harness::synth::Topology::Chain, ..Default::default() };
        let m = generate_model(&spec).unwrap();
        let mut j = ModelJson::from_tree(&m.tree);
        j.parents[2] = 2;
        assert!(j.to_tree().is_err());
        let mut j = ModelJson::from_tree(&m.tree);
        j.shape_basis[0][0].push(1.0);
        assert!(matches!(j.to_tree(), Err(Error::DimensionMismatch(_))));
        let set = MeasurementSetJson {
            camera: CameraJson { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 },
            measurements: vec![MeasurementJson { kind: "kp2d".into(), keypoint: 0, value: vec![1.0], weight: 1.0 }],
            priors: PriorsJson::default(),
            weights: WeightsJson::default(),
        };
        assert!(set.to_problem(m.tree.clone()).is_err());
    }
}
