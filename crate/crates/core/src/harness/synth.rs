//! Synthetic models and measurement sets with a known zero-residual truth.

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};
use crate::model::{attach_rest_keypoint, forward_kinematics, keypoint_position, JointRegressor, KinematicTree, ModelState};
use crate::residuals::{CameraIntrinsics, JointPrior, Measurement, ObjectiveConfig, Observation, Problem, MIN_BONE_LENGTH, MIN_DEPTH};

/// SMPL body tree, 24 parts.
pub const SMPL_PARENTS: [i32; 24] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

/// SMPL+H tree, 52 parts: the SMPL body without its two hand joints plus
/// five three-joint fingers on each wrist.
pub const SMPLH_PARENTS: [i32; 52] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, //
    20, 22, 23, 20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35, //
    21, 37, 38, 21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50,
];

pub const KEYPOINTS_PER_PART: usize = 2;
pub const BONE_LENGTH: (f64, f64) = (0.05, 0.5);
pub const REGRESSOR_RANGE: f64 = 0.05;
pub const MAX_JOINT_ANGLE: f64 = 1.0;
/// Depth of the root in front of the camera.
pub const ROOT_DEPTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    SmplLike23,
    SmplhLike51,
    Chain,
    RandomTree,
}

impl Topology {
    pub fn as_str(&self) -> &'static str {
        match self {
            Topology::SmplLike23 => "smpl_like_23",
            Topology::SmplhLike51 => "smplh_like_51",
            Topology::Chain => "chain",
            Topology::RandomTree => "random_tree",
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smpl_like_23" => Ok(Topology::SmplLike23),
            "smplh_like_51" => Ok(Topology::SmplhLike51),
            "chain" => Ok(Topology::Chain),
            "random_tree" => Ok(Topology::RandomTree),
            other => Err(Error::Invalid(format!("unknown topology {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub joints: usize,
    pub shape_params: usize,
    pub measurements: usize,
    /// Pixels.
    pub noise_2d: f64,
    pub noise_3d: f64,
    /// Radians.
    pub noise_pof: f64,
    pub seed: u64,
    pub topology: Topology,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            joints: 23,
            shape_params: 10,
            measurements: 300,
            noise_2d: 0.0,
            noise_3d: 0.0,
            noise_pof: 0.0,
            seed: 0,
            topology: Topology::SmplLike23,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joints < 1 {
            return Err(Error::Invalid("at least one joint is required".into()));
        }
        let fixed = match self.topology {
            Topology::SmplLike23 => Some(23),
            Topology::SmplhLike51 => Some(51),
            _ => None,
        };
        if fixed.is_some_and(|k| k != self.joints) {
            return Err(Error::Invalid(format!("topology {} needs {} joints", self.topology.as_str(), fixed.unwrap())));
        }
        if [self.noise_2d, self.noise_3d, self.noise_pof].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Invalid("noise levels must be nonnegative".into()));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn parents_for(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let from_table = |t: &[i32]| t.iter().map(|&p| usize::try_from(p).ok()).collect();
    match spec.topology {
        Topology::SmplLike23 => from_table(&SMPL_PARENTS),
        Topology::SmplhLike51 => from_table(&SMPLH_PARENTS),
        Topology::Chain => (0..=spec.joints).map(|i| i.checked_sub(1)).collect(),
        Topology::RandomTree => (0..=spec.joints).map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) }).collect(),
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, p: usize, half: f64) -> DMatrix<f64> {
    DMatrix::from_fn(3, p, |_, _| rng.gen_range(-half..=half))
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub tree: KinematicTree,
    pub regressor: JointRegressor,
}

/// Random regressor on the requested topology with [`KEYPOINTS_PER_PART`]
/// keypoints per part. Deterministic in `spec.seed`.
pub fn generate_model(spec: &SyntheticSpec) -> Result<SyntheticModel> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, 0);
    let parents = parents_for(spec, &mut rng);
    let p = spec.shape_params;
    let n = parents.len();
    let mut regressors = Vec::with_capacity(n);
    let mut offsets: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for (i, par) in parents.iter().enumerate() {
        regressors.push(uniform_matrix(&mut rng, p, REGRESSOR_RANGE));
        let origin = match par {
            None => Vector3::zeros(),
            Some(q) => offsets[*q] + unit(&mut rng) * rng.gen_range(BONE_LENGTH.0..=BONE_LENGTH.1),
        };
        debug_assert_eq!(offsets.len(), i);
        offsets.push(origin);
    }
    let regressor = JointRegressor { regressors, offsets };
    let mut keypoints = Vec::with_capacity(n * KEYPOINTS_PER_PART);
    for part in 0..n {
        for _ in 0..KEYPOINTS_PER_PART {
            let id = keypoints.len();
            let vertex_reg = &regressor.regressors[part] + uniform_matrix(&mut rng, p, 0.2 * REGRESSOR_RANGE);
            let vertex = regressor.offsets[part] + unit(&mut rng) * rng.gen_range(0.05..=0.25);
            keypoints.push(attach_rest_keypoint(id, part, &vertex_reg, &vertex, &regressor)?);
        }
    }
    let tree = KinematicTree::from_regressor(parents, &regressor, keypoints)?;
    Ok(SyntheticModel { tree, regressor })
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 }
}

fn random_rotation_vector(rng: &mut ChaCha8Rng, max_angle: f64) -> Vector3<f64> {
    unit(rng) * rng.gen_range(0.0..=max_angle)
}

/// Ground truth in front of the camera with joint angles up to [`MAX_JOINT_ANGLE`].
pub fn sample_state(tree: &KinematicTree, seed: u64) -> ModelState {
    let mut rng = rng_for(seed, 1);
    let root = Pose::new(
        so3_exp(&random_rotation_vector(&mut rng, 0.5)),
        Vector3::new(rng.gen_range(-0.2..=0.2), rng.gen_range(-0.2..=0.2), ROOT_DEPTH),
    );
    let joints = (0..tree.num_joints()).map(|_| so3_exp(&random_rotation_vector(&mut rng, MAX_JOINT_ANGLE))).collect();
    let shape = DVector::from_fn(tree.num_shape_params, |_, _| rng.gen_range(-1.0..=1.0));
    ModelState { root, joints, shape }
}

/// `truth` with every joint turned by a random rotation of at most `max_angle`.
pub fn jitter_state(truth: &ModelState, max_angle: f64, seed: u64) -> ModelState {
    let mut rng = rng_for(seed, 3);
    let joints = truth.joints.iter().map(|w| w.compose(&so3_exp(&random_rotation_vector(&mut rng, max_angle)))).collect();
    ModelState { joints, ..truth.clone() }
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub problem: Problem,
    pub truth: ModelState,
}

/// Renders `spec.measurements` measurements of a sampled truth, round-robin
/// over parts with keypoints and then over kinds (2D, 3D, direction), and
/// adds Gaussian noise. Priors are centered at the truth, so the noiseless
/// truth has zero objective.
pub fn generate_problem(tree: &KinematicTree, spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    spec.validate()?;
    let truth = sample_state(tree, spec.seed);
    let view = forward_kinematics(&truth, tree);
    let camera = default_camera();
    let mut rng = rng_for(spec.seed, 2);
    let n2 = Normal::new(0.0, spec.noise_2d).map_err(|e| Error::Invalid(e.to_string()))?;
    let n3 = Normal::new(0.0, spec.noise_3d).map_err(|e| Error::Invalid(e.to_string()))?;
    let npof = Normal::new(0.0, spec.noise_pof).map_err(|e| Error::Invalid(e.to_string()))?;

    let mut by_part: Vec<Vec<usize>> = vec![Vec::new(); tree.num_parts()];
    for (k, att) in tree.keypoints.iter().enumerate() {
        by_part[att.body_part].push(k);
    }
    let parts: Vec<usize> = (0..tree.num_parts()).filter(|&i| !by_part[i].is_empty()).collect();
    if parts.is_empty() && spec.measurements > 0 {
        return Err(Error::Invalid("model has no keypoints to measure".into()));
    }

    let mut measurements = Vec::with_capacity(spec.measurements);
    for m in 0..spec.measurements {
        let l = parts.len();
        let part = parts[m % l];
        let kind = (m / l) % 3;
        let kps = &by_part[part];
        let att = &tree.keypoints[kps[(m / (3 * l)) % kps.len()]];
        let v = keypoint_position(&view, att, &truth.shape);
        let d = v - view.poses[part].translation;
        let observation = match kind {
            0 if v.z > MIN_DEPTH => {
                let px = camera.project(&v);
                Observation::Keypoint2D(px + Vector2::new(n2.sample(&mut rng), n2.sample(&mut rng)))
            }
            2 if d.norm() > MIN_BONE_LENGTH => {
                let u = d.normalize();
                let axis = u.cross(&unit(&mut rng));
                let turn = if axis.norm() > 1e-12 { so3_exp(&(axis.normalize() * npof.sample(&mut rng))) } else { so3_exp(&Vector3::zeros()) };
                Observation::Pof(turn.rotate(&u).normalize())
            }
            _ => Observation::Keypoint3D(v + Vector3::new(n3.sample(&mut rng), n3.sample(&mut rng), n3.sample(&mut rng))),
        };
        measurements.push(Measurement { keypoint: att.id, observation, weight: 1.0 });
    }

    let mut objective = ObjectiveConfig::default();
    objective.pose_priors.insert(0, truth.root);
    objective.joint_priors = (1..tree.num_parts())
        .map(|i| (i, JointPrior { mean: truth.joint(i), sqrt_weight: Matrix3::identity() }))
        .collect::<BTreeMap<_, _>>();
    objective.shape_mean = Some(truth.shape.clone());
    let problem = Problem::new(tree.clone(), camera, measurements, objective)?;
    Ok(SyntheticProblem { problem, truth })
}
