//! Loss terms as per-part residual blocks `r_i(T_i, Ω_i, β_i)` with analytic
//! block Jacobians, and the derivatives of the kinematic constraint.
//!
//! Weights enter as `√λ` row scaling, so `½‖r_i‖²` summed over parts is the
//! weighted objective and the Gauss-Newton machinery never sees a weight.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{
    hat, se3_log, se3_right_jacobian_inv, so3_log, so3_right_jacobian_inv, Pose, Rotation,
};
use crate::model::{keypoint_position, KinematicTree, PartStateView};

/// Minimum camera depth of a projectable keypoint.
pub const MIN_DEPTH: f64 = 1e-6;
/// Minimum keypoint distance from its part origin for a direction residual.
pub const MIN_BONE_LENGTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn project(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * v.x / v.z + self.cx, self.fy * v.y / v.z + self.cy)
    }
}

/// What a measurement observes about its keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    /// Pixel coordinates.
    Keypoint2D(Vector2<f64>),
    /// World position.
    Keypoint3D(Vector3<f64>),
    /// Unit direction from the part origin towards the keypoint.
    Pof(Vector3<f64>),
}

impl Observation {
    pub fn rows(&self) -> usize {
        match self {
            Observation::Keypoint2D(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub keypoint: usize,
    pub observation: Observation,
    pub weight: f64,
}

/// Scalar weights of the loss terms. 2D keypoints carry unit weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub keypoint_3d: f64,
    pub pof: f64,
    pub pose_prior: f64,
    pub joint_prior: f64,
    pub shape_prior: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { keypoint_3d: 1.0, pof: 1.0, pose_prior: 1e-2, joint_prior: 1e-2, shape_prior: 1e-2 }
    }
}

/// Quadratic geodesic prior on one joint: `r = W^½ log(Ω̂⁻¹ Ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPrior {
    pub mean: Rotation,
    pub sqrt_weight: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveConfig {
    pub weights: Weights,
    /// Pose priors `T̂_i`, keyed by part.
    pub pose_priors: BTreeMap<usize, Pose>,
    /// Joint priors keyed by joint index (≥ 1).
    pub joint_priors: BTreeMap<usize, JointPrior>,
    /// Center of the shape prior; zero when absent.
    pub shape_mean: Option<DVector<f64>>,
}

/// Everything that defines the objective for one model.
#[derive(Debug, Clone)]
pub struct Problem {
    pub tree: KinematicTree,
    pub camera: CameraIntrinsics,
    pub measurements: Vec<Measurement>,
    pub objective: ObjectiveConfig,
    by_part: Vec<Vec<usize>>,
}

impl Problem {
    pub fn new(
        tree: KinematicTree,
        camera: CameraIntrinsics,
        measurements: Vec<Measurement>,
        objective: ObjectiveConfig,
    ) -> Result<Self> {
        if !(camera.fx > 0.0 && camera.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        let w = &objective.weights;
        if [w.keypoint_3d, w.pof, w.pose_prior, w.joint_prior, w.shape_prior].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Invalid("weights must be nonnegative".into()));
        }
        let n = tree.num_parts();
        let mut by_part = vec![Vec::new(); n];
        for (k, m) in measurements.iter().enumerate() {
            let att = tree.keypoint(m.keypoint).ok_or(Error::UnknownKeypoint(m.keypoint))?;
            if !(m.weight >= 0.0) {
                return Err(Error::Invalid(format!("measurement {k} has a negative weight")));
            }
            if let Observation::Pof(p) = m.observation {
                if (p.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!("measurement {k}: direction is not unit length")));
                }
            }
            by_part[att.body_part].push(k);
        }
        if objective.pose_priors.keys().any(|&i| i >= n) {
            return Err(Error::Invalid("pose prior on a missing part".into()));
        }
        if objective.joint_priors.keys().any(|&i| i == 0 || i >= n) {
            return Err(Error::Invalid("joint prior on a missing joint".into()));
        }
        if let Some(mean) = &objective.shape_mean {
            if mean.len() != tree.num_shape_params {
                return Err(Error::DimensionMismatch("shape prior mean length".into()));
            }
        }
        Ok(Problem { tree, camera, measurements, objective, by_part })
    }

    /// Indices of the measurements whose keypoint rides on part `i`.
    pub fn measurements_of(&self, i: usize) -> &[usize] {
        &self.by_part[i]
    }

    /// Width of `x_i = (T_i, β_i)`.
    pub fn block_width(&self) -> usize {
        6 + self.tree.num_shape_params
    }
}

/// Stacked residual of one part with `J1 = ∂r/∂(T_i, β_i)` and `J2 = ∂r/∂Ω_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub part: usize,
    pub residual: DVector<f64>,
    /// `N_i × (6 + P)`.
    pub j1: DMatrix<f64>,
    /// `N_i × 3`.
    pub j2: DMatrix<f64>,
}

impl ResidualBlock {
    pub fn rows(&self) -> usize {
        self.residual.len()
    }

    pub fn cost(&self) -> f64 {
        0.5 * self.residual.norm_squared()
    }
}

/// Measurements dropped because they could not be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SkipCounts {
    pub behind_camera: usize,
    pub degenerate_bone: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.behind_camera + self.degenerate_bone
    }

    fn record(&mut self, e: &Error) {
        match e {
            Error::BehindCamera(_) => self.behind_camera += 1,
            Error::DegenerateBone(_) => self.degenerate_bone += 1,
            _ => {}
        }
    }
}

/// `Π_K(v_j) − v̂`.
pub fn residual_2d(
    view: &PartStateView,
    att: &crate::model::KeypointAttachment,
    observed: &Vector2<f64>,
    cam: &CameraIntrinsics,
) -> Result<Vector2<f64>> {
    let v = keypoint_position(view, att, &view.betas[att.body_part]);
    if v.z <= MIN_DEPTH {
        return Err(Error::BehindCamera(att.id));
    }
    Ok(cam.project(&v) - observed)
}

/// `v_j − v̂`.
pub fn residual_3d(view: &PartStateView, att: &crate::model::KeypointAttachment, observed: &Vector3<f64>) -> Vector3<f64> {
    keypoint_position(view, att, &view.betas[att.body_part]) - observed
}

/// `(v_j − t_i)/‖v_j − t_i‖ − p̂`.
pub fn residual_pof(view: &PartStateView, att: &crate::model::KeypointAttachment, observed: &Vector3<f64>) -> Result<Vector3<f64>> {
    let d = keypoint_position(view, att, &view.betas[att.body_part]) - view.poses[att.body_part].translation;
    let len = d.norm();
    if len <= MIN_BONE_LENGTH {
        return Err(Error::DegenerateBone(att.id));
    }
    Ok(d / len - observed)
}

/// Geodesic pose prior `log(T̂⁻¹ T_i)`.
pub fn residual_pose_prior(view: &PartStateView, prior: &Pose, i: usize) -> Result<Vector6<f64>> {
    se3_log(&prior.inverse().compose(&view.poses[i]))
}

/// `W^½ log(Ω̂⁻¹ Ω)`.
pub fn residual_joint_prior(omega: &Rotation, mean: &Rotation, sqrt_weight: &Matrix3<f64>) -> Result<Vector3<f64>> {
    Ok(sqrt_weight * so3_log(&mean.inverse().compose(omega))?)
}

/// `β` (or `β − β̂` with a mean).
pub fn residual_shape_prior(beta: &DVector<f64>) -> DVector<f64> {
    beta.clone()
}

// Row-major accumulator for one block.
struct BlockBuilder {
    width: usize,
    jacobians: bool,
    r: Vec<f64>,
    j1: Vec<f64>,
    j2: Vec<f64>,
}

impl BlockBuilder {
    fn new(width: usize, jacobians: bool) -> Self {
        BlockBuilder { width, jacobians, r: Vec::new(), j1: Vec::new(), j2: Vec::new() }
    }

    fn finish(self, part: usize) -> ResidualBlock {
        let n = self.r.len();
        let (j1, j2) = if self.jacobians {
            (DMatrix::from_row_slice(n, self.width, &self.j1), DMatrix::from_row_slice(n, 3, &self.j2))
        } else {
            (DMatrix::zeros(0, self.width), DMatrix::zeros(0, 3))
        };
        ResidualBlock { part, residual: DVector::from_vec(self.r), j1, j2 }
    }

    // Rows of a keypoint-based term. `grads[k]` is ∂r_k/∂v in the world
    // frame (already weighted); `translates` is false when the residual is
    // invariant to translating the part.
    fn push_keypoint_rows(
        &mut self,
        values: &[f64],
        grads: &[Vector3<f64>],
        rotation: &Matrix3<f64>,
        local: &Vector3<f64>,
        basis: &DMatrix<f64>,
        translates: bool,
    ) {
        self.r.extend_from_slice(values);
        if !self.jacobians {
            return;
        }
        for g in grads {
            let a = rotation.transpose() * g;
            let rot = local.cross(&a);
            self.j1.extend_from_slice(rot.as_slice());
            if translates {
                self.j1.extend_from_slice(a.as_slice());
            } else {
                self.j1.extend_from_slice(&[0.0; 3]);
            }
            for c in 0..basis.ncols() {
                self.j1.push(basis.column(c).dot(&a));
            }
            self.j2.extend_from_slice(&[0.0; 3]);
        }
    }

    fn push_measurement(
        &mut self,
        view: &PartStateView,
        tree: &KinematicTree,
        m: &Measurement,
        cam: &CameraIntrinsics,
        weights: &Weights,
    ) -> Result<()> {
        let att = tree.keypoint(m.keypoint).ok_or(Error::UnknownKeypoint(m.keypoint))?;
        let pose = &view.poses[att.body_part];
        let beta = &view.betas[att.body_part];
        let local = att.local_position(beta);
        let r_mat = pose.rotation.matrix();
        let v = r_mat * local + pose.translation;
        match m.observation {
            Observation::Keypoint2D(obs) => {
                if v.z <= MIN_DEPTH {
                    return Err(Error::BehindCamera(att.id));
                }
                let s = m.weight.sqrt();
                let res = (cam.project(&v) - obs) * s;
                let iz = 1.0 / v.z;
                let gx = Vector3::new(cam.fx * iz, 0.0, -cam.fx * v.x * iz * iz) * s;
                let gy = Vector3::new(0.0, cam.fy * iz, -cam.fy * v.y * iz * iz) * s;
                self.push_keypoint_rows(res.as_slice(), &[gx, gy], r_mat, &local, &att.shape_basis, true);
            }
            Observation::Keypoint3D(obs) => {
                let s = (weights.keypoint_3d * m.weight).sqrt();
                let res = (v - obs) * s;
                let grads = [Vector3::x() * s, Vector3::y() * s, Vector3::z() * s];
                self.push_keypoint_rows(res.as_slice(), &grads, r_mat, &local, &att.shape_basis, true);
            }
            Observation::Pof(obs) => {
                let d = v - pose.translation;
                let len = d.norm();
                if len <= MIN_BONE_LENGTH {
                    return Err(Error::DegenerateBone(att.id));
                }
                let s = (weights.pof * m.weight).sqrt();
                let u = d / len;
                let res = (u - obs) * s;
                // ∂u/∂d = (I − u uᵀ)/‖d‖, symmetric, so rows are its columns.
                let proj = (Matrix3::identity() - u * u.transpose()) * (s / len);
                let grads = [proj.column(0).into_owned(), proj.column(1).into_owned(), proj.column(2).into_owned()];
                self.push_keypoint_rows(res.as_slice(), &grads, r_mat, &local, &att.shape_basis, false);
            }
        }
        Ok(())
    }

    fn push_pose_prior(&mut self, view: &PartStateView, prior: &Pose, i: usize, weight: f64) -> Result<()> {
        let r = residual_pose_prior(view, prior, i)?;
        let s = weight.sqrt();
        self.r.extend((r * s).iter());
        if self.jacobians {
            let j = se3_right_jacobian_inv(&r) * s;
            for row in 0..6 {
                self.j1.extend(j.row(row).iter());
                self.j1.extend(std::iter::repeat(0.0).take(self.width - 6));
                self.j2.extend_from_slice(&[0.0; 3]);
            }
        }
        Ok(())
    }

    fn push_joint_prior(&mut self, omega: &Rotation, prior: &JointPrior, weight: f64) -> Result<()> {
        let phi = so3_log(&prior.mean.inverse().compose(omega))?;
        let s = weight.sqrt();
        self.r.extend((prior.sqrt_weight * phi * s).iter());
        if self.jacobians {
            let j = prior.sqrt_weight * so3_right_jacobian_inv(&phi) * s;
            for row in 0..3 {
                self.j1.extend(std::iter::repeat(0.0).take(self.width));
                self.j2.extend(j.row(row).iter());
            }
        }
        Ok(())
    }

    fn push_shape_prior(&mut self, beta: &DVector<f64>, mean: Option<&DVector<f64>>, weight: f64) {
        let s = weight.sqrt();
        let p = beta.len();
        for c in 0..p {
            let centered = beta[c] - mean.map_or(0.0, |m| m[c]);
            self.r.push(centered * s);
            if self.jacobians {
                self.j1.extend_from_slice(&[0.0; 6]);
                self.j1.extend((0..p).map(|k| if k == c { s } else { 0.0 }));
                self.j2.extend_from_slice(&[0.0; 3]);
            }
        }
    }
}

/// Single weighted measurement as a block on its part.
pub fn linearize_measurement(problem: &Problem, view: &PartStateView, m: &Measurement) -> Result<ResidualBlock> {
    let part = problem.tree.keypoint(m.keypoint).ok_or(Error::UnknownKeypoint(m.keypoint))?.body_part;
    let mut b = BlockBuilder::new(problem.block_width(), true);
    b.push_measurement(view, &problem.tree, m, &problem.camera, &problem.objective.weights)?;
    Ok(b.finish(part))
}

/// Weighted pose prior on part `i` as a block.
pub fn linearize_pose_prior(problem: &Problem, view: &PartStateView, prior: &Pose, i: usize) -> Result<ResidualBlock> {
    let mut b = BlockBuilder::new(problem.block_width(), true);
    b.push_pose_prior(view, prior, i, problem.objective.weights.pose_prior)?;
    Ok(b.finish(i))
}

/// Weighted joint prior on joint `i` as a block.
pub fn linearize_joint_prior(problem: &Problem, view: &PartStateView, prior: &JointPrior, i: usize) -> Result<ResidualBlock> {
    let mut b = BlockBuilder::new(problem.block_width(), true);
    b.push_joint_prior(&view.joints[i], prior, problem.objective.weights.joint_prior)?;
    Ok(b.finish(i))
}

/// Weighted shape prior as a block on the root.
pub fn linearize_shape_prior(problem: &Problem, view: &PartStateView) -> ResidualBlock {
    let mut b = BlockBuilder::new(problem.block_width(), true);
    b.push_shape_prior(&view.betas[0], problem.objective.shape_mean.as_ref(), problem.objective.weights.shape_prior);
    b.finish(0)
}

fn build_block(problem: &Problem, view: &PartStateView, i: usize, jacobians: bool, skipped: &mut SkipCounts) -> Result<ResidualBlock> {
    let obj = &problem.objective;
    let mut b = BlockBuilder::new(problem.block_width(), jacobians);
    for &k in problem.measurements_of(i) {
        let m = &problem.measurements[k];
        match b.push_measurement(view, &problem.tree, m, &problem.camera, &obj.weights) {
            Ok(()) => {}
            Err(e @ (Error::BehindCamera(_) | Error::DegenerateBone(_))) => skipped.record(&e),
            Err(e) => return Err(e),
        }
    }
    if let Some(prior) = obj.pose_priors.get(&i) {
        b.push_pose_prior(view, prior, i, obj.weights.pose_prior)?;
    }
    if i > 0 {
        if let Some(prior) = obj.joint_priors.get(&i) {
            b.push_joint_prior(&view.joints[i], prior, obj.weights.joint_prior)?;
        }
    }
    if i == 0 && problem.tree.num_shape_params > 0 && obj.weights.shape_prior > 0.0 {
        b.push_shape_prior(&view.betas[0], obj.shape_mean.as_ref(), obj.weights.shape_prior);
    }
    Ok(b.finish(i))
}

/// Stack every weighted term touching part `i`. Degenerate measurements are
/// skipped and counted in `skipped`.
pub fn assemble_block(problem: &Problem, view: &PartStateView, i: usize, skipped: &mut SkipCounts) -> Result<ResidualBlock> {
    build_block(problem, view, i, true, skipped)
}

/// Residual blocks of every part at one linearization point.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub blocks: Vec<ResidualBlock>,
    pub skipped: SkipCounts,
}

impl Linearization {
    pub fn objective(&self) -> f64 {
        self.blocks.iter().map(ResidualBlock::cost).sum()
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(ResidualBlock::rows).sum()
    }
}

pub fn linearize(problem: &Problem, view: &PartStateView) -> Result<Linearization> {
    let mut skipped = SkipCounts::default();
    let blocks = (0..problem.tree.num_parts())
        .map(|i| assemble_block(problem, view, i, &mut skipped))
        .collect::<Result<Vec<_>>>()?;
    Ok(Linearization { blocks, skipped })
}

/// `Σ_i ½‖r_i‖²` without Jacobians.
pub fn objective(problem: &Problem, view: &PartStateView) -> Result<(f64, SkipCounts)> {
    let mut skipped = SkipCounts::default();
    let mut total = 0.0;
    for i in 0..problem.tree.num_parts() {
        total += build_block(problem, view, i, false, &mut skipped)?.cost();
    }
    Ok((total, skipped))
}

/// Derivatives of `x_i = (F_i(T_par, β_par, Ω_i), β_par)`:
///
/// ```text
/// A_i = [ Ad(X⁻¹)  D ]      B_i = [ I₃ ]
///       [   0      I ]            [ 0  ]
/// ```
///
/// with `X = (Ω_i, S_i β + l_i)` and `D = [0; Ω_iᵀ S_i]`. Only the top
/// blocks are stored; the bottom rows are implied.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDerivatives {
    /// `∂F_i/∂T_par`, 6×6.
    pub pose_block: Matrix6<f64>,
    /// `∂F_i/∂β_par`, 6×P.
    pub shape_block: DMatrix<f64>,
}

impl ConstraintDerivatives {
    pub fn width(&self) -> usize {
        6 + self.shape_block.ncols()
    }

    /// Dense `(6+P)×(6+P)` A_i.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let w = self.width();
        let mut a = DMatrix::zeros(w, w);
        a.view_mut((0, 0), (6, 6)).copy_from(&self.pose_block);
        a.view_mut((0, 6), (6, w - 6)).copy_from(&self.shape_block);
        for k in 6..w {
            a[(k, k)] = 1.0;
        }
        a
    }

    /// Dense `(6+P)×3` B_i.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.width(), 3);
        for k in 0..3 {
            b[(k, k)] = 1.0;
        }
        b
    }
}

pub fn constraint_derivatives(view: &PartStateView, tree: &KinematicTree, i: usize) -> Result<ConstraintDerivatives> {
    if i == 0 {
        return Err(Error::RootHasNoConstraint);
    }
    let par = tree.parents[i].ok_or(Error::RootHasNoConstraint)?;
    let omega_t = view.joints[i].matrix().transpose();
    let offset = tree.bone_vector(i, &view.betas[par]);
    let mut pose_block = Matrix6::zeros();
    pose_block.fixed_view_mut::<3, 3>(0, 0).copy_from(&omega_t);
    pose_block.fixed_view_mut::<3, 3>(3, 3).copy_from(&omega_t);
    pose_block.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(omega_t * hat(&offset))));
    let p = tree.num_shape_params;
    let mut shape_block = DMatrix::zeros(6, p);
    if p > 0 {
        let rotated = DMatrix::from_column_slice(3, 3, omega_t.as_slice()) * &tree.shape_basis[i];
        shape_block.view_mut((3, 0), (3, p)).copy_from(&rotated);
    }
    Ok(ConstraintDerivatives { pose_block, shape_block })
}

/// Constraint derivatives for parts `1..=K`; entry 0 is a placeholder.
pub fn all_constraint_derivatives(view: &PartStateView, tree: &KinematicTree) -> Result<Vec<ConstraintDerivatives>> {
    let p = tree.num_shape_params;
    let mut out = Vec::with_capacity(tree.num_parts());
    out.push(ConstraintDerivatives { pose_block: Matrix6::identity(), shape_block: DMatrix::zeros(6, p) });
    for i in 1..tree.num_parts() {
        out.push(constraint_derivatives(view, tree, i)?);
    }
    Ok(out)
}
