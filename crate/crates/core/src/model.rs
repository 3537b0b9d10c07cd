//! Articulated model: kinematic tree, shape-dependent bone offsets,
//! rigidly attached keypoints and forward kinematics.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{pose_compose, Pose, Rotation};

/// A keypoint rigidly attached to one body part. Its part-local position is
/// `V·β + v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointAttachment {
    pub id: usize,
    pub body_part: usize,
    /// 3×P.
    pub shape_basis: DMatrix<f64>,
    pub offset: Vector3<f64>,
}

impl KeypointAttachment {
    /// Part-local position for shape `beta`.
    pub fn local_position(&self, beta: &DVector<f64>) -> Vector3<f64> {
        let mut p = self.offset;
        if beta.len() > 0 {
            p += &self.shape_basis * beta;
        }
        p
    }
}

/// Rest-pose joint positions as an affine function of shape: `t̄_i = J_i β + c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRegressor {
    /// One 3×P matrix per part, root included.
    pub regressors: Vec<DMatrix<f64>>,
    pub offsets: Vec<Vector3<f64>>,
}

impl JointRegressor {
    pub fn rest_position(&self, i: usize, beta: &DVector<f64>) -> Vector3<f64> {
        let mut p = self.offsets[i];
        if beta.len() > 0 {
            p += &self.regressors[i] * beta;
        }
        p
    }
}

/// Per-part shape basis `(S_i, l_i)` with `S_i = J_i − J_par(i)` and
/// `l_i = c_i − c_par(i)`. Entry 0 (the root) is zero.
pub fn extract_shape_basis(
    reg: &JointRegressor,
    parents: &[Option<usize>],
) -> Result<(Vec<DMatrix<f64>>, Vec<Vector3<f64>>)> {
    let n = parents.len();
    if reg.regressors.len() != n || reg.offsets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "regressor has {} matrices and {} offsets for {} parts",
            reg.regressors.len(),
            reg.offsets.len(),
            n
        )));
    }
    let p = reg.regressors.first().map_or(0, |m| m.ncols());
    if let Some(bad) = reg.regressors.iter().position(|m| m.nrows() != 3 || m.ncols() != p) {
        return Err(Error::DimensionMismatch(format!("regressor {bad} is not 3×{p}")));
    }
    let mut basis = vec![DMatrix::zeros(3, p)];
    let mut offsets = vec![Vector3::zeros()];
    for i in 1..n {
        let par = parents[i].filter(|&q| q < n).ok_or_else(|| Error::Invalid(format!("part {i} has no valid parent")))?;
        basis.push(&reg.regressors[i] - &reg.regressors[par]);
        offsets.push(reg.offsets[i] - reg.offsets[par]);
    }
    Ok((basis, offsets))
}

/// Keypoint attachment from a rest-pose vertex regressor: the part-local
/// position is the vertex position relative to the part origin at rest.
pub fn attach_rest_keypoint(
    id: usize,
    body_part: usize,
    vertex_regressor: &DMatrix<f64>,
    vertex_offset: &Vector3<f64>,
    joints: &JointRegressor,
) -> Result<KeypointAttachment> {
    let pair = JointRegressor {
        regressors: vec![joints.regressors[body_part].clone(), vertex_regressor.clone()],
        offsets: vec![joints.offsets[body_part], *vertex_offset],
    };
    let (basis, offsets) = extract_shape_basis(&pair, &[None, Some(0)])?;
    Ok(KeypointAttachment { id, body_part, shape_basis: basis[1].clone(), offset: offsets[1] })
}

/// Tree of `K + 1` body parts connected by `K` rotational joints.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    /// `parents[0]` is `None`; every other part points at a lower index.
    pub parents: Vec<Option<usize>>,
    pub num_shape_params: usize,
    /// `S_i` (3×P) per part; entry 0 is unused and zero.
    pub shape_basis: Vec<DMatrix<f64>>,
    /// `l_i` per part; entry 0 is unused and zero.
    pub bone_offsets: Vec<Vector3<f64>>,
    pub keypoints: Vec<KeypointAttachment>,
    children: Vec<Vec<usize>>,
    keypoint_index: HashMap<usize, usize>,
}

impl KinematicTree {
    /// Build and validate.
    pub fn new(
        parents: Vec<Option<usize>>,
        num_shape_params: usize,
        shape_basis: Vec<DMatrix<f64>>,
        bone_offsets: Vec<Vector3<f64>>,
        keypoints: Vec<KeypointAttachment>,
    ) -> Result<Self> {
        let tree = Self::new_unchecked(parents, num_shape_params, shape_basis, bone_offsets, keypoints);
        validate_tree(&tree)?;
        Ok(tree)
    }

    /// Build from a joint regressor.
    pub fn from_regressor(
        parents: Vec<Option<usize>>,
        reg: &JointRegressor,
        keypoints: Vec<KeypointAttachment>,
    ) -> Result<Self> {
        let (basis, offsets) = extract_shape_basis(reg, &parents)?;
        let p = basis[0].ncols();
        Self::new(parents, p, basis, offsets, keypoints)
    }

    /// Build without validation; see [`validate_tree`].
    pub fn new_unchecked(
        parents: Vec<Option<usize>>,
        num_shape_params: usize,
        shape_basis: Vec<DMatrix<f64>>,
        bone_offsets: Vec<Vector3<f64>>,
        keypoints: Vec<KeypointAttachment>,
    ) -> Self {
        let mut children = vec![Vec::new(); parents.len()];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p < parents.len() && p != i {
                    children[p].push(i);
                }
            }
        }
        let keypoint_index = keypoints.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
        KinematicTree { parents, num_shape_params, shape_basis, bone_offsets, keypoints, children, keypoint_index }
    }

    /// `K`, the number of joints.
    pub fn num_joints(&self) -> usize {
        self.parents.len().saturating_sub(1)
    }

    /// `K + 1`.
    pub fn num_parts(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn keypoint(&self, id: usize) -> Option<&KeypointAttachment> {
        self.keypoint_index.get(&id).map(|&k| &self.keypoints[k])
    }

    /// Parent-relative offset `S_i β + l_i`.
    pub fn bone_vector(&self, i: usize, beta: &DVector<f64>) -> Vector3<f64> {
        let mut t = self.bone_offsets[i];
        if beta.len() > 0 {
            t += &self.shape_basis[i] * beta;
        }
        t
    }

    /// Parts on the path from the root to `i`, root first.
    pub fn path_to(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

/// Check every tree invariant; returns the first violation found.
pub fn validate_tree(tree: &KinematicTree) -> Result<()> {
    let n = tree.parents.len();
    let p = tree.num_shape_params;
    if n == 0 {
        return Err(Error::DimensionMismatch("tree has no parts".into()));
    }
    if tree.parents[0].is_some() {
        return Err(Error::Invalid("root part must not have a parent".into()));
    }
    if tree.shape_basis.len() != n || tree.bone_offsets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} shape bases and {} offsets for {} parts",
            tree.shape_basis.len(),
            tree.bone_offsets.len(),
            n
        )));
    }
    if let Some(i) = tree.shape_basis.iter().position(|s| s.nrows() != 3 || s.ncols() != p) {
        return Err(Error::DimensionMismatch(format!("shape basis of part {i} is not 3×{p}")));
    }
    for i in 1..n {
        match tree.parents[i] {
            None => return Err(Error::Invalid(format!("part {i} has no parent"))),
            Some(q) if q >= n => return Err(Error::Invalid(format!("part {i} has parent {q} out of range"))),
            _ => {}
        }
    }
    // A walk longer than n steps must revisit a part.
    for i in 1..n {
        let mut cur = i;
        let mut steps = 0;
        while let Some(q) = tree.parents[cur] {
            steps += 1;
            if q == i || steps > n {
                return Err(Error::CycleDetected(i));
            }
            cur = q;
        }
    }
    for i in 1..n {
        let q = tree.parents[i].unwrap();
        if q >= i {
            return Err(Error::NonTopologicalOrder { child: i, parent: q });
        }
    }
    let mut seen = HashMap::new();
    for att in &tree.keypoints {
        if att.body_part >= n {
            return Err(Error::BadAttachment { keypoint: att.id, body_part: att.body_part });
        }
        if att.shape_basis.nrows() != 3 || att.shape_basis.ncols() != p {
            return Err(Error::DimensionMismatch(format!("keypoint {} basis is not 3×{p}", att.id)));
        }
        if seen.insert(att.id, ()).is_some() {
            return Err(Error::Invalid(format!("duplicate keypoint id {}", att.id)));
        }
    }
    Ok(())
}

/// Root pose, joint rotations `Ω_1..Ω_K` and shape `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub root: Pose,
    /// `joints[i - 1]` is `Ω_i`.
    pub joints: Vec<Rotation>,
    pub shape: DVector<f64>,
}

impl ModelState {
    pub fn rest(tree: &KinematicTree) -> Self {
        ModelState {
            root: Pose::identity(),
            joints: vec![Rotation::identity(); tree.num_joints()],
            shape: DVector::zeros(tree.num_shape_params),
        }
    }

    /// `Ω_i` for `i ≥ 1`; the root's dummy joint is the identity.
    pub fn joint(&self, i: usize) -> Rotation {
        if i == 0 {
            Rotation::identity()
        } else {
            self.joints[i - 1]
        }
    }

    pub fn check_dims(&self, tree: &KinematicTree) -> Result<()> {
        if self.joints.len() != tree.num_joints() || self.shape.len() != tree.num_shape_params {
            return Err(Error::DimensionMismatch(format!(
                "state has {} joints and {} shape params, tree has {} and {}",
                self.joints.len(),
                self.shape.len(),
                tree.num_joints(),
                tree.num_shape_params
            )));
        }
        let finite = self.shape.iter().all(|v| v.is_finite())
            && self.root.translation.iter().all(|v| v.is_finite())
            && std::iter::once(&self.root.rotation).chain(&self.joints).all(|r| r.matrix().iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Invalid("state has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Per-part poses and shape copies of the constrained formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PartStateView {
    pub poses: Vec<Pose>,
    /// `joints[0]` is the identity.
    pub joints: Vec<Rotation>,
    pub betas: Vec<DVector<f64>>,
}

impl PartStateView {
    pub fn num_parts(&self) -> usize {
        self.poses.len()
    }
}

/// `T_par(i),i = (Ω_i, S_i β + l_i)`.
pub fn relative_pose(omega: &Rotation, beta: &DVector<f64>, tree: &KinematicTree, i: usize) -> Result<Pose> {
    if i == 0 {
        return Err(Error::RootHasNoRelativePose);
    }
    Ok(Pose::new(*omega, tree.bone_vector(i, beta)))
}

/// Top-down pose recursion `T_i = T_par(i) · T_par(i),i`.
pub fn forward_kinematics(state: &ModelState, tree: &KinematicTree) -> PartStateView {
    let n = tree.num_parts();
    let mut poses = Vec::with_capacity(n);
    poses.push(state.root);
    for i in 1..n {
        let parent = poses[tree.parents[i].expect("validated tree")];
        let rel = Pose::new(state.joints[i - 1], tree.bone_vector(i, &state.shape));
        poses.push(pose_compose(&parent, &rel));
    }
    let mut joints = Vec::with_capacity(n);
    joints.push(Rotation::identity());
    joints.extend_from_slice(&state.joints);
    PartStateView { poses, joints, betas: vec![state.shape.clone(); n] }
}

/// `v_j = R_i (V_j β + v0_j) + t_i`.
pub fn keypoint_position(view: &PartStateView, att: &KeypointAttachment, beta: &DVector<f64>) -> Vector3<f64> {
    view.poses[att.body_part].transform_point(&att.local_position(beta))
}
