#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treefit::geometry::{so3_exp, Pose, Rotation};
use treefit::harness::synth::{generate_model, generate_problem, jitter_state, SyntheticSpec, Topology};
use treefit::model::{KinematicTree, ModelState, PartStateView};
use treefit::residuals::Problem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec3(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half))
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation {
    let axis = random_vec3(rng, 1.0).normalize();
    so3_exp(&(axis * rng.gen_range(0.0..max_angle)))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(random_rotation(rng, 3.0), random_vec3(rng, 2.0))
}

pub fn topology_for(k: usize) -> Topology {
    match k {
        23 => Topology::SmplLike23,
        51 => Topology::SmplhLike51,
        _ => Topology::RandomTree,
    }
}

/// Generated problem plus a state away from the truth: joints turned by up
/// to 0.3 rad, root nudged, shape offset.
pub fn instance(k: usize, p: usize, n: usize, seed: u64, noisy: bool) -> (Problem, ModelState, ModelState) {
    let spec = SyntheticSpec {
        joints: k,
        shape_params: p,
        measurements: n,
        noise_2d: if noisy { 1.0 } else { 0.0 },
        noise_3d: if noisy { 0.01 } else { 0.0 },
        noise_pof: if noisy { 0.01 } else { 0.0 },
        seed,
        topology: topology_for(k),
    };
    let model = generate_model(&spec).unwrap();
    let sp = generate_problem(&model.tree, &spec).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let mut state = jitter_state(&sp.truth, 0.3, seed);
    state.root = Pose::new(state.root.rotation.compose(&random_rotation(&mut r, 0.1)), state.root.translation + random_vec3(&mut r, 0.05));
    state.shape += DVector::from_fn(p, |_, _| r.gen_range(-0.2..0.2));
    (sp.problem, sp.truth, state)
}

/// World pose of part `i` as a product of homogeneous matrices along the
/// root-to-`i` path, without the recursive forward kinematics.
pub fn path_product(tree: &KinematicTree, state: &ModelState, i: usize) -> Matrix4<f64> {
    let mut chain = Vec::new();
    let mut q = i;
    while let Some(par) = tree.parents[q] {
        chain.push(q);
        q = par;
    }
    let mut m = state.root.to_homogeneous();
    for &j in chain.iter().rev() {
        let mut rel = Matrix4::identity();
        rel.fixed_view_mut::<3, 3>(0, 0).copy_from(state.joints[j - 1].matrix());
        let t = &tree.shape_basis[j] * &state.shape;
        let t = tree.bone_offsets[j] + Vector3::new(t[0], t[1], t[2]);
        rel.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m *= rel;
    }
    m
}

/// `view` with part `i` perturbed by `δ = (ξ (6), Δβ (P), Δω (3))`.
pub fn perturb_part(view: &PartStateView, i: usize, delta: &DVector<f64>) -> PartStateView {
    let p = view.betas[i].len();
    let mut v = view.clone();
    let xi = nalgebra::Vector6::from_column_slice(&delta.as_slice()[..6]);
    v.poses[i] = v.poses[i].retract(&xi);
    v.betas[i] += delta.rows(6, p);
    v.joints[i] = v.joints[i].retract(&Vector3::new(delta[6 + p], delta[7 + p], delta[8 + p]));
    v
}

/// `‖A − B‖_F / max(‖B‖_F, 1)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn random_spd3(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    m * m.transpose() + Matrix3::identity() * 0.5
}
