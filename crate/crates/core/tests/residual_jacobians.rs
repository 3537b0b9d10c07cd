mod common;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use treefit::geometry::{numeric_jacobian, se3_log, Pose};
use treefit::harness::synth::default_camera;
use treefit::model::{forward_kinematics, keypoint_position, PartStateView};
use treefit::residuals::{
    assemble_block, constraint_derivatives, linearize_joint_prior, linearize_measurement, linearize_pose_prior,
    linearize_shape_prior, objective, Measurement, Observation, ObjectiveConfig, Problem, ResidualBlock, SkipCounts,
};

use common::{instance, perturb_part, rel_err};

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn analytic(b: &ResidualBlock) -> DMatrix<f64> {
    let (rows, w) = (b.rows(), b.j1.ncols());
    let mut j = DMatrix::zeros(rows, w + 3);
    j.view_mut((0, 0), (rows, w)).copy_from(&b.j1);
    j.view_mut((0, w), (rows, 3)).copy_from(&b.j2);
    j
}

fn check<F>(view: &PartStateView, part: usize, p: usize, f: F, block: &ResidualBlock, what: &str)
where
    F: Fn(&PartStateView) -> DVector<f64>,
{
    let g = |d: &DVector<f64>| f(&perturb_part(view, part, d));
    let fd = numeric_jacobian(g, &DVector::zeros(9 + p), EPS);
    let err = rel_err(&analytic(block), &fd);
    assert!(err <= TOL, "{what} on part {part}: relative error {err:e}");
}

fn kind(m: &Measurement) -> usize {
    match m.observation {
        Observation::Keypoint2D(_) => 0,
        Observation::Keypoint3D(_) => 1,
        Observation::Pof(_) => 2,
    }
}

#[test]
fn measurement_jacobians_match_finite_differences() {
    let mut seen = [0usize; 3];
    for seed in 0..12 {
        let p = [0, 3, 10][seed as usize % 3];
        let (problem, _, state) = instance(5, p, 36, seed, true);
        let view = forward_kinematics(&state, &problem.tree);
        for m in &problem.measurements {
            let part = problem.tree.keypoint(m.keypoint).unwrap().body_part;
            let block = linearize_measurement(&problem, &view, m).unwrap();
            check(&view, part, p, |v| linearize_measurement(&problem, v, m).unwrap().residual, &block, "measurement");
            seen[kind(m)] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c >= 100), "{seen:?}");
}

#[test]
fn prior_jacobians_match_finite_differences() {
    for seed in 0..10 {
        let p = [0, 3, 10][seed as usize % 3];
        let (problem, _, state) = instance(6, p, 0, seed, false);
        let view = forward_kinematics(&state, &problem.tree);
        let obj = &problem.objective;
        for (&i, prior) in &obj.pose_priors {
            let block = linearize_pose_prior(&problem, &view, prior, i).unwrap();
            check(&view, i, p, |v| linearize_pose_prior(&problem, v, prior, i).unwrap().residual, &block, "pose prior");
        }
        // A pose prior away from the root exercises a nonzero parent pose.
        let far = Pose::new(view.poses[3].rotation, view.poses[3].translation + Vector3::new(0.1, -0.2, 0.3));
        let block = linearize_pose_prior(&problem, &view, &far, 3).unwrap();
        check(&view, 3, p, |v| linearize_pose_prior(&problem, v, &far, 3).unwrap().residual, &block, "pose prior");
        for (&i, prior) in &obj.joint_priors {
            let block = linearize_joint_prior(&problem, &view, prior, i).unwrap();
            check(&view, i, p, |v| linearize_joint_prior(&problem, v, prior, i).unwrap().residual, &block, "joint prior");
        }
        if p > 0 {
            let block = linearize_shape_prior(&problem, &view);
            check(&view, 0, p, |v| linearize_shape_prior(&problem, v).residual, &block, "shape prior");
        }
    }
}

// x_i = (T_par · (Ω_i, S_i β + l_i), β_par), differentiated in the parent's
// tangent space and Ω_i.
#[test]
fn constraint_derivatives_match_finite_differences() {
    for seed in 0..20 {
        let p = [0, 3, 10][seed as usize % 3];
        let (problem, _, state) = instance(8, p, 0, seed, false);
        let tree = &problem.tree;
        let view = forward_kinematics(&state, tree);
        for i in 1..tree.num_parts() {
            let par = tree.parents[i].unwrap();
            let child = |d: &DVector<f64>| {
                let mut v = perturb_part(&view, par, d);
                let delta_omega = Vector3::new(d[6 + p], d[7 + p], d[8 + p]);
                v.joints[i] = view.joints[i].retract(&delta_omega);
                let rel = Pose::new(v.joints[i], tree.bone_vector(i, &v.betas[par]));
                let moved = v.poses[par].compose(&rel);
                let xi: Vector6<f64> = se3_log(&view.poses[i].inverse().compose(&moved)).unwrap();
                let mut out = DVector::zeros(6 + p);
                out.rows_mut(0, 6).copy_from(&xi);
                out.rows_mut(6, p).copy_from(&(&v.betas[par] - &view.betas[par]));
                out
            };
            let fd = numeric_jacobian(child, &DVector::zeros(9 + p), EPS);
            let d = constraint_derivatives(&view, tree, i).unwrap();
            let mut exact = DMatrix::zeros(6 + p, 9 + p);
            exact.view_mut((0, 0), (6 + p, 6 + p)).copy_from(&d.a_matrix());
            exact.view_mut((0, 6 + p), (6 + p, 3)).copy_from(&d.b_matrix());
            let err = rel_err(&exact, &fd);
            assert!(err <= TOL, "part {i}: {err:e}");
        }
    }
}

#[test]
fn objective_is_the_sum_of_its_terms() {
    for seed in 0..10 {
        let (problem, _, state) = instance(23, 10, 300, seed, true);
        let view = forward_kinematics(&state, &problem.tree);
        let obj = &problem.objective;
        let mut total = 0.0;
        for m in &problem.measurements {
            total += linearize_measurement(&problem, &view, m).unwrap().cost();
        }
        for (&i, prior) in &obj.pose_priors {
            total += linearize_pose_prior(&problem, &view, prior, i).unwrap().cost();
        }
        for (&i, prior) in &obj.joint_priors {
            total += linearize_joint_prior(&problem, &view, prior, i).unwrap().cost();
        }
        total += linearize_shape_prior(&problem, &view).cost();
        let (e, skipped) = objective(&problem, &view).unwrap();
        assert_eq!(skipped.total(), 0);
        assert!((e - total).abs() <= 1e-12 * total.max(1.0), "{e} vs {total}");
    }
}

#[test]
fn exact_3d_observation_has_zero_residual() {
    let (problem, truth, _) = instance(5, 3, 0, 4, false);
    let view = forward_kinematics(&truth, &problem.tree);
    let att = &problem.tree.keypoints[7];
    let observed = keypoint_position(&view, att, &truth.shape);
    let m = Measurement { keypoint: att.id, observation: Observation::Keypoint3D(observed), weight: 1.0 };
    let single = Problem::new(problem.tree.clone(), default_camera(), vec![m], ObjectiveConfig::default()).unwrap();
    let block = assemble_block(&single, &view, att.body_part, &mut SkipCounts::default()).unwrap();
    assert_eq!(block.rows(), 3);
    assert!(block.residual.amax() <= 1e-12);
}

#[test]
fn keypoints_behind_the_camera_are_skipped() {
    let (problem, truth, _) = instance(5, 0, 60, 2, false);
    let mut flipped = truth.clone();
    flipped.root.translation.z = -8.0;
    let only_2d: Vec<Measurement> =
        problem.measurements.iter().copied().filter(|m| matches!(m.observation, Observation::Keypoint2D(_))).collect();
    let n = only_2d.len();
    let p2 = Problem::new(problem.tree.clone(), default_camera(), only_2d, ObjectiveConfig::default()).unwrap();
    let (e, skipped) = objective(&p2, &forward_kinematics(&flipped, &p2.tree)).unwrap();
    assert_eq!(skipped.behind_camera, n);
    assert_eq!(e, 0.0);
}
