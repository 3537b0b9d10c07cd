mod common;

use nalgebra::{DMatrix, DVector, Vector3};

use treefit::error::Error;
use treefit::geometry::{numeric_jacobian, se3_log, Twist};
use treefit::harness::synth::{default_camera, generate_model, SyntheticSpec, Topology};
use treefit::model::{forward_kinematics, ModelState};
use treefit::residuals::{all_constraint_derivatives, ObjectiveConfig, Problem};
use treefit::solver_dense::{self, linearize_dense, propagate_chain_rule, quadratic_model, solve_dense, DenseLayout};
use treefit::solver_sparse::{
    self, backward_sweep, linearize_sparse, solve_sparse, ConstraintMode, MaterializedConstraint,
};

use common::{instance, rel_err};

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// State moved by `dx` in dense coordinates, by direct retraction.
fn moved(state: &ModelState, layout: DenseLayout, dx: &DVector<f64>) -> ModelState {
    let root = state.root.retract(&Twist::from_column_slice(&dx.as_slice()[..6]));
    let joints = (1..=layout.num_joints)
        .map(|i| {
            let r = layout.joint(i);
            state.joints[i - 1].retract(&Vector3::new(dx[r.start], dx[r.start + 1], dx[r.start + 2]))
        })
        .collect();
    let shape = &state.shape + dx.rows(layout.shape().start, layout.num_shape_params);
    ModelState { root, joints, shape }
}

#[test]
fn chain_rule_sensitivities_match_finite_differences() {
    for seed in 0..6 {
        let p = [0, 3, 10][seed as usize % 3];
        let (problem, _, state) = instance(5, p, 0, seed, false);
        let tree = &problem.tree;
        let layout = DenseLayout::of(tree);
        let view = forward_kinematics(&state, tree);
        let sens = propagate_chain_rule(tree, &all_constraint_derivatives(&view, tree).unwrap());
        for i in 0..tree.num_parts() {
            let f = |d: &DVector<f64>| {
                let v = forward_kinematics(&moved(&state, layout, d), tree);
                DVector::from_column_slice(se3_log(&view.poses[i].inverse().compose(&v.poses[i])).unwrap().as_slice())
            };
            let fd = numeric_jacobian(f, &DVector::zeros(layout.dim()), 1e-6);
            assert!(rel_err(&sens[i], &fd) <= 1e-6, "part {i}");
            // Joints off the root path leave T_i alone.
            let path = tree.path_to(i);
            for j in 1..tree.num_parts() {
                if !path.contains(&j) {
                    assert!(sens[i].columns(layout.joint(j).start, 3).iter().all(|v| *v == 0.0), "part {i}, joint {j}");
                }
            }
        }
    }
}

#[test]
fn sparse_and_dense_directions_agree() {
    for (k, p, n) in [(2, 0, 0), (5, 3, 30), (23, 10, 120), (51, 10, 300), (23, 0, 600)] {
        for seed in 0..3 {
            let (problem, _, state) = instance(k, p, n, seed, true);
            let dense = solver_dense::gauss_newton_direction(&problem, &state, 0.0).unwrap();
            let sparse = solver_sparse::gauss_newton_direction(&problem, &state, 0.0).unwrap();
            let layout = DenseLayout::of(&problem.tree);
            let err = rel_vec(&sparse.to_dense(layout), &dense.dx);
            assert!(err <= 1e-8, "K={k} P={p} N={n}: {err:e}");
        }
    }
}

#[test]
fn damped_directions_agree() {
    for lambda in [1e-6, 1e-3, 1.0, 1e3] {
        let (problem, _, state) = instance(23, 10, 120, 7, true);
        let dense = solver_dense::gauss_newton_direction(&problem, &state, lambda).unwrap();
        let sparse = solver_sparse::gauss_newton_direction(&problem, &state, lambda).unwrap();
        let err = rel_vec(&sparse.to_dense(DenseLayout::of(&problem.tree)), &dense.dx);
        assert!(err <= 1e-9, "λ={lambda}: {err:e}");
    }
}

#[test]
fn predicted_decrease_is_the_quadratic_model() {
    for (k, p, n, lambda) in [(5, 3, 30, 0.0), (23, 10, 300, 0.0), (23, 10, 300, 0.1), (51, 0, 120, 1e-4)] {
        let (problem, _, state) = instance(k, p, n, 3, true);
        let sys = linearize_dense(&problem, &state).unwrap().system;
        let sparse = solver_sparse::gauss_newton_direction(&problem, &state, lambda).unwrap();
        let dx = sparse.to_dense(DenseLayout::of(&problem.tree));
        let model = quadratic_model(&sys, &dx, lambda);
        assert!(sparse.predicted_decrease <= 0.0);
        assert!((sparse.predicted_decrease - model).abs() <= 1e-8 * model.abs().max(1.0), "{} vs {model}", sparse.predicted_decrease);
    }
}

// The root system is the Schur complement of the dense normal equations with
// the joint coordinates eliminated.
#[test]
fn root_system_is_a_schur_complement() {
    for (k, p, lambda) in [(5, 3, 0.0), (8, 0, 1e-2), (23, 10, 0.0)] {
        let (problem, _, state) = instance(k, p, 6 * (k + 1), 11, true);
        let layout = DenseLayout::of(&problem.tree);
        let sys = linearize_dense(&problem, &state).unwrap().system;
        let keep: Vec<usize> = layout.root().chain(layout.shape()).collect();
        let elim: Vec<usize> = (6..layout.shape().start).collect();
        let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| sys.h[(rows[r], cols[c])]);
        let hxx = pick(&keep, &keep) + DMatrix::identity(keep.len(), keep.len()) * lambda;
        let hxw = pick(&keep, &elim);
        let hww = pick(&elim, &elim) + DMatrix::identity(elim.len(), elim.len()) * lambda;
        let gx = DVector::from_fn(keep.len(), |r, _| sys.g[keep[r]]);
        let gw = DVector::from_fn(elim.len(), |r, _| sys.g[elim[r]]);
        let inv = hww.clone().cholesky().unwrap();
        let m0 = &hxx - &hxw * inv.solve(&hxw.transpose());
        let v0 = &gx - &hxw * inv.solve(&gw);

        let lin = linearize_sparse(&problem, &state).unwrap();
        let sweep = backward_sweep(&lin.quads, &lin.derivs, &problem.tree, lambda).unwrap();
        assert!(rel_err(&sweep.root_m, &m0) <= 1e-9, "K={k}: {:e}", rel_err(&sweep.root_m, &m0));
        assert!(rel_vec(&sweep.root_v, &v0) <= 1e-9);
    }
}

// One joint: solve the equality-constrained quadratic through its KKT system.
#[test]
fn single_joint_matches_kkt_solution() {
    for p in [0, 3] {
        let spec = SyntheticSpec { joints: 1, shape_params: p, measurements: 12, noise_3d: 0.01, seed: 5, topology: Topology::Chain, ..Default::default() };
        let model = generate_model(&spec).unwrap();
        let sp = treefit::harness::synth::generate_problem(&model.tree, &spec).unwrap();
        let state = treefit::harness::synth::jitter_state(&sp.truth, 0.3, 5);
        let lin = linearize_sparse(&sp.problem, &state).unwrap();
        let (q0, q1) = (&lin.quads[0], &lin.quads[1]);
        let a = lin.derivs[1].a_matrix();
        let b = lin.derivs[1].b_matrix();
        let w = 6 + p;
        // z = [Δx0, Δx1, Δω, ν]
        let n = 2 * w + 3 + w;
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        kkt.view_mut((0, 0), (w, w)).copy_from(&q0.h11);
        kkt.view_mut((w, w), (w, w)).copy_from(&q1.h11);
        kkt.view_mut((2 * w, w), (3, w)).copy_from(&q1.h21);
        kkt.view_mut((w, 2 * w), (w, 3)).copy_from(&q1.h21.transpose());
        kkt.view_mut((2 * w, 2 * w), (3, 3)).copy_from(&q1.h22);
        rhs.rows_mut(0, w).copy_from(&(-&q0.g1));
        rhs.rows_mut(w, w).copy_from(&(-&q1.g1));
        rhs.rows_mut(2 * w, 3).copy_from(&(-q1.g2));
        // Δx1 − AΔx0 − BΔω = 0
        let c0 = 2 * w + 3;
        let mut cons = DMatrix::zeros(w, 2 * w + 3);
        cons.view_mut((0, 0), (w, w)).copy_from(&(-&a));
        cons.view_mut((0, w), (w, w)).fill_with_identity();
        cons.view_mut((0, 2 * w), (w, 3)).copy_from(&(-&b));
        kkt.view_mut((c0, 0), (w, 2 * w + 3)).copy_from(&cons);
        kkt.view_mut((0, c0), (2 * w + 3, w)).copy_from(&cons.transpose());
        let z = kkt.lu().solve(&rhs).unwrap();

        let d = solve_sparse(&lin, &sp.problem.tree, 0.0, ConstraintMode::Structured).unwrap();
        assert!(rel_vec(&d.dx[0], &DVector::from(z.rows(0, w))) <= 1e-8);
        assert!(rel_vec(&d.dx[1], &DVector::from(z.rows(w, w))) <= 1e-8);
        let dw = Vector3::new(z[2 * w], z[2 * w + 1], z[2 * w + 2]);
        assert!((d.domega[1] - dw).amax() <= 1e-8 * dw.amax());
    }
}

#[test]
fn materialized_constraints_give_identical_directions() {
    for (k, p, n) in [(5, 3, 30), (23, 10, 300), (51, 10, 120)] {
        let (problem, _, state) = instance(k, p, n, 2, true);
        let lin = linearize_sparse(&problem, &state).unwrap();
        let a = solve_sparse(&lin, &problem.tree, 1e-4, ConstraintMode::Structured).unwrap();
        let b = solve_sparse(&lin, &problem.tree, 1e-4, ConstraintMode::Materialized).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn directions_satisfy_the_linearized_constraint() {
    for (k, p) in [(5, 3), (23, 10), (51, 0)] {
        let (problem, _, state) = instance(k, p, 4 * (k + 1), 8, true);
        let lin = linearize_sparse(&problem, &state).unwrap();
        let d = solve_sparse(&lin, &problem.tree, 0.0, ConstraintMode::Structured).unwrap();
        let scale = d.dx.iter().map(|v| v.amax()).fold(1.0, f64::max);
        assert!(d.constraint_violation(&lin.derivs, &problem.tree) <= 1e-10 * scale);
        let ops: Vec<MaterializedConstraint> = lin.derivs.iter().map(MaterializedConstraint::from).collect();
        assert!(d.constraint_violation(&ops, &problem.tree) <= 1e-10 * scale);
    }
}

#[test]
fn adjoint_gradient_matches_dense_gradient() {
    for (k, p, n) in [(2, 0, 6), (5, 3, 30), (23, 10, 300), (51, 10, 600)] {
        let (problem, _, state) = instance(k, p, n, 4, true);
        let g = linearize_sparse(&problem, &state).unwrap().gradient(&problem.tree);
        let dense = linearize_dense(&problem, &state).unwrap().system.g;
        assert!(rel_vec(&g, &dense) <= 1e-10, "K={k}: {:e}", rel_vec(&g, &dense));
    }
}

// Without data or priors nothing pins the joints down.
#[test]
fn unobserved_problems_report_their_pivots() {
    let (problem, _, state) = instance(3, 2, 0, 1, false);
    let mut obj = ObjectiveConfig::default();
    obj.weights.shape_prior = 0.0;
    let empty = Problem::new(problem.tree.clone(), default_camera(), vec![], obj).unwrap();
    match solver_sparse::gauss_newton_direction(&empty, &state, 0.0) {
        Err(Error::IndefiniteQ22 { node, pivot }) => {
            assert_eq!(node, 3);
            assert!(pivot.abs() <= 1e-12);
        }
        other => panic!("{other:?}"),
    }
    // Damping makes both solvers well posed; with a zero gradient the step is zero.
    let d = solver_sparse::gauss_newton_direction(&empty, &state, 1e-3).unwrap();
    assert!(d.to_dense(DenseLayout::of(&empty.tree)).iter().all(|v| *v == 0.0));
    let lin = linearize_dense(&empty, &state).unwrap();
    let dense = solve_dense(&lin.system, 0.0).unwrap();
    assert!(dense.damping >= solver_dense::MIN_ESCALATED_DAMPING);
    assert!(dense.dx.iter().all(|v| *v == 0.0));
}

#[test]
fn rank_deficient_root_is_reported() {
    // Joint priors alone keep every joint block definite, but nothing pins
    // the root pose or the shape.
    let (problem, _, state) = instance(3, 2, 0, 1, false);
    let mut obj = problem.objective.clone();
    obj.pose_priors.clear();
    obj.shape_mean = None;
    obj.weights.shape_prior = 0.0;
    let bare = Problem::new(problem.tree.clone(), default_camera(), vec![], obj).unwrap();
    match solver_sparse::gauss_newton_direction(&bare, &state, 0.0) {
        Err(Error::SingularRoot(pivot)) => assert!(pivot.abs() <= 1e-9),
        other => panic!("{other:?}"),
    }
}
