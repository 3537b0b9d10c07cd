use nalgebra::{DVector, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use treefit::geometry::{numeric_jacobian, pose_compose, pose_retract, se3_exp, se3_log, so3_exp, so3_log, Pose, Twist};

fn vec3(max: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-max..max, -max..max, -max..max).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(1.7), vec3(3.0)).prop_map(|(w, t)| Pose::new(so3_exp(&w), t))
}

fn twist6(max: f64) -> impl Strategy<Value = Twist> {
    (vec3(max), vec3(max)).prop_map(|(w, v)| Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z))
}

proptest! {
    #[test]
    fn log_inverts_exp_up_to_three_radians(w in vec3(3.0)) {
        prop_assume!(w.norm() <= 3.0);
        prop_assert!((so3_log(&so3_exp(&w)).unwrap() - w).norm() <= 1e-10);
    }

    #[test]
    fn exp_of_log_reproduces_rotation(w in vec3(1.7)) {
        let r = so3_exp(&w);
        let back = so3_exp(&so3_log(&r).unwrap());
        prop_assert!((back.matrix() - r.matrix()).norm() <= 1e-10);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let l = pose_compose(&pose_compose(&a, &b), &c);
        let r = pose_compose(&a, &pose_compose(&b, &c));
        prop_assert!((l.to_homogeneous() - r.to_homogeneous()).amax() <= 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity(a in pose()) {
        let e = pose_compose(&a, &a.inverse());
        prop_assert!((e.to_homogeneous() - nalgebra::Matrix4::identity()).amax() <= 1e-12);
    }

    #[test]
    fn retract_of_zero_is_exact(a in pose()) {
        prop_assert_eq!(pose_retract(&a, &Twist::zeros()), a);
    }

    #[test]
    fn se3_round_trip(xi in twist6(1.5)) {
        prop_assume!(Vector3::new(xi[0], xi[1], xi[2]).norm() < 2.5);
        prop_assert!((se3_log(&se3_exp(&xi)).unwrap() - xi).norm() <= 1e-10);
    }

    // d/dε f(T ⊕ εδ) at 0 for a smooth scalar f equals the central difference.
    #[test]
    fn retraction_is_locally_linear(a in pose(), d in twist6(1.0), q in vec3(1.0)) {
        let f = |t: &Pose| t.transform_point(&q).dot(&Vector3::new(0.3, -1.2, 0.7)) + t.translation.norm_squared();
        let g = |x: &DVector<f64>| DVector::from_element(1, f(&pose_retract(&a, &(d * x[0]))));
        let fd = numeric_jacobian(g, &DVector::zeros(1), 1e-6)[0];
        // Analytic: ∂/∂ε of R(q + ε(ω×q + v)) + t + ε R v, to first order.
        let w = Vector3::new(d[0], d[1], d[2]);
        let v = Vector3::new(d[3], d[4], d[5]);
        let r = a.rotation.matrix();
        let dp = r * (w.cross(&q) + v);
        let dt = r * v;
        let exact = dp.dot(&Vector3::new(0.3, -1.2, 0.7)) + 2.0 * a.translation.dot(&dt);
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0));
    }
}

#[test]
fn orthonormality_survives_ten_thousand_operations() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut t = Pose::identity();
    for k in 0..10_000 {
        let d = Vector6::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        t = if k % 2 == 0 { pose_retract(&t, &d) } else { pose_compose(&t, &se3_exp(&d)) };
    }
    let r = t.rotation.matrix();
    assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() <= 1e-9);
    assert!((r.determinant() - 1.0).abs() <= 1e-9);
}
