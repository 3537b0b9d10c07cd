//! Rotations, rigid transforms and their tangent spaces.
//!
//! Twists are ordered `[rotation; translation]`. Every perturbation in the
//! crate is a right (body-frame) increment: `T ⊕ ξ = T · Exp(ξ)` for poses
//! and `Ω ⊕ δ = Ω · exp(δ)` for joint rotations.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this angle the exponential and logarithm use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality drift tolerated before a rotation is re-projected.
pub const DRIFT_TOLERANCE: f64 = 1e-9;

/// Tangent vector of SE(3), `[ω (rad); v (length)]`.
pub type Twist = Vector6<f64>;

/// Build a twist from its rotational and translational parts.
pub fn twist(omega: &Vector3<f64>, v: &Vector3<f64>) -> Twist {
    Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
}

/// Rotational part of a twist.
pub fn twist_rotation(xi: &Twist) -> Vector3<f64> {
    xi.fixed_rows::<3>(0).into_owned()
}

/// Translational part of a twist.
pub fn twist_translation(xi: &Twist) -> Vector3<f64> {
    xi.fixed_rows::<3>(3).into_owned()
}

/// Skew-symmetric matrix `[w]×` such that `[w]× a = w × a`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// An element of SO(3) stored as an orthonormal 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wrap a matrix without checking it. Use [`Rotation::from_matrix`] for
    /// untrusted input.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Wrap a matrix, rejecting anything that is not a proper rotation to
    /// within `tol` (Frobenius norm of `RᵀR − I`, and `|det R − 1|`).
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = Rotation(m);
        if !m.iter().all(|v| v.is_finite()) || r.orthonormality_error() > tol || (m.determinant() - 1.0).abs() > tol {
            return Err(Error::Invalid("matrix is not a rotation".into()));
        }
        Ok(r)
    }

    /// Row-major entries.
    pub fn from_row_slice(v: &[f64]) -> Self {
        Rotation(Matrix3::from_row_slice(v))
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Nearest rotation in the Frobenius sense (polar projection).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * v_t;
        }
        Rotation(r)
    }

    /// Re-project only if drift exceeds [`DRIFT_TOLERANCE`].
    pub fn renormalized(self) -> Self {
        if self.orthonormality_error() > DRIFT_TOLERANCE {
            self.orthonormalized()
        } else {
            self
        }
    }

    /// Right-multiplicative update `R · exp(δ)`.
    pub fn retract(&self, delta: &Vector3<f64>) -> Self {
        Rotation(self.0 * so3_exp(delta).0).renormalized()
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn inverse(&self) -> Self {
        let r_t = self.rotation.inverse();
        Pose::new(r_t, -(r_t.rotate(&self.translation)))
    }

    pub fn compose(&self, other: &Pose) -> Self {
        pose_compose(self, other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Pose::new(
            Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Adjoint in `[ω; v]` ordering: `T Exp(ξ) T⁻¹ = Exp(Ad_T ξ)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn retract(&self, delta: &Twist) -> Self {
        pose_retract(self, delta)
    }
}

/// `exp([ω]×)`; second-order Taylor expansion below [`SMALL_ANGLE`].
pub fn so3_exp(omega: &Vector3<f64>) -> Rotation {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + w * a + w * w * b)
}

/// Inverse of [`so3_exp`] on rotations whose angle is bounded away from π.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let trace = m.trace();
    if trace <= -1.0 + 1e-9 {
        return Err(Error::AngleNearPi);
    }
    // sin(θ)·axis from the antisymmetric part.
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let s = w.norm();
    let c = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        Ok(w * (1.0 + theta * theta / 6.0))
    } else {
        Ok(w * (theta / s))
    }
}

// (θ - sin θ)/θ³ and (1 - cos θ)/θ², with series near zero.
fn so3_coefficients(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

/// Left Jacobian of SO(3), which is also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (b, c) = so3_coefficients(omega.norm());
    let w = hat(omega);
    Matrix3::identity() + w * b + w * w * c
}

/// Right Jacobian of SO(3): `exp(ω + δ) ≈ exp(ω) exp(J_r(ω) δ)`.
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&(-omega))
}

fn inv_jacobian_coefficient(theta: f64) -> f64 {
    if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let w = hat(omega);
    Matrix3::identity() - w * 0.5 + w * w * inv_jacobian_coefficient(omega.norm())
}

/// `log(exp(ω) exp(δ)) ≈ ω + J_r⁻¹(ω) δ`.
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let w = hat(omega);
    Matrix3::identity() + w * 0.5 + w * w * inv_jacobian_coefficient(omega.norm())
}

/// SE(3) exponential of a `[ω; v]` twist.
pub fn se3_exp(xi: &Twist) -> Pose {
    let omega = twist_rotation(xi);
    Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * twist_translation(xi))
}

/// SE(3) logarithm, `[ω; v]` ordering.
pub fn se3_log(t: &Pose) -> Result<Twist> {
    let omega = so3_log(&t.rotation)?;
    let v = so3_left_jacobian_inv(&omega) * t.translation;
    Ok(twist(&omega, &v))
}

// Coupling block of the SE(3) left Jacobian in [ρ; φ] form.
fn se3_q(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < 0.1 {
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// Right Jacobian of SE(3) in `[ω; v]` ordering:
/// `Exp(ξ + δ) ≈ Exp(ξ) Exp(J_r(ξ) δ)`.
pub fn se3_right_jacobian(xi: &Twist) -> Matrix6<f64> {
    let phi = -twist_rotation(xi);
    let rho = -twist_translation(xi);
    let j = so3_left_jacobian(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&rho, &phi));
    out
}

/// `Log(Exp(ξ) Exp(δ)) ≈ ξ + J_r⁻¹(ξ) δ`.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let phi = -twist_rotation(xi);
    let rho = -twist_translation(xi);
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(j_inv * q * j_inv)));
    out
}

/// `A ∘ B`: rotation `R_A R_B`, translation `R_A t_B + t_A`.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(a.rotation.compose(&b.rotation), a.rotation.rotate(&b.translation) + a.translation)
}

/// Right-multiplicative update `T ∘ Exp(δ)`; exact identity for `δ = 0`.
pub fn pose_retract(t: &Pose, delta: &Twist) -> Pose {
    if delta.iter().all(|v| *v == 0.0) {
        return *t;
    }
    let step = se3_exp(delta);
    let out = pose_compose(t, &step);
    Pose::new(out.rotation.renormalized(), out.translation)
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, eps: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for k in 0..n {
        xp[k] = x[k] + eps;
        let fp = f(&xp);
        xp[k] = x[k] - eps;
        let fm = f(&xp);
        xp[k] = x[k];
        cols.push((fp - fm) / (2.0 * eps));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |i, j| cols[j][i])
}
