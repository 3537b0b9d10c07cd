//! Gauss-Newton direction of the constrained per-part formulation by dynamic
//! programming on the kinematic tree.
//!
//! Every part carries `x_i = (T_i, β_i)` and `Ω_i`, tied by
//! `Δx_i = A_i Δx_par + B_i ΔΩ_i`. A backward sweep (leaves to root)
//! eliminates `ΔΩ_i` and `Δx_i` into a quadratic cost-to-go on the parent,
//! the root solves a `(6+P)` system, and a forward sweep recovers the
//! eliminated directions. Work is linear in both `K` and `N`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{forward_kinematics, KinematicTree, ModelState};
use crate::residuals::{all_constraint_derivatives, linearize, ConstraintDerivatives, Problem, ResidualBlock, SkipCounts};
use crate::solver_dense::{smallest_pivot, DenseLayout};

/// Relative pivot threshold of the 3×3 joint-block factorization.
pub const Q22_PIVOT_TOL: f64 = 1e-14;

/// Local quadratic of one part: `H11 = J1ᵀJ1`, `H21 = J2ᵀJ1`, `H22 = J2ᵀJ2`,
/// `g1 = J1ᵀr`, `g2 = J2ᵀr`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeQuadratic {
    pub h11: DMatrix<f64>,
    pub h21: DMatrix<f64>,
    pub h22: Matrix3<f64>,
    pub g1: DVector<f64>,
    pub g2: Vector3<f64>,
}

impl NodeQuadratic {
    pub fn from_block(b: &ResidualBlock) -> Self {
        let j2t = b.j2.transpose();
        let h22 = &j2t * &b.j2;
        let g2 = &j2t * &b.residual;
        NodeQuadratic {
            h11: b.j1.tr_mul(&b.j1),
            h21: &j2t * &b.j1,
            h22: Matrix3::from_iterator(h22.iter().copied()),
            g1: b.j1.tr_mul(&b.residual),
            g2: Vector3::new(g2[0], g2[1], g2[2]),
        }
    }
}

pub fn build_node_quadratics(blocks: &[ResidualBlock]) -> Vec<NodeQuadratic> {
    blocks.iter().map(NodeQuadratic::from_block).collect()
}

/// Products with `A_i` and `B_i` needed by the sweeps.
///
/// Implementations must accumulate every entry in increasing inner index
/// order so structured and materialized forms agree exactly.
pub trait ConstraintOps {
    fn width(&self) -> usize;
    /// `m A` for `m` with `width` columns.
    fn mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Aᵀ m` for `m` with `width` rows.
    fn tr_mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
    fn a_vec(&self, v: &DVector<f64>) -> DVector<f64>;
    fn tr_a_vec(&self, v: &DVector<f64>) -> DVector<f64>;
    /// `m B`.
    fn mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Bᵀ m`.
    fn tr_mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
    fn b_vec(&self, v: &Vector3<f64>) -> DVector<f64>;
    fn tr_b_vec(&self, v: &DVector<f64>) -> Vector3<f64>;
}

/// Uses only the nonzero blocks of `A_i`, `B_i`.
impl ConstraintOps for ConstraintDerivatives {
    fn width(&self) -> usize {
        6 + self.shape_block.ncols()
    }

    fn mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.width();
        let rows = m.nrows();
        let mut out = DMatrix::zeros(rows, w);
        for c in 0..w {
            for r in 0..rows {
                let mut s = 0.0;
                for k in 0..6 {
                    s += m[(r, k)] * if c < 6 { self.pose_block[(k, c)] } else { self.shape_block[(k, c - 6)] };
                }
                if c >= 6 {
                    s += m[(r, c)];
                }
                out[(r, c)] = s;
            }
        }
        out
    }

    fn tr_mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.width();
        let cols = m.ncols();
        let mut out = DMatrix::zeros(w, cols);
        for c in 0..cols {
            for r in 0..w {
                let mut s = 0.0;
                for k in 0..6 {
                    s += if r < 6 { self.pose_block[(k, r)] } else { self.shape_block[(k, r - 6)] } * m[(k, c)];
                }
                if r >= 6 {
                    s += m[(r, c)];
                }
                out[(r, c)] = s;
            }
        }
        out
    }

    fn a_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = self.width();
        let mut out = DVector::zeros(w);
        for r in 0..6 {
            let mut s = 0.0;
            for k in 0..6 {
                s += self.pose_block[(r, k)] * v[k];
            }
            for k in 6..w {
                s += self.shape_block[(r, k - 6)] * v[k];
            }
            out[r] = s;
        }
        for r in 6..w {
            out[r] = v[r];
        }
        out
    }

    fn tr_a_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = self.width();
        let mut out = DVector::zeros(w);
        for r in 0..w {
            let mut s = 0.0;
            for k in 0..6 {
                s += if r < 6 { self.pose_block[(k, r)] } else { self.shape_block[(k, r - 6)] } * v[k];
            }
            if r >= 6 {
                s += v[r];
            }
            out[r] = s;
        }
        out
    }

    fn mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.columns(0, 3).into_owned()
    }

    fn tr_mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.rows(0, 3).into_owned()
    }

    fn b_vec(&self, v: &Vector3<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.width());
        out.rows_mut(0, 3).copy_from(v);
        out
    }

    fn tr_b_vec(&self, v: &DVector<f64>) -> Vector3<f64> {
        Vector3::new(v[0], v[1], v[2])
    }
}

/// Full dense `A_i`, `B_i` multiplied with naive loops. Debug counterpart of
/// the structured products.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedConstraint {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl From<&ConstraintDerivatives> for MaterializedConstraint {
    fn from(d: &ConstraintDerivatives) -> Self {
        MaterializedConstraint { a: d.a_matrix(), b: d.b_matrix() }
    }
}

fn naive_mul(x: &DMatrix<f64>, y: &DMatrix<f64>, tx: bool) -> DMatrix<f64> {
    let (rows, inner) = if tx { (x.ncols(), x.nrows()) } else { (x.nrows(), x.ncols()) };
    let mut out = DMatrix::zeros(rows, y.ncols());
    for c in 0..y.ncols() {
        for r in 0..rows {
            let mut s = 0.0;
            for k in 0..inner {
                s += if tx { x[(k, r)] } else { x[(r, k)] } * y[(k, c)];
            }
            out[(r, c)] = s;
        }
    }
    out
}

impl ConstraintOps for MaterializedConstraint {
    fn width(&self) -> usize {
        self.a.nrows()
    }

    fn mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        naive_mul(m, &self.a, false)
    }

    fn tr_mul_a(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        naive_mul(&self.a, m, true)
    }

    fn a_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = naive_mul(&self.a, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), false);
        DVector::from_column_slice(m.as_slice())
    }

    fn tr_a_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = naive_mul(&self.a, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), true);
        DVector::from_column_slice(m.as_slice())
    }

    fn mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        naive_mul(m, &self.b, false)
    }

    fn tr_mul_b(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        naive_mul(&self.b, m, true)
    }

    fn b_vec(&self, v: &Vector3<f64>) -> DVector<f64> {
        let m = naive_mul(&self.b, &DMatrix::from_column_slice(3, 1, v.as_slice()), false);
        DVector::from_column_slice(m.as_slice())
    }

    fn tr_b_vec(&self, v: &DVector<f64>) -> Vector3<f64> {
        let m = naive_mul(&self.b, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), true);
        Vector3::new(m[0], m[1], m[2])
    }
}

/// Elimination result of part `i ≥ 1`: `ΔΩ_i = K Δx_par + k` and the
/// cost-to-go `½ΔxᵀMΔx + mᵀΔx + ΔE` handed to the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTerms {
    pub gain: DMatrix<f64>,
    pub feedforward: Vector3<f64>,
    pub m_mat: DMatrix<f64>,
    pub m_vec: DVector<f64>,
    pub delta_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSweep {
    /// Entry 0 is `None`.
    pub gains: Vec<Option<GainTerms>>,
    /// `M_0 = H_{0,11} + λI + Σ M_j`.
    pub root_m: DMatrix<f64>,
    pub root_v: DVector<f64>,
    /// Decrease accumulated from the root's children.
    pub root_delta_e_bar: f64,
}

// LDLᵀ of a symmetric 3×3; `Err(pivot)` when not positive definite.
struct Ldl3 {
    l10: f64,
    l20: f64,
    l21: f64,
    d: [f64; 3],
}

impl Ldl3 {
    fn factor(a: &Matrix3<f64>) -> std::result::Result<Self, f64> {
        let scale = a[(0, 0)].abs().max(a[(1, 1)].abs()).max(a[(2, 2)].abs());
        let ok = |p: f64| p.is_finite() && p > Q22_PIVOT_TOL * scale;
        let d0 = a[(0, 0)];
        if !ok(d0) {
            return Err(d0);
        }
        let l10 = a[(1, 0)] / d0;
        let l20 = a[(2, 0)] / d0;
        let d1 = a[(1, 1)] - l10 * l10 * d0;
        if !ok(d1) {
            return Err(d1);
        }
        let l21 = (a[(2, 1)] - l20 * l10 * d0) / d1;
        let d2 = a[(2, 2)] - l20 * l20 * d0 - l21 * l21 * d1;
        if !ok(d2) {
            return Err(d2);
        }
        Ok(Ldl3 { l10, l20, l21, d: [d0, d1, d2] })
    }

    fn solve(&self, b: [f64; 3]) -> [f64; 3] {
        let y0 = b[0];
        let y1 = b[1] - self.l10 * y0;
        let y2 = b[2] - self.l20 * y0 - self.l21 * y1;
        let z = [y0 / self.d[0], y1 / self.d[1], y2 / self.d[2]];
        let x2 = z[2];
        let x1 = z[1] - self.l21 * x2;
        let x0 = z[0] - self.l10 * x1 - self.l20 * x2;
        [x0, x1, x2]
    }
}

/// Leaf-to-root elimination. `ops[i]` describes `A_i`, `B_i` (entry 0 unused).
/// Damping `λ` is added to every `H_{i,22}` and to the root's `H_{0,11}`,
/// which is the same as adding `λI` to the unconstrained normal equations.
pub fn backward_sweep<C: ConstraintOps>(
    quads: &[NodeQuadratic],
    ops: &[C],
    tree: &KinematicTree,
    damping: f64,
) -> Result<BackwardSweep> {
    let n = tree.num_parts();
    if quads.len() != n || ops.len() != n {
        return Err(Error::DimensionMismatch("one quadratic and one constraint per part".into()));
    }
    let mut n11: Vec<DMatrix<f64>> = quads.iter().map(|q| q.h11.clone()).collect();
    let mut n1: Vec<DVector<f64>> = quads.iter().map(|q| q.g1.clone()).collect();
    let mut de_bar = vec![0.0; n];
    let mut gains: Vec<Option<GainTerms>> = vec![None; n];

    for i in (1..n).rev() {
        let par = tree.parents[i].ok_or(Error::RootHasNoConstraint)?;
        let q = &quads[i];
        let op = &ops[i];
        let big_n11 = &n11[i];

        let t = op.mul_a(big_n11);
        let q11 = op.tr_mul_a(&t);
        let n11b = op.mul_b(big_n11);
        let q21 = op.tr_mul_b(&t) + op.mul_a(&q.h21);
        let n21b = op.mul_b(&q.h21);
        let bn11b = op.tr_mul_b(&n11b);
        let mut q22 = q.h22;
        for r in 0..3 {
            for c in 0..3 {
                q22[(r, c)] += bn11b[(r, c)] + n21b[(r, c)] + n21b[(c, r)];
            }
            q22[(r, r)] += damping;
        }
        let q1 = op.tr_a_vec(&n1[i]);
        let q2 = op.tr_b_vec(&n1[i]) + q.g2;

        let ldl = Ldl3::factor(&q22).map_err(|pivot| Error::IndefiniteQ22 { node: i, pivot })?;
        let w = op.width();
        let mut gain = DMatrix::zeros(3, w);
        for c in 0..w {
            let x = ldl.solve([q21[(0, c)], q21[(1, c)], q21[(2, c)]]);
            for r in 0..3 {
                gain[(r, c)] = -x[r];
            }
        }
        let kf = ldl.solve([q2[0], q2[1], q2[2]]);
        let feedforward = -Vector3::new(kf[0], kf[1], kf[2]);

        let mut m_mat = q11 + q21.tr_mul(&gain);
        let sym = (&m_mat + m_mat.transpose()) * 0.5;
        m_mat.copy_from(&sym);
        let m_vec = q1 + q21.tr_mul(&feedforward);
        let delta_e = de_bar[i] + 0.5 * q2.dot(&feedforward);

        n11[par] += &m_mat;
        n1[par] += &m_vec;
        de_bar[par] += delta_e;
        gains[i] = Some(GainTerms { gain, feedforward, m_mat, m_vec, delta_e });
    }

    let mut root_m = std::mem::replace(&mut n11[0], DMatrix::zeros(0, 0));
    for k in 0..root_m.nrows() {
        root_m[(k, k)] += damping;
    }
    Ok(BackwardSweep { gains, root_m, root_v: std::mem::take(&mut n1[0]), root_delta_e_bar: de_bar[0] })
}

/// `Δx_0 = −M_0⁻¹ m_0` and the predicted decrease `ΔE_0 = ΔĒ_0 − ½ m_0ᵀM_0⁻¹m_0`.
pub fn root_solve(m: &DMatrix<f64>, v: &DVector<f64>, delta_e_bar: f64) -> Result<(DVector<f64>, f64)> {
    let chol = if m.iter().all(|x| x.is_finite()) { m.clone().cholesky() } else { None };
    let chol = chol.ok_or_else(|| Error::SingularRoot(smallest_pivot(m)))?;
    let dx = -chol.solve(v);
    let delta_e = delta_e_bar + 0.5 * v.dot(&dx);
    Ok((dx, delta_e))
}

/// Per-part direction of the constrained problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDirection {
    /// `Δx_i = (ΔT_i, Δβ_i)`.
    pub dx: Vec<DVector<f64>>,
    /// `ΔΩ_i`; entry 0 is zero.
    pub domega: Vec<Vector3<f64>>,
    /// Predicted change of the (damped) quadratic model, ≤ 0.
    pub predicted_decrease: f64,
    pub damping: f64,
}

impl SparseDirection {
    /// Unconstrained coordinates `(ΔT_0, ΔΩ_1..ΔΩ_K, Δβ)`.
    pub fn to_dense(&self, layout: DenseLayout) -> DVector<f64> {
        let mut out = DVector::zeros(layout.dim());
        out.rows_mut(0, 6).copy_from(&self.dx[0].rows(0, 6));
        for i in 1..=layout.num_joints {
            out.rows_mut(layout.joint(i).start, 3).copy_from(&self.domega[i]);
        }
        let p = layout.num_shape_params;
        out.rows_mut(layout.shape().start, p).copy_from(&self.dx[0].rows(6, p));
        out
    }

    /// Largest violation of `Δx_i = A_i Δx_par + B_i ΔΩ_i`.
    pub fn constraint_violation<C: ConstraintOps>(&self, ops: &[C], tree: &KinematicTree) -> f64 {
        (1..tree.num_parts())
            .map(|i| {
                let par = tree.parents[i].unwrap();
                let pred = ops[i].a_vec(&self.dx[par]) + ops[i].b_vec(&self.domega[i]);
                (pred - &self.dx[i]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Root-to-leaf recovery of `ΔΩ_i` and `Δx_i`.
pub fn forward_sweep<C: ConstraintOps>(
    dx0: DVector<f64>,
    sweep: &BackwardSweep,
    ops: &[C],
    tree: &KinematicTree,
) -> (Vec<DVector<f64>>, Vec<Vector3<f64>>) {
    let n = tree.num_parts();
    let mut dx = Vec::with_capacity(n);
    let mut domega = Vec::with_capacity(n);
    dx.push(dx0);
    domega.push(Vector3::zeros());
    for i in 1..n {
        let par = tree.parents[i].expect("non-root part has a parent");
        let g = sweep.gains[i].as_ref().expect("gains for every non-root part");
        let mut dw = g.feedforward;
        for r in 0..3 {
            let mut s = 0.0;
            for c in 0..g.gain.ncols() {
                s += g.gain[(r, c)] * dx[par][c];
            }
            dw[r] += s;
        }
        let xi = ops[i].a_vec(&dx[par]) + ops[i].b_vec(&dw);
        dx.push(xi);
        domega.push(dw);
    }
    (dx, domega)
}

/// Gradient of the unconstrained objective, in [`DenseLayout`] order, by a
/// reverse sweep of `g_{i,1}` through `A_iᵀ`.
pub fn unconstrained_gradient<C: ConstraintOps>(quads: &[NodeQuadratic], ops: &[C], tree: &KinematicTree) -> DVector<f64> {
    let layout = DenseLayout::of(tree);
    let mut adj: Vec<DVector<f64>> = quads.iter().map(|q| q.g1.clone()).collect();
    let mut out = DVector::zeros(layout.dim());
    for i in (1..tree.num_parts()).rev() {
        let par = tree.parents[i].expect("non-root part has a parent");
        let gw = ops[i].tr_b_vec(&adj[i]) + quads[i].g2;
        out.rows_mut(layout.joint(i).start, 3).copy_from(&gw);
        let up = ops[i].tr_a_vec(&adj[i]);
        adj[par] += up;
    }
    let p = layout.num_shape_params;
    out.rows_mut(0, 6).copy_from(&adj[0].rows(0, 6));
    out.rows_mut(layout.shape().start, p).copy_from(&adj[0].rows(6, p));
    out
}

/// How the sweeps multiply by `A_i`, `B_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    #[default]
    Structured,
    /// Dense `(6+P)`-square matrices; for checking the structured path.
    Materialized,
}

/// Everything the sweeps need from one linearization point.
#[derive(Debug, Clone)]
pub struct SparseLinearization {
    pub quads: Vec<NodeQuadratic>,
    pub derivs: Vec<ConstraintDerivatives>,
    pub objective: f64,
    pub skipped: SkipCounts,
}

impl SparseLinearization {
    pub fn gradient(&self, tree: &KinematicTree) -> DVector<f64> {
        unconstrained_gradient(&self.quads, &self.derivs, tree)
    }
}

pub fn linearize_sparse(problem: &Problem, state: &ModelState) -> Result<SparseLinearization> {
    state.check_dims(&problem.tree)?;
    let view = forward_kinematics(state, &problem.tree);
    let lin = linearize(problem, &view)?;
    let derivs = all_constraint_derivatives(&view, &problem.tree)?;
    Ok(SparseLinearization {
        quads: build_node_quadratics(&lin.blocks),
        derivs,
        objective: lin.objective(),
        skipped: lin.skipped,
    })
}

fn solve_with<C: ConstraintOps>(quads: &[NodeQuadratic], ops: &[C], tree: &KinematicTree, damping: f64) -> Result<SparseDirection> {
    let sweep = backward_sweep(quads, ops, tree, damping)?;
    let (dx0, predicted_decrease) = root_solve(&sweep.root_m, &sweep.root_v, sweep.root_delta_e_bar)?;
    let (dx, domega) = forward_sweep(dx0, &sweep, ops, tree);
    Ok(SparseDirection { dx, domega, predicted_decrease, damping })
}

pub fn solve_sparse(lin: &SparseLinearization, tree: &KinematicTree, damping: f64, mode: ConstraintMode) -> Result<SparseDirection> {
    match mode {
        ConstraintMode::Structured => solve_with(&lin.quads, &lin.derivs, tree, damping),
        ConstraintMode::Materialized => {
            let ops: Vec<MaterializedConstraint> = lin.derivs.iter().map(MaterializedConstraint::from).collect();
            solve_with(&lin.quads, &ops, tree, damping)
        }
    }
}

/// Linearize at `state` and run both sweeps: the unit timed by the benchmarks.
pub fn gauss_newton_direction(problem: &Problem, state: &ModelState, damping: f64) -> Result<SparseDirection> {
    let lin = linearize_sparse(problem, state)?;
    solve_sparse(&lin, &problem.tree, damping, ConstraintMode::Structured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use crate::model::PartStateView;
    use crate::residuals::constraint_derivatives;

    fn two_part_tree(p: usize) -> KinematicTree {
        let basis = DMatrix::from_fn(3, p, |r, c| 0.01 * (r as f64 + 1.0) * (c as f64 - 1.0));
        KinematicTree::new(vec![None, Some(0)], p, vec![DMatrix::zeros(3, p), basis], vec![Vector3::zeros(), Vector3::new(0.1, 0.3, -0.2)], vec![]).unwrap()
    }

    fn derivs(tree: &KinematicTree) -> Vec<ConstraintDerivatives> {
        let p = tree.num_shape_params;
        let state = ModelState {
            root: crate::geometry::Pose::identity(),
            joints: vec![so3_exp(&Vector3::new(0.3, -0.5, 0.2))],
            shape: DVector::from_fn(p, |r, _| 0.1 * r as f64),
        };
        let view: PartStateView = forward_kinematics(&state, tree);
        all_constraint_derivatives(&view, tree).unwrap()
    }

    #[test]
    fn empty_block_gives_zero_quadratic() {
        let b = ResidualBlock { part: 0, residual: DVector::zeros(0), j1: DMatrix::zeros(0, 9), j2: DMatrix::zeros(0, 3) };
        let q = NodeQuadratic::from_block(&b);
        assert_eq!(q.h11, DMatrix::zeros(9, 9));
        assert_eq!(q.h21, DMatrix::zeros(3, 9));
        assert_eq!(q.h22, Matrix3::zeros());
        assert_eq!(q.g1, DVector::zeros(9));
    }

    #[test]
    fn padded_identity_gradient() {
        let mut r = DVector::zeros(9);
        r[0] = 1.0;
        let b = ResidualBlock { part: 0, residual: r.clone(), j1: DMatrix::identity(9, 9), j2: DMatrix::zeros(9, 3) };
        assert_eq!(NodeQuadratic::from_block(&b).g1, r);
    }

    #[test]
    fn structured_products_match_materialized_exactly() {
        let tree = two_part_tree(4);
        let d = &derivs(&tree)[1];
        let mat = MaterializedConstraint::from(d);
        let m = DMatrix::from_fn(10, 10, |r, c| ((r * 13 + c * 7) % 17) as f64 / 17.0 - 0.5);
        let h21 = DMatrix::from_fn(3, 10, |r, c| (r as f64 - c as f64) * 0.37);
        let v = DVector::from_fn(10, |r, _| (r as f64 * 0.7).cos());
        let w = Vector3::new(0.2, -1.0, 3.0);
        assert_eq!(d.mul_a(&m), mat.mul_a(&m));
        assert_eq!(d.mul_a(&h21), mat.mul_a(&h21));
        assert_eq!(d.tr_mul_a(&m), mat.tr_mul_a(&m));
        assert_eq!(d.a_vec(&v), mat.a_vec(&v));
        assert_eq!(d.tr_a_vec(&v), mat.tr_a_vec(&v));
        assert_eq!(d.mul_b(&m), mat.mul_b(&m));
        assert_eq!(d.tr_mul_b(&m), mat.tr_mul_b(&m));
        assert_eq!(d.b_vec(&w), mat.b_vec(&w));
        assert_eq!(d.tr_b_vec(&v), mat.tr_b_vec(&v));
        // And both are the plain matrix products.
        assert!((d.mul_a(&m) - &m * d.a_matrix()).amax() < 1e-15);
        assert!((d.tr_mul_a(&m) - d.a_matrix().transpose() * &m).amax() < 1e-15);
    }

    #[test]
    fn zero_quadratics_give_zero_gains() {
        let tree = two_part_tree(2);
        let ds = derivs(&tree);
        let zero = NodeQuadratic { h11: DMatrix::zeros(8, 8), h21: DMatrix::zeros(3, 8), h22: Matrix3::zeros(), g1: DVector::zeros(8), g2: Vector3::zeros() };
        let quads = vec![zero.clone(), zero];
        let sweep = backward_sweep(&quads, &ds, &tree, 1.0).unwrap();
        let g = sweep.gains[1].as_ref().unwrap();
        assert!(g.gain.iter().all(|v| *v == 0.0));
        assert_eq!(g.feedforward, Vector3::zeros());
        assert!(g.m_mat.iter().all(|v| *v == 0.0));
        assert_eq!(g.delta_e, 0.0);
        let (dx0, de) = root_solve(&sweep.root_m, &sweep.root_v, sweep.root_delta_e_bar).unwrap();
        assert_eq!(dx0, DVector::zeros(8));
        assert_eq!(de, 0.0);
        let (dx, dw) = forward_sweep(dx0, &sweep, &ds, &tree);
        assert!(dx.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        assert!(dw.iter().all(|x| *x == Vector3::zeros()));
    }

    #[test]
    fn indefinite_joint_block_is_reported() {
        let tree = two_part_tree(0);
        let ds = derivs(&tree);
        let zero = NodeQuadratic { h11: DMatrix::zeros(6, 6), h21: DMatrix::zeros(3, 6), h22: Matrix3::zeros(), g1: DVector::zeros(6), g2: Vector3::zeros() };
        let err = backward_sweep(&[zero.clone(), zero], &ds, &tree, 0.0).unwrap_err();
        assert!(matches!(err, Error::IndefiniteQ22 { node: 1, .. }));
    }

    #[test]
    fn root_solve_cases() {
        let m = DMatrix::identity(6, 6) * 2.0;
        let (dx, de) = root_solve(&m, &DVector::zeros(6), -0.25).unwrap();
        assert_eq!((dx, de), (DVector::zeros(6), -0.25));
        let mut e1 = DVector::zeros(6);
        e1[0] = 1.0;
        let (dx, de) = root_solve(&m, &e1, 0.0).unwrap();
        assert!((dx + &e1 * 0.5).amax() < 1e-15);
        assert!((de + 0.25).abs() < 1e-15);
        assert!(matches!(root_solve(&DMatrix::zeros(6, 6), &e1, 0.0), Err(Error::SingularRoot(_))));
    }

    #[test]
    fn ldl3_solves() {
        let a = Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0);
        let ldl = Ldl3::factor(&a).unwrap();
        let x = ldl.solve([1.0, 2.0, 3.0]);
        let r = a * Vector3::new(x[0], x[1], x[2]) - Vector3::new(1.0, 2.0, 3.0);
        assert!(r.amax() < 1e-14);
        assert!(Ldl3::factor(&Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn constraint_derivative_wrapper_is_consistent() {
        let tree = two_part_tree(3);
        let ds = derivs(&tree);
        let state = ModelState {
            root: crate::geometry::Pose::identity(),
            joints: vec![so3_exp(&Vector3::new(0.3, -0.5, 0.2))],
            shape: DVector::from_fn(3, |r, _| 0.1 * r as f64),
        };
        let view = forward_kinematics(&state, &tree);
        assert_eq!(ds[1], constraint_derivatives(&view, &tree, 1).unwrap());
    }
}
