//! Reference Gauss-Newton direction of the unconstrained problem in
//! `(T_0, Ω_1..Ω_K, β)`: chain-rule Jacobians, one dense normal-equation
//! system, one Cholesky solve. `O(N n²) + O(n³)` with `n = 6 + 3K + P`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{forward_kinematics, KinematicTree, ModelState};
use crate::residuals::{all_constraint_derivatives, linearize, ConstraintDerivatives, Problem, ResidualBlock, SkipCounts};

/// Damping ceiling of the escalation loop.
pub const MAX_DAMPING: f64 = 1e6;
/// First nonzero damping tried when escalating from zero.
pub const MIN_ESCALATED_DAMPING: f64 = 1e-9;

/// Column layout `[ΔT_0 (6); ΔΩ_1..ΔΩ_K (3K); Δβ (P)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayout {
    pub num_joints: usize,
    pub num_shape_params: usize,
}

impl DenseLayout {
    pub fn of(tree: &KinematicTree) -> Self {
        DenseLayout { num_joints: tree.num_joints(), num_shape_params: tree.num_shape_params }
    }

    pub fn dim(&self) -> usize {
        6 + 3 * self.num_joints + self.num_shape_params
    }

    pub fn root(&self) -> Range<usize> {
        0..6
    }

    /// Columns of `ΔΩ_i`, `i ≥ 1`.
    pub fn joint(&self, i: usize) -> Range<usize> {
        let s = 6 + 3 * (i - 1);
        s..s + 3
    }

    pub fn shape(&self) -> Range<usize> {
        let s = 6 + 3 * self.num_joints;
        s..s + self.num_shape_params
    }
}

/// `∂T_i/∂(T_0, Ω, β)` for every part, each `6 × n` in [`DenseLayout`] order.
pub fn propagate_chain_rule(tree: &KinematicTree, derivs: &[ConstraintDerivatives]) -> Vec<DMatrix<f64>> {
    let layout = DenseLayout::of(tree);
    let n = layout.dim();
    let mut sens: Vec<DMatrix<f64>> = Vec::with_capacity(tree.num_parts());
    let mut root = DMatrix::zeros(6, n);
    root.view_mut((0, 0), (6, 6)).fill_with_identity();
    sens.push(root);
    let shape = layout.shape();
    for i in 1..tree.num_parts() {
        let par = tree.parents[i].expect("non-root part has a parent");
        let d = &derivs[i];
        let mut s = DMatrix::zeros(6, n);
        s.gemm(1.0, &d.pose_block, &sens[par], 0.0);
        if !shape.is_empty() {
            let mut cols = s.columns_mut(shape.start, shape.len());
            cols += &d.shape_block;
        }
        let c = layout.joint(i).start;
        for k in 0..3 {
            s[(k, c + k)] += 1.0;
        }
        sens.push(s);
    }
    sens
}

/// Normal equations `H = Σ J_iᵀJ_i`, `g = Σ J_iᵀr_i` of the unconstrained problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystem {
    pub layout: DenseLayout,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

/// Stacked unconstrained Jacobian and residual.
pub fn stacked_jacobian(
    blocks: &[ResidualBlock],
    sensitivities: &[DMatrix<f64>],
    layout: DenseLayout,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = layout.dim();
    let p = layout.num_shape_params;
    if blocks.len() != sensitivities.len() || blocks.len() != layout.num_joints + 1 {
        return Err(Error::DimensionMismatch("one residual block and one sensitivity per part".into()));
    }
    let rows: usize = blocks.iter().map(ResidualBlock::rows).sum();
    let mut j = DMatrix::zeros(rows, n);
    let mut r = DVector::zeros(rows);
    let mut row = 0;
    for (i, (b, s)) in blocks.iter().zip(sensitivities).enumerate() {
        let ni = b.rows();
        if ni == 0 {
            continue;
        }
        if b.j1.ncols() != 6 + p || b.j2.ncols() != 3 || s.ncols() != n {
            return Err(Error::DimensionMismatch(format!("block {i}")));
        }
        let mut ji = j.view_mut((row, 0), (ni, n));
        ji.gemm(1.0, &b.j1.columns(0, 6), s, 0.0);
        if p > 0 {
            let mut cols = ji.columns_mut(layout.shape().start, p);
            cols += b.j1.columns(6, p);
        }
        if i > 0 {
            let mut cols = ji.columns_mut(layout.joint(i).start, 3);
            cols += &b.j2;
        }
        r.rows_mut(row, ni).copy_from(&b.residual);
        row += ni;
    }
    Ok((j, r))
}

pub fn assemble_dense(blocks: &[ResidualBlock], sensitivities: &[DMatrix<f64>], layout: DenseLayout) -> Result<DenseSystem> {
    let (j, r) = stacked_jacobian(blocks, sensitivities, layout)?;
    let h = j.tr_mul(&j);
    let g = j.tr_mul(&r);
    Ok(DenseSystem { layout, h, g })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseDirection {
    pub layout: DenseLayout,
    pub dx: DVector<f64>,
    /// Damping at which the factorization succeeded.
    pub damping: f64,
}

/// Smallest pivot of an unpivoted `LDLᵀ` of `a` (diagnostic only).
pub(crate) fn smallest_pivot(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut d = vec![0.0; n];
    let mut smallest = f64::INFINITY;
    for c in 0..n {
        let mut dc = a[(c, c)];
        for k in 0..c {
            dc -= l[(c, k)] * l[(c, k)] * d[k];
        }
        d[c] = dc;
        smallest = smallest.min(dc);
        if dc == 0.0 || !dc.is_finite() {
            break;
        }
        for r in c + 1..n {
            let mut v = a[(r, c)];
            for k in 0..c {
                v -= l[(r, k)] * l[(c, k)] * d[k];
            }
            l[(r, c)] = v / dc;
        }
    }
    smallest
}

/// `Δx = −(H + λI)⁻¹ g`. A failed factorization is retried with damping
/// ×10 (starting at [`MIN_ESCALATED_DAMPING`] from zero) up to [`MAX_DAMPING`].
pub fn solve_dense(sys: &DenseSystem, damping: f64) -> Result<DenseDirection> {
    let n = sys.layout.dim();
    if sys.h.nrows() != n || sys.h.ncols() != n || sys.g.len() != n {
        return Err(Error::DimensionMismatch("dense system".into()));
    }
    let mut lambda = damping.max(0.0);
    loop {
        let mut a = sys.h.clone();
        for k in 0..n {
            a[(k, k)] += lambda;
        }
        let chol = if a.iter().all(|v| v.is_finite()) { a.clone().cholesky() } else { None };
        match chol {
            Some(c) => {
                let dx = -c.solve(&sys.g);
                return Ok(DenseDirection { layout: sys.layout, dx, damping: lambda });
            }
            None => {
                let next = if lambda == 0.0 { MIN_ESCALATED_DAMPING } else { lambda * 10.0 };
                if next > MAX_DAMPING {
                    return Err(Error::SingularSystem { smallest_pivot: smallest_pivot(&a), damping: lambda });
                }
                lambda = next;
            }
        }
    }
}

/// `½ Δxᵀ(H + λI)Δx + gᵀΔx`.
pub fn quadratic_model(sys: &DenseSystem, dx: &DVector<f64>, damping: f64) -> f64 {
    0.5 * dx.dot(&(&sys.h * dx)) + 0.5 * damping * dx.norm_squared() + sys.g.dot(dx)
}

/// The dense system at one state, with the objective it was built from.
#[derive(Debug, Clone)]
pub struct DenseLinearization {
    pub system: DenseSystem,
    pub objective: f64,
    pub skipped: SkipCounts,
}

pub fn linearize_dense(problem: &Problem, state: &ModelState) -> Result<DenseLinearization> {
    state.check_dims(&problem.tree)?;
    let view = forward_kinematics(state, &problem.tree);
    let lin = linearize(problem, &view)?;
    let derivs = all_constraint_derivatives(&view, &problem.tree)?;
    let sens = propagate_chain_rule(&problem.tree, &derivs);
    let system = assemble_dense(&lin.blocks, &sens, DenseLayout::of(&problem.tree))?;
    Ok(DenseLinearization { system, objective: lin.objective(), skipped: lin.skipped })
}

/// Linearize at `state` and solve: the unit timed by the benchmarks.
pub fn gauss_newton_direction(problem: &Problem, state: &ModelState, damping: f64) -> Result<DenseDirection> {
    solve_dense(&linearize_dense(problem, state)?.system, damping)
}
