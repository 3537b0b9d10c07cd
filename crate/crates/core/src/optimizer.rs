//! Damped Gauss-Newton outer loop over either direction backend.

use nalgebra::{DVector, Vector3};
use web_time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{twist, Pose, Rotation};
use crate::model::{forward_kinematics, ModelState};
use crate::residuals::{objective, Problem, SkipCounts};
use crate::solver_dense::{self, DenseLayout};
use crate::solver_sparse::{self, ConstraintMode};

/// Damping never goes above this; a step still rejected there stalls the run.
pub const DAMPING_CEILING: f64 = 1e6;
/// Damping used after a rejection at zero damping.
pub const DAMPING_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Sparse,
    Dense,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Backend::Sparse),
            "dense" => Ok(Backend::Dense),
            other => Err(Error::Invalid(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub backend: Backend,
    pub max_iters: usize,
    /// On `‖∇E‖∞`.
    pub gradient_tol: f64,
    /// On `‖Δx‖∞`.
    pub step_tol: f64,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Accept when the actual decrease is at least this fraction of the predicted one.
    pub accept_ratio: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            backend: Backend::Sparse,
            max_iters: 50,
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            initial_damping: 1e-4,
            damping_increase: 10.0,
            damping_decrease: 0.5,
            accept_ratio: 1e-4,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if !(self.gradient_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if !(self.initial_damping >= 0.0 && self.damping_increase > 1.0 && self.damping_decrease > 0.0 && self.damping_decrease < 1.0) {
            return Err(Error::Invalid("bad damping schedule".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    GradientTol,
    StepTol,
    MaxIters,
    Stalled,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::GradientTol => "gradient_tol",
            TerminationReason::StepTol => "step_tol",
            TerminationReason::MaxIters => "max_iters",
            TerminationReason::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Accepted steps.
    pub iterations: usize,
    pub final_objective: f64,
    /// Objective at the initial state and after each accepted step.
    pub objective_trace: Vec<f64>,
    /// Wall time of every direction computation, including rejected ones.
    pub direction_times_us: Vec<f64>,
    pub total_time_us: f64,
    pub skipped: SkipCounts,
    pub termination: TerminationReason,
    pub final_damping: f64,
}

/// A direction in unconstrained coordinates `(ΔT_0, ΔΩ, Δβ)`.
pub fn apply_direction(state: &ModelState, layout: DenseLayout, dx: &DVector<f64>) -> ModelState {
    let root_step = twist(
        &Vector3::new(dx[0], dx[1], dx[2]),
        &Vector3::new(dx[3], dx[4], dx[5]),
    );
    let root: Pose = state.root.retract(&root_step);
    let joints: Vec<Rotation> = state
        .joints
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let r = layout.joint(k + 1);
            w.retract(&Vector3::new(dx[r.start], dx[r.start + 1], dx[r.start + 2]))
        })
        .collect();
    let shape = &state.shape + dx.rows(layout.shape().start, layout.num_shape_params);
    ModelState { root, joints, shape }
}

// Linearization cached across damping retries.
enum Linearized {
    Sparse(solver_sparse::SparseLinearization),
    Dense(solver_dense::DenseLinearization),
}

impl Linearized {
    fn new(problem: &Problem, state: &ModelState, backend: Backend) -> Result<Self> {
        Ok(match backend {
            Backend::Sparse => Linearized::Sparse(solver_sparse::linearize_sparse(problem, state)?),
            Backend::Dense => Linearized::Dense(solver_dense::linearize_dense(problem, state)?),
        })
    }

    fn objective(&self) -> f64 {
        match self {
            Linearized::Sparse(l) => l.objective,
            Linearized::Dense(l) => l.objective,
        }
    }

    fn skipped(&self) -> SkipCounts {
        match self {
            Linearized::Sparse(l) => l.skipped,
            Linearized::Dense(l) => l.skipped,
        }
    }

    fn gradient(&self, problem: &Problem) -> DVector<f64> {
        match self {
            Linearized::Sparse(l) => l.gradient(&problem.tree),
            Linearized::Dense(l) => l.system.g.clone(),
        }
    }

    // (direction, predicted decrease, damping actually used)
    fn direction(&self, problem: &Problem, damping: f64) -> Result<(DVector<f64>, f64, f64)> {
        match self {
            Linearized::Sparse(l) => {
                let d = solver_sparse::solve_sparse(l, &problem.tree, damping, ConstraintMode::Structured)?;
                Ok((d.to_dense(DenseLayout::of(&problem.tree)), d.predicted_decrease, damping))
            }
            Linearized::Dense(l) => {
                let d = solver_dense::solve_dense(&l.system, damping)?;
                let pred = 0.5 * l.system.g.dot(&d.dx);
                Ok((d.dx, pred, d.damping))
            }
        }
    }
}

fn is_recoverable(e: &Error) -> bool {
    matches!(e, Error::IndefiniteQ22 { .. } | Error::SingularRoot(_) | Error::SingularSystem { .. })
}

/// Minimize the objective of `problem` from `init`.
pub fn optimize(problem: &Problem, init: &ModelState, config: &SolveConfig) -> Result<(ModelState, SolveReport)> {
    config.validate()?;
    init.check_dims(&problem.tree)?;
    let start = Instant::now();
    let layout = DenseLayout::of(&problem.tree);
    let mut state = init.clone();
    let mut damping = config.initial_damping;
    let mut lin = Linearized::new(problem, &state, config.backend)?;
    let mut current = lin.objective();
    if !current.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut trace = vec![current];
    let mut times = Vec::new();
    let mut iterations = 0;

    let termination = 'outer: loop {
        if lin.gradient(problem).amax() < config.gradient_tol {
            break TerminationReason::GradientTol;
        }
        if iterations >= config.max_iters {
            break TerminationReason::MaxIters;
        }
        loop {
            let t0 = Instant::now();
            let solved = lin.direction(problem, damping);
            times.push(t0.elapsed().as_secs_f64() * 1e6);
            let accepted = match solved {
                Ok((dx, predicted, used)) => {
                    damping = used;
                    if dx.amax() < config.step_tol {
                        break 'outer TerminationReason::StepTol;
                    }
                    let candidate = apply_direction(&state, layout, &dx);
                    let view = forward_kinematics(&candidate, &problem.tree);
                    let (value, _) = objective(problem, &view)?;
                    let decrease = current - value;
                    (value.is_finite() && decrease > 0.0 && decrease >= config.accept_ratio * -predicted).then_some((candidate, value))
                }
                Err(e) if is_recoverable(&e) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some((candidate, value)) => {
                    state = candidate;
                    trace.push(value);
                    iterations += 1;
                    damping *= config.damping_decrease;
                    break;
                }
                None => {
                    damping = (damping * config.damping_increase).max(DAMPING_FLOOR);
                    if damping > DAMPING_CEILING {
                        break 'outer TerminationReason::Stalled;
                    }
                }
            }
        }
        lin = Linearized::new(problem, &state, config.backend)?;
        current = lin.objective();
        if !current.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
    };

    let report = SolveReport {
        iterations,
        final_objective: current,
        objective_trace: trace,
        direction_times_us: times,
        total_time_us: start.elapsed().as_secs_f64() * 1e6,
        skipped: lin.skipped(),
        termination,
        final_damping: damping,
    };
    Ok((state, report))
}
