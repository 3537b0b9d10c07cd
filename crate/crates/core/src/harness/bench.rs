//! Direction-time benchmarks over the two body trees.
//!
//! * Experiment 1: `P = 0`, `N ∈ {120, …, 600}`.
//! * Experiment 2: the same grid with `P = 10`.
//! * Experiment 3: `P ∈ {0, …, 10}` with one 2D, one 3D and one direction
//!   measurement per part.
//!
//! Each repeat times one linearize-and-solve call, after three warm-up
//! calls per cell.

use std::fmt::Write as _;
use std::hint::black_box;
use std::path::Path;

use web_time::Instant;

use crate::error::{Error, Result};
use crate::harness::synth::{generate_model, generate_problem, jitter_state, SyntheticSpec, Topology};
use crate::model::ModelState;
use crate::optimizer::Backend;
use crate::residuals::Problem;
use crate::{solver_dense, solver_sparse};

pub const CSV_HEADER: &str = "experiment,model,K,P,N,backend,mean_us,std_us,repeats";
pub const WARMUP_CALLS: usize = 3;
pub const MIN_REPEATS: usize = 10;
/// Damping used in timed calls.
pub const BENCH_DAMPING: f64 = 1e-4;
const MODEL_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub experiment: u32,
    pub model: &'static str,
    pub joints: usize,
    pub shape_params: usize,
    pub measurements: usize,
    pub backend: Backend,
    pub mean_us: f64,
    pub std_us: f64,
    pub median_us: f64,
    pub repeats: usize,
}

impl BenchRecord {
    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::Sparse => "sparse",
            Backend::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCell {
    pub model: &'static str,
    pub topology: Topology,
    pub joints: usize,
    pub shape_params: usize,
    pub measurements: usize,
    pub backend: Backend,
}

const MODELS: [(&str, Topology, usize); 2] = [("smpl", Topology::SmplLike23, 23), ("smplh", Topology::SmplhLike51, 51)];
const BACKENDS: [Backend; 2] = [Backend::Dense, Backend::Sparse];

/// The cells of one experiment in output order.
pub fn experiment_cells(id: u32) -> Result<Vec<BenchCell>> {
    let mut cells = Vec::new();
    for (model, topology, joints) in MODELS {
        let grid: Vec<(usize, usize)> = match id {
            1 => (1..=5).map(|k| (0, 120 * k)).collect(),
            2 => (1..=5).map(|k| (10, 120 * k)).collect(),
            3 => (0..=10).map(|p| (p, 3 * (joints + 1))).collect(),
            other => return Err(Error::Invalid(format!("unknown experiment {other}"))),
        };
        for (shape_params, measurements) in grid {
            for backend in BACKENDS {
                cells.push(BenchCell { model, topology, joints, shape_params, measurements, backend });
            }
        }
    }
    Ok(cells)
}

/// Problem and linearization point of a cell: the generated truth with
/// joints turned by up to 0.3 rad, so residuals are nonzero.
pub fn cell_problem(cell: &BenchCell) -> Result<(Problem, ModelState)> {
    let spec = SyntheticSpec {
        joints: cell.joints,
        shape_params: cell.shape_params,
        measurements: cell.measurements,
        seed: MODEL_SEED,
        topology: cell.topology,
        ..Default::default()
    };
    let model = generate_model(&spec)?;
    let sp = generate_problem(&model.tree, &spec)?;
    let state = jitter_state(&sp.truth, 0.3, MODEL_SEED);
    Ok((sp.problem, state))
}

/// One timed direction computation, in microseconds.
pub fn time_direction(problem: &Problem, state: &ModelState, backend: Backend) -> Result<f64> {
    let t0 = Instant::now();
    match backend {
        Backend::Sparse => {
            black_box(solver_sparse::gauss_newton_direction(black_box(problem), black_box(state), BENCH_DAMPING)?);
        }
        Backend::Dense => {
            black_box(solver_dense::gauss_newton_direction(black_box(problem), black_box(state), BENCH_DAMPING)?);
        }
    }
    Ok(t0.elapsed().as_secs_f64() * 1e6)
}

/// `(mean, sample std, median)`.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
    (mean, var.sqrt(), median)
}

fn record(experiment: u32, cell: &BenchCell, samples: &[f64]) -> BenchRecord {
    let (mean_us, std_us, median_us) = summarize(samples);
    BenchRecord {
        experiment,
        model: cell.model,
        joints: cell.joints,
        shape_params: cell.shape_params,
        measurements: cell.measurements,
        backend: cell.backend,
        mean_us,
        std_us,
        median_us,
        repeats: samples.len(),
    }
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats < MIN_REPEATS {
        return Err(Error::Invalid(format!("at least {MIN_REPEATS} repeats are required")));
    }
    Ok(())
}

/// Cells timed round-robin: every cell is warmed up, then each round times
/// every cell once. Slow periods of the machine then hit all cells alike
/// instead of skewing the ratios between them.
pub fn run_cells(experiment: u32, cells: &[BenchCell], repeats: usize) -> Result<Vec<BenchRecord>> {
    check_repeats(repeats)?;
    let inputs = cells.iter().map(cell_problem).collect::<Result<Vec<_>>>()?;
    for ((problem, state), cell) in inputs.iter().zip(cells) {
        for _ in 0..WARMUP_CALLS {
            time_direction(problem, state, cell.backend)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(repeats); cells.len()];
    for _ in 0..repeats {
        for (k, ((problem, state), cell)) in inputs.iter().zip(cells).enumerate() {
            samples[k].push(time_direction(problem, state, cell.backend)?);
        }
    }
    Ok(cells.iter().zip(&samples).map(|(c, s)| record(experiment, c, s)).collect())
}

pub fn run_cell(experiment: u32, cell: &BenchCell, repeats: usize) -> Result<BenchRecord> {
    Ok(run_cells(experiment, std::slice::from_ref(cell), repeats)?.remove(0))
}

pub fn run_experiment(id: u32, repeats: usize) -> Result<Vec<BenchRecord>> {
    run_cells(id, &experiment_cells(id)?, repeats)
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3},{:.3},{}",
            r.experiment,
            r.model,
            r.joints,
            r.shape_params,
            r.measurements,
            r.backend_name(),
            r.mean_us,
            r.std_us,
            r.repeats
        );
    }
    out
}

pub fn write_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    std::fs::write(path, to_csv(records)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Median time of `(model, P, N, backend)` in `records`.
pub fn median_of(records: &[BenchRecord], model: &str, shape_params: usize, measurements: usize, backend: Backend) -> Option<f64> {
    records
        .iter()
        .find(|r| r.model == model && r.shape_params == shape_params && r.measurements == measurements && r.backend == backend)
        .map(|r| r.median_us)
}
