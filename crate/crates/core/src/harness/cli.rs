//! `treefit gen | fit | bench`.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::bench::{run_experiment, write_csv};
use crate::harness::io::{read_json, write_json, MeasurementSetJson, ModelJson, ReportJson, StateJson};
use crate::harness::synth::{generate_model, generate_problem, jitter_state, SyntheticSpec, Topology};
use crate::model::ModelState;
use crate::optimizer::{optimize, Backend, SolveConfig};
use crate::residuals::Problem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "treefit", version, about = "Fit articulated tree models to keypoint measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic model, measurement set and ground truth.
    Gen(GenArgs),
    /// Fit a model to a measurement set.
    Fit(FitArgs),
    /// Time direction computations and write a CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 23)]
    joints: usize,
    #[arg(long, default_value_t = 10)]
    shape_params: usize,
    #[arg(long, default_value_t = 300)]
    measurements: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_2d: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_3d: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_pof: f64,
    /// smpl_like_23, smplh_like_51, chain or random_tree.
    #[arg(long, default_value = "smpl_like_23", value_parser = parse_topology)]
    topology: Topology,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_meas: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
    /// Also write the truth with joints turned by up to --init-jitter radians.
    #[arg(long)]
    out_init: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    init_jitter: f64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Initial state; defaults to the prior means.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "sparse", value_parser = parse_backend)]
    solver: Backend,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Gradient tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Initial damping.
    #[arg(long, default_value_t = 1e-4)]
    damping: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    experiment: u32,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(10..))]
    repeats: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_topology(s: &str) -> std::result::Result<Topology, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Starting point when no state file is given: the prior means where they
/// exist, rest otherwise.
pub fn prior_init(problem: &Problem) -> ModelState {
    let mut s = ModelState::rest(&problem.tree);
    let obj = &problem.objective;
    if let Some(p) = obj.pose_priors.get(&0) {
        s.root = *p;
    }
    for (&i, p) in &obj.joint_priors {
        s.joints[i - 1] = p.mean;
    }
    if let Some(m) = &obj.shape_mean {
        s.shape = m.clone();
    }
    s
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        joints: a.joints,
        shape_params: a.shape_params,
        measurements: a.measurements,
        noise_2d: a.noise_2d,
        noise_3d: a.noise_3d,
        noise_pof: a.noise_pof,
        seed: a.seed,
        topology: a.topology,
    };
    let model = generate_model(&spec)?;
    let sp = generate_problem(&model.tree, &spec)?;
    write_json(&a.out_model, &ModelJson::from_tree(&model.tree))?;
    write_json(&a.out_meas, &MeasurementSetJson::from_problem(&sp.problem))?;
    write_json(&a.out_truth, &StateJson::from_state(&sp.truth, Some(&model.tree)))?;
    if let Some(path) = &a.out_init {
        write_json(path, &StateJson::from_state(&jitter_state(&sp.truth, a.init_jitter, a.seed), None))?;
    }
    Ok(())
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let tree = read_json::<ModelJson>(&a.model)?.to_tree()?;
    let problem = read_json::<MeasurementSetJson>(&a.measurements)?.to_problem(tree)?;
    let init = match &a.init {
        Some(p) => read_json::<StateJson>(p)?.to_state()?,
        None => prior_init(&problem),
    };
    let config = SolveConfig { backend: a.solver, max_iters: a.max_iters, gradient_tol: a.tol, initial_damping: a.damping, ..Default::default() };
    let (state, report) = optimize(&problem, &init, &config)?;
    write_json(&a.out, &StateJson::from_state(&state, Some(&problem.tree)))?;
    let name = match a.solver {
        Backend::Sparse => "sparse",
        Backend::Dense => "dense",
    };
    if let Some(path) = &a.report {
        write_json(path, &ReportJson::from_report(name, &report))?;
    }
    eprintln!(
        "{name}: {} iterations, objective {:.6e}, {}",
        report.iterations,
        report.final_objective,
        report.termination.as_str()
    );
    Ok(())
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let records = run_experiment(a.experiment, a.repeats as usize)?;
    write_csv(&a.out, &records)
}

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Fit(a) => run_fit(a),
        Command::Bench(a) => run_bench(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
