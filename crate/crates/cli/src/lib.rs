//! Argument parsing and command implementations for the `prw` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use prw_core::experiments::{default_eta, run_experiment, write_rows_csv, ExperimentKind, ExperimentRun, ExperimentSpec};
use prw_core::measures::{add_noise, fragmented_hypercube, load_measure, wishart_gaussian_pair, write_measure, MeasureFormat};
use prw_core::prw::{solve, Algorithm, FinalPlan, IterationRecord, SolverConfig, StepRule};
use prw_core::stiefel::Retraction;
use prw_core::Error;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when a solver stopped without meeting its tolerance.
pub const EXIT_NOT_CONVERGED: i32 = 1;
/// Exit code for bad input (files, parameters).
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "prw", version, about = "Projection robust Wasserstein distances and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the PRW distance between two measure files.
    Compute(ComputeArgs),
    /// Write synthetic measures to files.
    Generate(GenerateArgs),
    /// Fragmented hypercube sweeps over k or n.
    Hypercube(HypercubeArgs),
    /// PRW/W2 ratios and noise robustness on Wishart Gaussian pairs.
    GaussianNoise(GaussianArgs),
    /// Wall-time scaling in d; with several --gamma-grid values, learning-rate robustness.
    Timing(TimingArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for MeasureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MeasureFormat::Csv,
            FormatArg::Jsonl => MeasureFormat::Jsonl,
        }
    }
}

/// Solver settings shared by every command that solves.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// rgas, ragas or rsgan.
    #[arg(long, default_value = "rgas", value_parser = parse_algorithm)]
    pub algorithm: Algorithm,
    /// Entropic regularization on the normalized cost; default 0.2 below 250 points, else 0.5.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Step size (γ₀ for rsgan); solver default when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub alpha: f64,
    /// exponential, polar, qr or cayley.
    #[arg(long, default_value = "qr", value_parser = parse_retraction)]
    pub retraction: Retraction,
    /// Relative change of U at which the outer loop stops.
    #[arg(long = "tol", default_value_t = 1e-3)]
    pub tol_outer: f64,
    /// Sinkhorn marginal tolerance; tol/10 when omitted.
    #[arg(long)]
    pub tol_inner: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 100_000)]
    pub max_inner_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// exact or entropic.
    #[arg(long, default_value = "exact", value_parser = parse_final_plan)]
    pub final_plan: FinalPlan,
    /// Use the step-size rule derived from L1, L2 and theta-bar.
    #[arg(long)]
    pub theoretical: bool,
    #[arg(long, default_value_t = 1.0)]
    pub l1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta_bar: f64,
    /// Record the stationarity surrogate at every iteration (slower).
    #[arg(long)]
    pub diagnostics: bool,
}

impl SolverArgs {
    /// Builds a configuration; `n` picks the default η.
    pub fn config(&self, k: usize, seed: u64, n: usize) -> SolverConfig {
        SolverConfig {
            algorithm: self.algorithm,
            k,
            eta: self.eta.unwrap_or_else(|| default_eta(n)),
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha,
            retraction: self.retraction,
            tol_outer: self.tol_outer,
            tol_inner: self.tol_inner,
            max_outer_iter: self.max_iter,
            max_inner_iter: self.max_inner_iter,
            seed,
            step_rule: if self.theoretical {
                StepRule::Theoretical {
                    l1: self.l1,
                    l2: self.l2,
                    theta_bar: self.theta_bar,
                }
            } else {
                StepRule::Practical
            },
            restarts: self.restarts,
            final_plan: self.final_plan,
            diagnostics: self.diagnostics,
        }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_retraction(s: &str) -> Result<Retraction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_final_plan(s: &str) -> Result<FinalPlan, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long)]
    pub mu: PathBuf,
    #[arg(long)]
    pub nu: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(short, long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write the summary JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the iterate history as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenerateKind {
    Hypercube,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: GenerateKind,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub k_star: usize,
    /// Gaussian noise added to both measures.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_mu: PathBuf,
    #[arg(long)]
    pub out_nu: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

/// Output and scheduling flags shared by experiment commands.
#[derive(Debug, Args)]
pub struct ExperimentOutput {
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    /// Base seed; repetition r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated solvers to run.
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    pub algorithms: Option<Vec<Algorithm>>,
    /// Worker threads (PRW_NUM_WORKERS overrides).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Results CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Per-run iterate histories as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Sweep {
    K,
    N,
}

#[derive(Debug, Args)]
pub struct HypercubeArgs {
    #[arg(long, value_enum, default_value = "k")]
    pub sweep: Sweep,
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Ambient dimensions.
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    /// Subspace dimensions.
    #[arg(short, long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Planted dimensions.
    #[arg(long, value_delimiter = ',')]
    pub k_star: Option<Vec<usize>>,
    /// Also compute the exact W2² of the full cost.
    #[arg(long)]
    pub exact_w2: bool,
    #[command(flatten)]
    pub out: ExperimentOutput,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Ambient dimensions.
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    /// Subspace dimensions.
    #[arg(short, long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Planted dimensions.
    #[arg(long, value_delimiter = ',')]
    pub k_star: Option<Vec<usize>>,
    /// Noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: ExperimentOutput,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Ambient dimensions.
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    /// Subspace dimensions.
    #[arg(short, long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Step sizes to compare; more than one value selects the learning-rate experiment.
    #[arg(long = "gamma-grid", value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: ExperimentOutput,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// What a command produced: the JSON summary and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub summary: Value,
    pub exit_code: i32,
}

/// `{"error": {"kind": ..., "message": ...}}`.
pub fn error_json(e: &Error) -> Value {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } })
}

pub fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Compute(a) => compute(a),
        Command::Generate(a) => generate(a),
        Command::Hypercube(a) => hypercube(a),
        Command::GaussianNoise(a) => gaussian(a),
        Command::Timing(a) => timing(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_jsonl<S: Serialize>(path: &Path, lines: impl IntoIterator<Item = S>) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        let text = serde_json::to_string(&line).expect("records serialize");
        writeln!(out, "{text}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

fn compute(a: ComputeArgs) -> Result<Outcome, Error> {
    let format_of = |p: &Path| a.format.map_or_else(|| MeasureFormat::from_path(p), Into::into);
    let mu = load_measure::<f64>(&a.mu, format_of(&a.mu))?;
    let nu = load_measure::<f64>(&a.nu, format_of(&a.nu))?;
    let config = a.solver.config(a.k, a.seed, mu.len().max(nu.len()));
    let result = solve(&mu, &nu, &config)?;

    let u: Vec<Vec<f64>> = result.u.matrix().row_iter().map(|r| r.iter().copied().collect()).collect();
    let summary = json!({
        "command": "compute",
        "algorithm": config.algorithm.to_string(),
        "k": config.k,
        "d": mu.dim(),
        "n_mu": mu.len(),
        "n_nu": nu.len(),
        "eta": config.algorithm.is_entropic().then_some(config.eta),
        "seed": config.seed,
        "prw_sq_value": result.prw_sq_value,
        "prw_value": result.prw_sq_value.sqrt(),
        "best_objective": result.best_objective,
        "inner_plan_value": result.inner_plan_value,
        "outer_iterations": result.outer_iterations,
        "termination": result.termination.as_str(),
        "converged": result.converged(),
        "wall_time_seconds": result.wall_time,
        "subspace": u,
    });
    if let Some(path) = &a.output {
        write_json(path, &summary)?;
    }
    if let Some(path) = &a.trace {
        write_jsonl(path, &result.history)?;
    }
    Ok(Outcome {
        exit_code: if result.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED },
        summary,
    })
}

fn generate(a: GenerateArgs) -> Result<Outcome, Error> {
    let (mu, nu) = match a.kind {
        GenerateKind::Hypercube => fragmented_hypercube::<f64>(a.n, a.d, a.k_star, a.seed)?,
        GenerateKind::Gaussian => {
            let pair = wishart_gaussian_pair::<f64>(a.n, a.d, a.k_star, a.seed)?;
            (pair.mu, pair.nu)
        }
    };
    let (mu, nu) = if a.sigma != 0.0 {
        let s = a.seed.wrapping_mul(2).wrapping_add(0x5EED);
        (add_noise(&mu, a.sigma, s)?, add_noise(&nu, a.sigma, s.wrapping_add(1))?)
    } else {
        (mu, nu)
    };
    write_measure(&mu, &a.out_mu, a.format.into(), false)?;
    write_measure(&nu, &a.out_nu, a.format.into(), false)?;
    Ok(Outcome {
        summary: json!({
            "command": "generate",
            "kind": format!("{:?}", a.kind).to_lowercase(),
            "n": a.n,
            "d": a.d,
            "k_star": a.k_star,
            "sigma": a.sigma,
            "seed": a.seed,
            "files": [a.out_mu.display().to_string(), a.out_nu.display().to_string()],
        }),
        exit_code: EXIT_OK,
    })
}

fn base_spec(kind: ExperimentKind, out: &ExperimentOutput, solver: &SolverArgs) -> ExperimentSpec {
    let defaults = ExperimentSpec::defaults(kind);
    ExperimentSpec {
        eta: solver.eta,
        algorithms: out.algorithms.clone().unwrap_or(defaults.algorithms.clone()),
        repetitions: out.repetitions,
        base_seed: out.seed,
        workers: out.workers,
        solver: solver.config(2, out.seed, 0),
        ..defaults
    }
}

fn hypercube(a: HypercubeArgs) -> Result<Outcome, Error> {
    let kind = match a.sweep {
        Sweep::K => ExperimentKind::HypercubeKSweep,
        Sweep::N => ExperimentKind::HypercubeNSweep,
    };
    let defaults = ExperimentSpec::defaults(kind);
    let spec = ExperimentSpec {
        n: a.n.unwrap_or(defaults.n),
        d: a.d.unwrap_or(defaults.d),
        k: a.k.unwrap_or(defaults.k),
        k_star: a.k_star.unwrap_or(defaults.k_star),
        exact_w2: a.exact_w2,
        ..base_spec(kind, &a.out, &a.solver)
    };
    run_and_write(&spec, &a.out)
}

fn gaussian(a: GaussianArgs) -> Result<Outcome, Error> {
    let kind = ExperimentKind::GaussianNoise;
    let defaults = ExperimentSpec::defaults(kind);
    let spec = ExperimentSpec {
        n: a.n.unwrap_or(defaults.n),
        d: a.d.unwrap_or(defaults.d),
        k: a.k.unwrap_or(defaults.k),
        k_star: a.k_star.unwrap_or(defaults.k_star),
        sigma: a.sigma.unwrap_or(defaults.sigma),
        ..base_spec(kind, &a.out, &a.solver)
    };
    run_and_write(&spec, &a.out)
}

fn timing(a: TimingArgs) -> Result<Outcome, Error> {
    let kind = match &a.gamma_grid {
        Some(g) if g.len() > 1 => ExperimentKind::LrRobustness,
        _ => ExperimentKind::Timing,
    };
    let defaults = ExperimentSpec::defaults(kind);
    let spec = ExperimentSpec {
        n: a.n.unwrap_or(defaults.n),
        d: a.d.unwrap_or(defaults.d),
        k: a.k.unwrap_or(defaults.k),
        gamma: a.gamma_grid.unwrap_or(defaults.gamma),
        ..base_spec(kind, &a.out, &a.solver)
    };
    run_and_write(&spec, &a.out)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    run: usize,
    algorithm: &'a str,
    n: usize,
    d: usize,
    k: usize,
    k_star: usize,
    sigma: f64,
    gamma: Option<f64>,
    repetition: usize,
    #[serde(flatten)]
    record: &'a IterationRecord,
}

fn run_and_write(spec: &ExperimentSpec, out: &ExperimentOutput) -> Result<Outcome, Error> {
    let runs: Vec<ExperimentRun> = run_experiment(spec)?;
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    write_rows_csv(&rows, &out.output)?;
    if let Some(path) = &out.trace {
        let lines = runs.iter().enumerate().flat_map(|(i, run)| {
            run.history.iter().map(move |record| TraceLine {
                run: i,
                algorithm: &run.row.algorithm,
                n: run.row.n,
                d: run.row.d,
                k: run.row.k,
                k_star: run.row.k_star,
                sigma: run.row.sigma,
                gamma: run.row.gamma,
                repetition: run.row.repetition,
                record,
            })
        });
        write_jsonl(path, lines)?;
    }
    let non_converged = rows.iter().filter(|r| !r.converged).count();
    let summary = json!({
        "command": "experiment",
        "experiment": spec.kind.as_str(),
        "rows": rows.len(),
        "repetitions": spec.repetitions,
        "base_seed": spec.base_seed,
        "algorithms": spec.algorithms.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        "non_converged": non_converged,
        "output": out.output.display().to_string(),
        "total_solve_seconds": rows.iter().map(|r| r.wall_time_seconds).sum::<f64>(),
    });
    if let Some(path) = &out.summary {
        write_json(path, &summary)?;
    }
    Ok(Outcome {
        exit_code: if non_converged > 0 { EXIT_NOT_CONVERGED } else { EXIT_OK },
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn solver_flags_map_onto_config() {
        let cli = Cli::try_parse_from([
            "prw", "compute", "--mu", "a", "--nu", "b", "-k", "3", "--algorithm", "ragas", "--retraction", "cayley",
            "--theoretical", "--l1", "2", "--final-plan", "entropic",
        ])
        .unwrap();
        let Command::Compute(a) = cli.command else { panic!("wrong subcommand") };
        let c = a.solver.config(a.k, 5, 300);
        assert_eq!((c.algorithm, c.k, c.seed, c.eta), (Algorithm::Ragas, 3, 5, 0.5));
        assert_eq!(c.retraction, Retraction::Cayley);
        assert_eq!(c.final_plan, FinalPlan::Entropic);
        assert!(matches!(c.step_rule, StepRule::Theoretical { l1, .. } if l1 == 2.0));
        assert_eq!(a.solver.config(1, 0, 100).eta, 0.2);
    }

    #[test]
    fn unknown_algorithm_is_rejected() {
        assert!(Cli::try_parse_from(["prw", "compute", "--mu", "a", "--nu", "b", "--algorithm", "sgd"]).is_err());
    }
}
