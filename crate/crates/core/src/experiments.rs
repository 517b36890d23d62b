//! Grid runner for the synthetic experiments: hypercube k/n sweeps, Gaussian
//! noise robustness, timing and learning-rate robustness.
//!
//! Runs are indexed by `(grid point, repetition)`. Repetition `r` uses data
//! seed `base_seed + r` for every grid point, so sweeps compare solvers and
//! parameters on the same samples. Results come back in index order whatever
//! the completion order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_ot::exact_ot_solve;
use crate::measures::{add_noise, cost_matrix, fragmented_hypercube, wishart_gaussian_pair, DiscreteMeasure};
use crate::prw::{solve, subspace_error, Algorithm, IterationRecord, SolverConfig};
use crate::stiefel::StiefelPoint;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "PRW_NUM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    HypercubeKSweep,
    HypercubeNSweep,
    GaussianNoise,
    Timing,
    LrRobustness,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::HypercubeKSweep => "hypercube_k_sweep",
            ExperimentKind::HypercubeNSweep => "hypercube_n_sweep",
            ExperimentKind::GaussianNoise => "gaussian_noise",
            ExperimentKind::Timing => "timing",
            ExperimentKind::LrRobustness => "lr_robustness",
        }
    }

    /// Timing runs execute one at a time so wall times are not contended.
    pub fn is_timed(self) -> bool {
        matches!(self, ExperimentKind::Timing | ExperimentKind::LrRobustness)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ExperimentKind::HypercubeKSweep,
            ExperimentKind::HypercubeNSweep,
            ExperimentKind::GaussianNoise,
            ExperimentKind::Timing,
            ExperimentKind::LrRobustness,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// A parameter grid crossed with repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub k_star: Vec<usize>,
    /// Noise levels (Gaussian experiment only).
    pub sigma: Vec<f64>,
    /// Step sizes; empty means the solver default.
    pub gamma: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Template for every solve; `algorithm`, `k`, `gamma`, `eta` and `seed`
    /// are overwritten per run.
    pub solver: SolverConfig,
    /// Regularization for every grid point; `None` applies [`default_eta`].
    pub eta: Option<f64>,
    /// Also solve exact OT on the full cost (always done for the Gaussian experiment).
    pub exact_w2: bool,
    /// Worker threads; `None` uses the environment override or all cores.
    pub workers: Option<usize>,
}

impl ExperimentSpec {
    /// Defaults for each experiment: 20 repetitions (10 for the timing
    /// kinds), small enough for a desktop run.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            n: vec![100],
            d: vec![30],
            k: vec![2],
            k_star: vec![2],
            sigma: vec![0.0],
            gamma: Vec::new(),
            algorithms: vec![Algorithm::Rgas, Algorithm::Ragas],
            repetitions: 20,
            base_seed: 0,
            solver: SolverConfig::new(Algorithm::Rgas, 2),
            eta: None,
            exact_w2: false,
            workers: None,
        };
        match kind {
            ExperimentKind::HypercubeKSweep => Self {
                k: (1..=10).collect(),
                ..base
            },
            ExperimentKind::HypercubeNSweep => Self {
                n: vec![25, 50, 100, 250, 500, 1000],
                ..base
            },
            ExperimentKind::GaussianNoise => Self {
                d: vec![20],
                k: (1..=20).collect(),
                k_star: vec![5],
                sigma: vec![0.0, 1.0],
                algorithms: vec![Algorithm::Rgas],
                exact_w2: true,
                ..base
            },
            ExperimentKind::Timing => Self {
                d: vec![25, 50, 100, 250, 500],
                repetitions: 10,
                ..base
            },
            ExperimentKind::LrRobustness => Self {
                d: vec![100],
                gamma: vec![0.005, 0.01, 0.05, 0.1],
                repetitions: 10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n", self.n.is_empty()),
            ("d", self.d.is_empty()),
            ("k", self.k.is_empty()),
            ("k_star", self.k_star.is_empty()),
            ("sigma", self.sigma.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidParameter(format!("grid `{name}` is empty")));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be ≥ 1".into()));
        }
        if self.eta.is_some_and(|e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidParameter("η must be positive and finite".into()));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter("noise levels must be ≥ 0".into()));
        }
        for &d in &self.d {
            if let Some(&k) = self.k.iter().find(|&&k| k == 0 || k > d) {
                return Err(Error::InvalidParameter(format!("k = {k} is outside 1..={d}")));
            }
            if let Some(&ks) = self.k_star.iter().find(|&&ks| ks == 0 || ks > d) {
                return Err(Error::InvalidParameter(format!("k* = {ks} is outside 1..={d}")));
            }
        }
        if self.n.contains(&0) {
            return Err(Error::InvalidParameter("n must be ≥ 1".into()));
        }
        self.solver.validate()
    }

    /// All grid points in a fixed order (outermost first: algorithm, n, d,
    /// k*, σ, γ, k).
    pub fn grid(&self) -> Vec<GridPoint> {
        let gammas: Vec<Option<f64>> = if self.gamma.is_empty() {
            vec![None]
        } else {
            self.gamma.iter().map(|g| Some(*g)).collect()
        };
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            for &n in &self.n {
                for &d in &self.d {
                    for &k_star in &self.k_star {
                        for &sigma in &self.sigma {
                            for &gamma in &gammas {
                                for &k in &self.k {
                                    out.push(GridPoint {
                                        algorithm,
                                        n,
                                        d,
                                        k,
                                        k_star,
                                        sigma,
                                        gamma,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub k_star: usize,
    pub sigma: f64,
    pub gamma: Option<f64>,
}

/// One CSV row. Column order is part of the output contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub algorithm: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub k_star: usize,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    pub prw_sq_value: f64,
    pub exact_w2_sq: Option<f64>,
    /// `prw_sq_value / exact_w2_sq`.
    pub ratio: Option<f64>,
    /// Hypercube: `|P² − 4k*|/(4k*)`. Noisy Gaussian: `|P²_σ − P²_0|/P²_0`.
    pub relative_error: Option<f64>,
    /// Distance to the planted subspace (hypercube only).
    pub subspace_error: Option<f64>,
    pub wall_time_seconds: f64,
    pub outer_iterations: usize,
    pub termination: String,
    pub converged: bool,
}

/// A row plus the iterate history that produced it.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub row: ResultRow,
    pub history: Vec<IterationRecord>,
}

/// Worker count: the environment override if set, else `requested`, else all cores.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .or(requested.filter(|&w| w > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every `(grid point, repetition)` and returns them in index order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRun>> {
    spec.validate()?;
    let tasks: Vec<(GridPoint, usize)> = spec
        .grid()
        .into_iter()
        .flat_map(|p| (0..spec.repetitions).map(move |r| (p, r)))
        .collect();
    if spec.kind.is_timed() {
        return tasks.iter().map(|(p, r)| run_one(spec, p, *r)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(spec.workers))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(|(p, r)| run_one(spec, p, *r)).collect())
}

/// The experiments' regularization: 0.2 below 250 points, 0.5 from there on.
pub fn default_eta(n: usize) -> f64 {
    if n < 250 {
        0.2
    } else {
        0.5
    }
}

fn config_for(spec: &ExperimentSpec, p: &GridPoint, seed: u64) -> SolverConfig {
    SolverConfig {
        algorithm: p.algorithm,
        k: p.k,
        eta: spec.eta.unwrap_or_else(|| default_eta(p.n)),
        gamma: p.gamma.or(spec.solver.gamma),
        seed,
        ..spec.solver.clone()
    }
}

fn run_one(spec: &ExperimentSpec, p: &GridPoint, repetition: usize) -> Result<ExperimentRun> {
    let seed = spec.base_seed.wrapping_add(repetition as u64);
    let config = config_for(spec, p, seed);
    let gaussian = spec.kind == ExperimentKind::GaussianNoise;

    let (mu, nu, clean) = if gaussian {
        let pair = wishart_gaussian_pair::<f64>(p.n, p.d, p.k_star, seed)?;
        if p.sigma > 0.0 {
            // Independent noise streams for the two measures.
            let noise_seed = seed.wrapping_mul(2).wrapping_add(0x5EED);
            let mu = add_noise(&pair.mu, p.sigma, noise_seed)?;
            let nu = add_noise(&pair.nu, p.sigma, noise_seed.wrapping_add(1))?;
            (mu, nu, Some((pair.mu, pair.nu)))
        } else {
            (pair.mu, pair.nu, None)
        }
    } else {
        let (mu, nu) = fragmented_hypercube::<f64>(p.n, p.d, p.k_star, seed)?;
        (mu, nu, None)
    };

    let start = Instant::now();
    let result = solve(&mu, &nu, &config)?;
    let wall = start.elapsed().as_secs_f64();
    let value = result.prw_sq_value;

    let exact_w2_sq = if gaussian || spec.exact_w2 {
        Some(full_ot(&mu, &nu)?)
    } else {
        None
    };
    let ratio = exact_w2_sq.filter(|w| *w > 0.0).map(|w| value / w);
    let (relative_error, subspace) = if gaussian {
        let rel = match clean {
            Some((cm, cn)) => {
                let reference = solve(&cm, &cn, &config)?.prw_sq_value;
                (reference > 0.0).then(|| (value - reference).abs() / reference)
            }
            None => None,
        };
        (rel, None)
    } else {
        let target = 4.0 * p.k_star as f64;
        let planted = StiefelPoint::<f64>::canonical(p.d, p.k_star)?;
        (
            Some((value - target).abs() / target),
            Some(subspace_error(&result.u, &planted)?),
        )
    };

    let row = ResultRow {
        experiment: spec.kind.as_str().into(),
        algorithm: p.algorithm.to_string(),
        n: p.n,
        d: p.d,
        k: p.k,
        k_star: p.k_star,
        sigma: p.sigma,
        gamma: p.gamma.or(spec.solver.gamma),
        eta: p.algorithm.is_entropic().then_some(config.eta),
        repetition,
        seed,
        prw_sq_value: value,
        exact_w2_sq,
        ratio,
        relative_error,
        subspace_error: subspace,
        wall_time_seconds: wall,
        outer_iterations: result.outer_iterations,
        termination: result.termination.as_str().into(),
        converged: result.converged(),
    };
    Ok(ExperimentRun {
        row,
        history: result.history,
    })
}

fn full_ot(mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>) -> Result<f64> {
    let c = cost_matrix(mu, nu)?;
    Ok(exact_ot_solve(&c.cost, mu.weights(), nu.weights())?.value)
}

/// Writes rows as CSV with a header (RFC 4180 quoting).
pub fn write_rows_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`write_rows_csv`].
pub fn read_rows_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Column names in output order.
pub const CSV_COLUMNS: [&str; 20] = [
    "experiment",
    "algorithm",
    "n",
    "d",
    "k",
    "k_star",
    "sigma",
    "gamma",
    "eta",
    "repetition",
    "seed",
    "prw_sq_value",
    "exact_w2_sq",
    "ratio",
    "relative_error",
    "subspace_error",
    "wall_time_seconds",
    "outer_iterations",
    "termination",
    "converged",
];
