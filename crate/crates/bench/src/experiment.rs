//! Building instances, running solvers and writing results.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vi_sliding::data::{read_libsvm_file, LabelScheme, SparseDataset};
use vi_sliding::operators::{estimate_lipschitz, probe_minty, probe_monotonicity, SetPairSampler};
use vi_sliding::problems::{AdversarialProblem, BilinearProblem, Loss};
use vi_sliding::seeding::{derive_seed, rng_for, INSTANCE_STREAM, PROBE_STREAM, START_STREAM};
use vi_sliding::solvers::default_gamma;
use vi_sliding::{
    extragradient_solve, sliding_solve, theorem_bound, CompositeVI, IterateRecord, RunResult, SlidingParams, Vector,
};

use crate::config::{AdversarialConfig, Coupling, ExperimentConfig, ProblemConfig, SlidingConfig};
use crate::report::first_reach;
use crate::{BenchError, THRESHOLDS};

/// Column order of every per-run CSV.
pub const CSV_HEADER: &str = "k,residual_norm,best_residual_sq,p_calls,q_calls,inner_iters,elapsed_s";

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub k: usize,
    pub residual_norm: f64,
    pub best_residual_sq: f64,
    pub p_calls: u64,
    pub q_calls: u64,
    pub inner_iters: usize,
    pub elapsed_s: f64,
}

impl CsvRow {
    fn from_record(r: &IterateRecord, record_elapsed: bool) -> Self {
        Self {
            k: r.k,
            residual_norm: r.residual_norm,
            best_residual_sq: r.best_residual_sq,
            p_calls: r.p_calls,
            q_calls: r.q_calls,
            inner_iters: r.inner_iters,
            elapsed_s: if record_elapsed { r.elapsed_s } else { 0.0 },
        }
    }
}

/// A problem instance for one seed.
#[derive(Debug)]
pub struct Instance {
    pub vi: CompositeVI,
    pub x0: Vector,
    pub lp: f64,
    pub lq: f64,
    /// `|R(x_0)|` at the projected starting point, evaluated without counting.
    pub initial_residual: f64,
}

impl Instance {
    pub fn new(vi: CompositeVI, x0: Vector, lp: f64, lq: f64) -> Result<Self, BenchError> {
        let probe = vi.fork();
        let start = probe.feasible.project(&x0)?;
        let initial_residual = probe.eval_r(&start)?.norm();
        if !initial_residual.is_finite() {
            return Err(BenchError::Numeric("R(x_0) is not finite".into()));
        }
        Ok(Self {
            vi,
            x0,
            lp,
            lq,
            initial_residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Sliding,
    Extragradient,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sliding => "sliding",
            SolverKind::Extragradient => "extragradient",
        }
    }
}

/// `<problem>.<solver>.seed<N>.csv`
pub fn csv_file_name(problem: &str, solver: &str, seed: u64) -> String {
    format!("{problem}.{solver}.seed{seed}.csv")
}

fn loss_of(problem: &ProblemConfig) -> Option<Loss> {
    match problem {
        ProblemConfig::Bilinear(_) => None,
        ProblemConfig::Logistic(_) => Some(Loss::Logistic),
        ProblemConfig::Nllsq(_) => Some(Loss::Nllsq),
    }
}

/// Reads the dataset, fixes its width and maps labels for the loss.
pub fn load_dataset(cfg: &AdversarialConfig, loss: Loss) -> Result<SparseDataset, BenchError> {
    let mut ds = read_libsvm_file(&cfg.dataset).map_err(|e| match e {
        vi_sliding::Error::Io(io) => BenchError::Config(format!("{}: {io}", cfg.dataset.display())),
        other => BenchError::Config(format!("{}: {other}", cfg.dataset.display())),
    })?;
    if let Some(n) = cfg.n_features {
        ds = ds.with_n_features(n).map_err(|e| BenchError::Config(e.to_string()))?;
    }
    let scheme = match loss {
        Loss::Logistic => LabelScheme::PlusMinusOne,
        Loss::Nllsq => LabelScheme::ZeroOne,
    };
    ds = ds.map_labels(scheme).map_err(|e| BenchError::Config(e.to_string()))?;
    if cfg.normalize {
        ds = ds.normalize_rows();
    }
    Ok(ds)
}

/// Uniform on `[-1, 1]^dim`, from the seed's start stream.
pub fn starting_point(seed: u64, dim: usize) -> Vector {
    let mut rng = rng_for(seed, START_STREAM);
    Vector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0))
}

/// Builds the instance for one seed. `dataset` must be the loaded dataset for
/// the adversarial problems.
pub fn build_instance(
    config: &ExperimentConfig,
    dataset: Option<&SparseDataset>,
    seed: u64,
) -> Result<Instance, BenchError> {
    let instance_seed = derive_seed(seed, INSTANCE_STREAM);
    match &config.problem {
        ProblemConfig::Bilinear(b) => {
            let problem = match b.coupling {
                Coupling::Spd => {
                    let mut p = BilinearProblem::generate(b.d, b.mu, b.l, instance_seed)?;
                    p.reg = b.regularization;
                    p
                }
                Coupling::Rotation => BilinearProblem::rotation(b.d, b.l, b.regularization, instance_seed)?,
            };
            let (lp, lq) = problem.lipschitz_bounds();
            let vi = problem.to_vi(b.box_half_width)?;
            Instance::new(vi, starting_point(seed, 2 * b.d), lp, lq)
        }
        ProblemConfig::Logistic(a) | ProblemConfig::Nllsq(a) => {
            let loss = loss_of(&config.problem).expect("adversarial problem");
            let ds = dataset.ok_or_else(|| BenchError::Config("dataset not loaded".into()))?;
            let ds = match a.subsample {
                Some(n) if !a.full_dataset && n < ds.n_rows() => ds.subsample(n, instance_seed)?,
                _ => ds.clone(),
            };
            let problem = AdversarialProblem::from_dataset(loss, &ds, a.beta_x, a.beta_y, a.delta)
                .map_err(|e| BenchError::Config(e.to_string()))?;
            let lp = match a.lipschitz_p {
                Some(lp) => lp,
                None => problem.estimate_lp(a.lipschitz_trials, 1.5, derive_seed(seed, PROBE_STREAM))?,
            };
            let lq = problem.lipschitz_q();
            let vi = problem.to_vi(lp, a.constrained)?;
            Instance::new(vi, starting_point(seed, problem.dim()), lp, lq)
        }
    }
}

/// Sliding parameters from the config; unset values take the defaults.
pub fn sliding_params(cfg: &SlidingConfig, lp: f64, iterations: usize, x0: Vector) -> SlidingParams {
    let mut params = SlidingParams::new(lp, iterations, x0).with_inner(cfg.inner_config());
    if let Some(theta) = cfg.theta {
        params.theta = theta;
        params.eta = theta / 2.0;
    }
    if let Some(eta) = cfg.eta {
        params.eta = eta;
    }
    params
}

/// Runs one solver on one instance.
pub fn run_solver(
    config: &ExperimentConfig,
    instance: &Instance,
    solver: SolverKind,
) -> Result<RunResult, vi_sliding::Error> {
    let vi = instance.vi.fork();
    match solver {
        SolverKind::Sliding => {
            let cfg = config.solvers.sliding.clone().unwrap_or_default();
            let params = sliding_params(&cfg, instance.lp, config.iterations, instance.x0.clone());
            sliding_solve(&vi, &params)
        }
        SolverKind::Extragradient => {
            let gamma = match config.solvers.extragradient.as_ref().and_then(|e| e.gamma) {
                Some(g) => g,
                None => default_gamma(&vi)?,
            };
            extragradient_solve(&vi, gamma, config.iterations, &instance.x0)
        }
    }
}

/// Writes rows with the fixed header and LF line endings.
pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), BenchError> {
    let csv_err = |e: csv::Error| BenchError::Csv {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Oracle calls to first reach a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub fraction: f64,
    pub p_calls: Option<u64>,
    pub q_calls: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub solver: String,
    pub seed: u64,
    pub csv: String,
    pub lp: f64,
    pub lq: f64,
    pub iterations_completed: usize,
    /// `|R(x_0)|` at the projected starting point; thresholds are fractions of it.
    pub initial_residual: f64,
    pub first_residual: f64,
    pub final_residual: f64,
    pub best_residual_sq: f64,
    pub p_calls: u64,
    pub q_calls: u64,
    /// Outer iterations whose inner solve was not certified.
    pub uncertified_inner: usize,
    /// `16 L_p^2 |x_0 - x*|^2 / K` when the solution is known.
    pub theorem_bound: Option<f64>,
    pub thresholds: Vec<ThresholdHit>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub problem: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
    /// Runs that stopped on a non-finite value; their CSVs are partial.
    pub failures: Vec<String>,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

fn solver_list(config: &ExperimentConfig) -> Vec<SolverKind> {
    let mut out = Vec::new();
    if config.solvers.sliding.is_some() {
        out.push(SolverKind::Sliding);
    }
    if config.solvers.extragradient.is_some() {
        out.push(SolverKind::Extragradient);
    }
    out
}

fn summarize(
    solver: SolverKind,
    seed: u64,
    csv: &str,
    instance: &Instance,
    config: &ExperimentConfig,
    records: &[IterateRecord],
    failure: Option<String>,
) -> RunSummary {
    let initial = instance.initial_residual;
    let last = records.last();
    let points: Vec<(f64, u64, u64)> = records.iter().map(|r| (r.residual_norm, r.p_calls, r.q_calls)).collect();
    let thresholds = THRESHOLDS
        .iter()
        .map(|&fraction| {
            let hit = first_reach(&points, fraction * initial);
            ThresholdHit {
                fraction,
                p_calls: hit.map(|h| h.0),
                q_calls: hit.map(|h| h.1),
            }
        })
        .collect();
    let theorem = instance.vi.known_solution.as_ref().and_then(|star| {
        let x0 = instance.vi.feasible.project(&instance.x0).ok()?;
        let dist0_sq = (x0 - star).norm_squared();
        Some(theorem_bound(instance.lp, dist0_sq, config.iterations))
    });
    RunSummary {
        solver: solver.name().to_string(),
        seed,
        csv: csv.to_string(),
        lp: instance.lp,
        lq: instance.lq,
        iterations_completed: records.len(),
        initial_residual: initial,
        first_residual: records.first().map_or(f64::NAN, |r| r.residual_norm),
        final_residual: last.map_or(f64::NAN, |r| r.residual_norm),
        best_residual_sq: last.map_or(f64::NAN, |r| r.best_residual_sq),
        p_calls: last.map_or(0, |r| r.p_calls),
        q_calls: last.map_or(0, |r| r.q_calls),
        uncertified_inner: match solver {
            SolverKind::Sliding => records.iter().filter(|r| !r.inner_certified).count(),
            SolverKind::Extragradient => 0,
        },
        theorem_bound: theorem,
        thresholds,
        failure,
    }
}

/// Runs every (solver, seed) pair, writing CSVs and `summary.json` into the
/// output directory.
///
/// Configuration and I/O problems are errors. A run that hits a non-finite
/// value keeps its partial CSV and is listed in `failures`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, BenchError> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let problem_name = config.problem.kind();
    let dataset = match &config.problem {
        ProblemConfig::Logistic(a) | ProblemConfig::Nllsq(a) => {
            Some(load_dataset(a, loss_of(&config.problem).expect("adversarial problem"))?)
        }
        ProblemConfig::Bilinear(_) => None,
    };

    let instances = config
        .seeds
        .par_iter()
        .map(|&seed| build_instance(config, dataset.as_ref(), seed))
        .collect::<Result<Vec<_>, _>>()?;
    for (seed, inst) in config.seeds.iter().zip(&instances) {
        info!("seed {seed}: dim {} L_p {:.4e} L_q {:.4e}", inst.vi.dim(), inst.lp, inst.lq);
    }

    let jobs: Vec<(usize, SolverKind)> = (0..instances.len())
        .flat_map(|i| solver_list(config).into_iter().map(move |s| (i, s)))
        .collect();

    let results = jobs
        .par_iter()
        .map(|&(i, solver)| {
            let seed = config.seeds[i];
            let instance = &instances[i];
            let file = csv_file_name(problem_name, solver.name(), seed);
            let path = config.output_dir.join(&file);
            let (records, failure) = match run_solver(config, instance, solver) {
                Ok(run) => (run.records, None),
                Err(vi_sliding::Error::NonFinite { iteration, records }) => {
                    let msg = format!("{} seed {seed}: non-finite value at iteration {iteration}", solver.name());
                    warn!("{msg}");
                    (records, Some(msg))
                }
                Err(e) => return Err(BenchError::from(e)),
            };
            let rows: Vec<CsvRow> = records
                .iter()
                .map(|r| CsvRow::from_record(r, config.record_elapsed))
                .collect();
            write_csv(&path, &rows)?;
            let summary = summarize(solver, seed, &file, instance, config, &records, failure);
            Ok((path, summary))
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let (csv_paths, runs): (Vec<PathBuf>, Vec<RunSummary>) = results.into_iter().unzip();
    let failures = runs.iter().filter_map(|r| r.failure.clone()).collect();
    let summary = Summary {
        name: config.name(),
        problem: problem_name.to_string(),
        seeds: config.seeds.clone(),
        config: config.clone(),
        runs,
    };
    let summary_path = config.output_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| BenchError::Numeric(e.to_string()))?;
    fs::write(&summary_path, json + "\n")?;
    Ok(ExperimentOutcome {
        output_dir: config.output_dir.clone(),
        csv_paths,
        summary_path,
        summary,
        failures,
    })
}

/// Sampled structure checks on the first seed's instance.
pub fn probe(config: &ExperimentConfig, trials: usize) -> Result<String, BenchError> {
    config.validate()?;
    let dataset = match &config.problem {
        ProblemConfig::Logistic(a) | ProblemConfig::Nllsq(a) => {
            Some(load_dataset(a, loss_of(&config.problem).expect("adversarial problem"))?)
        }
        ProblemConfig::Bilinear(_) => None,
    };
    let seed = config.seeds[0];
    let inst = build_instance(config, dataset.as_ref(), seed)?;
    let vi = &inst.vi;
    let sampler = || SetPairSampler::new(vi.feasible.clone(), vi.dim(), -1.0, 1.0, rng_for(seed, PROBE_STREAM));

    let mut out = String::new();
    out.push_str(&format!("problem      {}\n", config.problem.kind()));
    out.push_str(&format!("seed         {seed}\n"));
    out.push_str(&format!("dim          {}\n", vi.dim()));
    out.push_str(&format!("L_p used     {:.6e}\n", inst.lp));
    out.push_str(&format!("L_q used     {:.6e}\n", inst.lq));
    let lp_est = estimate_lipschitz(&vi.p, &mut sampler(), trials)?;
    let lq_est = estimate_lipschitz(&vi.q, &mut sampler(), trials)?;
    let p_mono = probe_monotonicity(&vi.p, &mut sampler(), trials)?;
    let q_mono = probe_monotonicity(&vi.q, &mut sampler(), trials)?;
    out.push_str(&format!("L_p sampled  {lp_est:.6e}\n"));
    out.push_str(&format!("L_q sampled  {lq_est:.6e}\n"));
    out.push_str(&format!("P monotone   {} (min ratio {p_mono:.6e})\n", p_mono >= -1e-12));
    out.push_str(&format!("Q monotone   {} (min ratio {q_mono:.6e})\n", q_mono >= -1e-12));
    if vi.known_solution.is_some() {
        let minty = probe_minty(vi, &mut sampler(), trials)?;
        out.push_str(&format!("Minty        {} (min ratio {minty:.6e})\n", minty >= -1e-12));
    }
    Ok(out)
}
