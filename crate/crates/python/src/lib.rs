//! Python bindings: problem construction, the two solvers and the sampled
//! structure probes. Vectors cross the boundary as lists of floats.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use vi_sliding::data::{self, LabelScheme, SparseDataset};
use vi_sliding::operators::{estimate_lipschitz, probe_monotonicity, SetPairSampler};
use vi_sliding::problems::{AdversarialProblem, BilinearProblem, Loss};
use vi_sliding::seeding::rng_for;
use vi_sliding::solvers::{self, default_gamma};
use vi_sliding::{CompositeVI, InnerConfig, InnerMethod, SlidingParams, Vector};

fn to_py_err(e: vi_sliding::Error) -> PyErr {
    match e {
        vi_sliding::Error::NonFinite { iteration, .. } => {
            PyArithmeticError::new_err(format!("non-finite value at iteration {iteration}"))
        }
        vi_sliding::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn vector(v: Vec<f64>) -> Vector {
    Vector::from_vec(v)
}

fn list(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A composite problem `R = P + Q` with declared Lipschitz constants.
#[pyclass(module = "vi_sliding_py", frozen)]
struct Problem {
    vi: CompositeVI,
    kind: &'static str,
}

#[pymethods]
impl Problem {
    /// Random SPD coupling with spectrum in `[mu, L]` and biases in `[-1, 1]`.
    #[staticmethod]
    #[pyo3(signature = (d, mu, l, seed, regularization = 1.0, box_half_width = None))]
    fn bilinear(d: usize, mu: f64, l: f64, seed: u64, regularization: f64, box_half_width: Option<f64>) -> PyResult<Self> {
        let mut prob = BilinearProblem::generate(d, mu, l, seed).map_err(to_py_err)?;
        prob.reg = regularization;
        Ok(Self {
            vi: prob.to_vi(box_half_width).map_err(to_py_err)?,
            kind: "bilinear",
        })
    }

    /// `P(x, y) = lp (y - b_y, -(x - b_x))`, `Q = lq (v - b)`.
    #[staticmethod]
    fn rotation(d: usize, lp: f64, lq: f64, seed: u64) -> PyResult<Self> {
        let prob = BilinearProblem::rotation(d, lp, lq, seed).map_err(to_py_err)?;
        Ok(Self {
            vi: prob.to_vi(None).map_err(to_py_err)?,
            kind: "bilinear",
        })
    }

    /// Adversarial logistic (`loss="logistic"`) or NLLSQ (`loss="nllsq"`)
    /// problem from LibSVM text. Labels are mapped to the loss's scheme.
    /// `L_p` is estimated by sampling unless given.
    #[staticmethod]
    #[pyo3(signature = (loss, libsvm_text, beta_x = 0.1, beta_y = 0.1, delta = 0.1, lipschitz_p = None, constrained = true, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn adversarial(
        loss: &str,
        libsvm_text: &str,
        beta_x: f64,
        beta_y: f64,
        delta: f64,
        lipschitz_p: Option<f64>,
        constrained: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let (loss, scheme, kind) = match loss {
            "logistic" => (Loss::Logistic, LabelScheme::PlusMinusOne, "logistic"),
            "nllsq" => (Loss::Nllsq, LabelScheme::ZeroOne, "nllsq"),
            other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
        };
        let ds = data::parse_libsvm(libsvm_text)
            .and_then(|d| d.map_labels(scheme))
            .map_err(to_py_err)?;
        let prob = AdversarialProblem::from_dataset(loss, &ds, beta_x, beta_y, delta).map_err(to_py_err)?;
        let (lp, _) = prob.lipschitz_bounds(lipschitz_p, seed).map_err(to_py_err)?;
        Ok(Self {
            vi: prob.to_vi(lp, constrained).map_err(to_py_err)?,
            kind,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.kind
    }

    #[getter]
    fn dim(&self) -> usize {
        self.vi.dim()
    }

    #[getter]
    fn lipschitz_p(&self) -> Option<f64> {
        self.vi.lipschitz_p()
    }

    #[getter]
    fn lipschitz_q(&self) -> Option<f64> {
        self.vi.lipschitz_q()
    }

    #[getter]
    fn known_solution(&self) -> Option<Vec<f64>> {
        self.vi.known_solution.as_ref().map(list)
    }

    fn eval_p(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.vi.p.eval(&vector(x)).map(|v| list(&v)).map_err(to_py_err)
    }

    fn eval_q(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.vi.q.eval(&vector(x)).map(|v| list(&v)).map_err(to_py_err)
    }

    fn eval_r(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.vi.eval_r(&vector(x)).map(|v| list(&v)).map_err(to_py_err)
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.vi.feasible.project(&vector(x)).map(|v| list(&v)).map_err(to_py_err)
    }

    /// Cumulative `(p_calls, q_calls)` made through `eval_*`.
    fn counters(&self) -> (u64, u64) {
        let c = self.vi.counters();
        (c.p_calls, c.q_calls)
    }

    fn reset_counters(&self) {
        self.vi.reset_counters();
    }

    /// Smallest sampled `<F(a) - F(b), a - b> / |a - b|^2` for `which` in
    /// `{"p", "q", "r"}`; negative values are monotonicity witnesses.
    #[pyo3(signature = (which, trials = 1000, seed = 0, lo = -1.0, hi = 1.0))]
    fn probe_monotonicity(&self, which: &str, trials: usize, seed: u64, lo: f64, hi: f64) -> PyResult<f64> {
        let vi = self.vi.fork();
        let mut sampler = SetPairSampler::new(vi.feasible.clone(), vi.dim(), lo, hi, rng_for(seed, 0));
        match which {
            "p" => probe_monotonicity(&vi.p, &mut sampler, trials),
            "q" => probe_monotonicity(&vi.q, &mut sampler, trials),
            "r" => {
                let sum = vi_sliding::OperatorHandle::from_fn(vi.dim(), move |x| {
                    vi.eval_r(x).expect("dimension checked by the probe")
                });
                probe_monotonicity(&sum, &mut sampler, trials)
            }
            other => return Err(PyValueError::new_err(format!("unknown operator {other:?}"))),
        }
        .map_err(to_py_err)
    }

    /// Largest sampled `|F(a) - F(b)| / |a - b|` for `which` in `{"p", "q"}`.
    #[pyo3(signature = (which, trials = 1000, seed = 0))]
    fn estimate_lipschitz(&self, which: &str, trials: usize, seed: u64) -> PyResult<f64> {
        let vi = self.vi.fork();
        let mut sampler = SetPairSampler::new(vi.feasible.clone(), vi.dim(), -1.0, 1.0, rng_for(seed, 0));
        let op = match which {
            "p" => &vi.p,
            "q" => &vi.q,
            other => return Err(PyValueError::new_err(format!("unknown operator {other:?}"))),
        };
        estimate_lipschitz(op, &mut sampler, trials).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("None".to_string(), |v| v.to_string());
        format!(
            "Problem(kind={:?}, dim={}, lipschitz_p={}, lipschitz_q={})",
            self.kind,
            self.vi.dim(),
            opt(self.vi.lipschitz_p()),
            opt(self.vi.lipschitz_q())
        )
    }
}

/// Per-iteration records of a solver run, column by column.
#[pyclass(module = "vi_sliding_py", frozen, get_all)]
struct Run {
    solver: &'static str,
    k: Vec<usize>,
    residual_norm: Vec<f64>,
    best_residual_sq: Vec<f64>,
    p_calls: Vec<u64>,
    q_calls: Vec<u64>,
    inner_iters: Vec<usize>,
    inner_certified: Vec<bool>,
    elapsed_s: Vec<f64>,
    final_x: Vec<f64>,
    best_u: Vec<f64>,
}

impl From<vi_sliding::RunResult> for Run {
    fn from(r: vi_sliding::RunResult) -> Self {
        let col = |f: fn(&vi_sliding::IterateRecord) -> f64| r.records.iter().map(f).collect::<Vec<_>>();
        Self {
            solver: r.config.name(),
            k: r.records.iter().map(|x| x.k).collect(),
            residual_norm: col(|x| x.residual_norm),
            best_residual_sq: col(|x| x.best_residual_sq),
            p_calls: r.records.iter().map(|x| x.p_calls).collect(),
            q_calls: r.records.iter().map(|x| x.q_calls).collect(),
            inner_iters: r.records.iter().map(|x| x.inner_iters).collect(),
            inner_certified: r.records.iter().map(|x| x.inner_certified).collect(),
            elapsed_s: col(|x| x.elapsed_s),
            final_x: list(&r.final_x),
            best_u: list(&r.best_u),
        }
    }
}

#[pymethods]
impl Run {
    fn __len__(&self) -> usize {
        self.k.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Run(solver={:?}, iterations={}, final_residual={})",
            self.solver,
            self.k.len(),
            self.residual_norm.last().map_or("None".to_string(), |v| v.to_string())
        )
    }
}

/// Extragradient sliding with defaults `theta = 1/(2 L_p)`, `eta = theta/2`.
#[pyfunction]
#[pyo3(signature = (problem, iterations, x0, inner = "eg", theta = None, eta = None, max_inner = 10_000, fixed_inner = None))]
#[allow(clippy::too_many_arguments)]
fn sliding_solve(
    py: Python<'_>,
    problem: &Problem,
    iterations: usize,
    x0: Vec<f64>,
    inner: &str,
    theta: Option<f64>,
    eta: Option<f64>,
    max_inner: usize,
    fixed_inner: Option<usize>,
) -> PyResult<Run> {
    let method = match inner {
        "eg" => InnerMethod::Eg,
        "eag" => InnerMethod::Eag,
        other => return Err(PyValueError::new_err(format!("unknown inner method {other:?}"))),
    };
    let mut params = SlidingParams::for_problem(&problem.vi, iterations, vector(x0))
        .map_err(to_py_err)?
        .with_inner(InnerConfig {
            method,
            max_inner,
            fixed_iters: fixed_inner,
            ..InnerConfig::default()
        });
    if let Some(theta) = theta {
        params.theta = theta;
        params.eta = theta / 2.0;
    }
    if let Some(eta) = eta {
        params.eta = eta;
    }
    let vi = problem.vi.fork();
    py.detach(move || vi_sliding::sliding_solve(&vi, &params))
        .map(Run::from)
        .map_err(to_py_err)
}

/// Extragradient with default step `1 / (2 (L_p + L_q))`.
#[pyfunction]
#[pyo3(signature = (problem, iterations, x0, gamma = None))]
fn extragradient_solve(py: Python<'_>, problem: &Problem, iterations: usize, x0: Vec<f64>, gamma: Option<f64>) -> PyResult<Run> {
    let vi = problem.vi.fork();
    let gamma = match gamma {
        Some(g) => g,
        None => default_gamma(&vi).map_err(to_py_err)?,
    };
    let x0 = vector(x0);
    py.detach(move || vi_sliding::extragradient_solve(&vi, gamma, iterations, &x0))
        .map(Run::from)
        .map_err(to_py_err)
}

/// `16 L_p^2 dist0_sq / K`.
#[pyfunction]
fn theorem_bound(lp: f64, dist0_sq: f64, iterations: usize) -> f64 {
    solvers::theorem_bound(lp, dist0_sq, iterations)
}

/// The inner stopping test.
#[pyfunction]
#[pyo3(signature = (b_norm, dist, lp, theta, abs_tol = 0.0))]
fn check_inexact(b_norm: f64, dist: f64, lp: f64, theta: f64, abs_tol: f64) -> bool {
    solvers::check_inexact(b_norm, dist, lp, theta, abs_tol)
}

/// Parsed LibSVM data.
#[pyclass(module = "vi_sliding_py", frozen, get_all)]
struct LibSvm {
    labels: Vec<f64>,
    rows: Vec<Vec<(u32, f64)>>,
    n_features: usize,
}

#[pymethods]
impl LibSvm {
    fn __len__(&self) -> usize {
        self.labels.len()
    }

    fn to_text(&self) -> String {
        SparseDataset {
            rows: self.rows.clone(),
            labels: self.labels.clone(),
            n_features: self.n_features,
        }
        .to_libsvm_string()
    }
}

#[pyfunction]
fn parse_libsvm(text: &str) -> PyResult<LibSvm> {
    let ds = data::parse_libsvm(text).map_err(to_py_err)?;
    Ok(LibSvm {
        labels: ds.labels,
        rows: ds.rows,
        n_features: ds.n_features,
    })
}

#[pymodule]
fn vi_sliding_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Run>()?;
    m.add_class::<LibSvm>()?;
    m.add_function(wrap_pyfunction!(sliding_solve, m)?)?;
    m.add_function(wrap_pyfunction!(extragradient_solve, m)?)?;
    m.add_function(wrap_pyfunction!(theorem_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_inexact, m)?)?;
    m.add_function(wrap_pyfunction!(parse_libsvm, m)?)?;
    Ok(())
}
