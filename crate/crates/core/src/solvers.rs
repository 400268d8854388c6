//! Extragradient sliding and the classical extragradient baseline.
//!
//! Sliding freezes the expensive operator at the outer iterate `x_k` and
//! approximately solves the strongly monotone subproblem
//!
//! ```text
//! B(u) = P(x_k) + Q(u) + (u - x_k) / theta = 0
//! ```
//!
//! with an inner method that only calls `Q`. The outer step is
//! `x_{k+1} = x_k - eta * R(u_k)`, so each outer iteration costs exactly two
//! `P` evaluations.

use std::time::Instant;

use log::{debug, warn};

use crate::error::{check_dim, Error, Result};
use crate::operators::{CompositeVI, OracleCounter, Vector};

/// Inner method for the sliding subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMethod {
    /// Projected extragradient.
    Eg,
    /// Extra anchored gradient, anchored at `x_k` with weights `1 / (t + 2)`.
    Eag,
}

impl InnerMethod {
    pub fn name(self) -> &'static str {
        match self {
            InnerMethod::Eg => "eg",
            InnerMethod::Eag => "eag",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    pub method: InnerMethod,
    /// Budget of inner steps before giving up on certification.
    pub max_inner: usize,
    /// Absolute floor on `|B(u)|`. Defaults to `1e-12 * L_p * max(1, |x_k|)`.
    pub abs_tol: Option<f64>,
    /// Defaults to `1 / (2 L_B)` with `L_B = L_q + 1 / theta`.
    pub eg_step: Option<f64>,
    /// Defaults to `1 / (8 L_B)`.
    pub eag_step: Option<f64>,
    /// Run exactly this many inner steps instead of stopping on the criterion.
    pub fixed_iters: Option<usize>,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            method: InnerMethod::Eg,
            max_inner: 10_000,
            abs_tol: None,
            eg_step: None,
            eag_step: None,
            fixed_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingParams {
    pub lp: f64,
    pub theta: f64,
    pub eta: f64,
    pub iterations: usize,
    pub inner: InnerConfig,
    pub x0: Vector,
}

impl SlidingParams {
    /// `theta = 1 / (2 L_p)`, `eta = theta / 2`.
    pub fn new(lp: f64, iterations: usize, x0: Vector) -> Self {
        let theta = 1.0 / (2.0 * lp);
        Self {
            lp,
            theta,
            eta: theta / 2.0,
            iterations,
            inner: InnerConfig::default(),
            x0,
        }
    }

    /// Defaults using the problem's declared `L_p`.
    pub fn for_problem(problem: &CompositeVI, iterations: usize, x0: Vector) -> Result<Self> {
        let lp = problem
            .lipschitz_p()
            .ok_or_else(|| Error::config("P has no Lipschitz constant; set L_p explicitly"))?;
        Ok(Self::new(lp, iterations, x0))
    }

    pub fn with_inner(mut self, inner: InnerConfig) -> Self {
        self.inner = inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("L_p", self.lp)?;
        positive("theta", self.theta)?;
        positive("eta", self.eta)?;
        if self.iterations == 0 {
            return Err(Error::config("the number of iterations must be positive"));
        }
        if self.inner.max_inner == 0 {
            return Err(Error::config("max_inner must be at least 1"));
        }
        if let Some(tol) = self.inner.abs_tol {
            if !(tol >= 0.0) {
                return Err(Error::config(format!("abs_tol must be nonnegative, got {tol}")));
            }
        }
        for step in [self.inner.eg_step, self.inner.eag_step].into_iter().flatten() {
            positive("inner step", step)?;
        }
        Ok(())
    }
}

/// Per-iteration metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    /// `|R(u_k)|` for sliding, `|R(x_{k+1/2})|` for extragradient.
    pub residual_norm: f64,
    /// Running minimum of `residual_norm^2`.
    pub best_residual_sq: f64,
    pub p_calls: u64,
    pub q_calls: u64,
    /// Inner steps used at this outer iteration; 0 for extragradient.
    pub inner_iters: usize,
    /// False when the inner solve stopped without meeting the inexactness criterion.
    pub inner_certified: bool,
    pub elapsed_s: f64,
}

/// Echo of the solver configuration that produced a run.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverConfig {
    Sliding {
        lp: f64,
        theta: f64,
        eta: f64,
        inner: InnerConfig,
    },
    Extragradient {
        gamma: f64,
    },
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Sliding { .. } => "sliding",
            SolverConfig::Extragradient { .. } => "extragradient",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IterateRecord>,
    pub final_x: Vector,
    /// Point attaining the smallest recorded residual.
    pub best_u: Vector,
    pub config: SolverConfig,
    pub seed: Option<u64>,
}

impl RunResult {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn uncertified_steps(&self) -> usize {
        self.records.iter().filter(|r| !r.inner_certified).count()
    }

    pub fn best_residual_sq(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.best_residual_sq)
    }
}

/// `16 L_p^2 |x_0 - x*|^2 / K`, the guaranteed bound on `min_j |R(u_j)|^2`.
pub fn theorem_bound(lp: f64, dist0_sq: f64, iterations: usize) -> f64 {
    16.0 * lp * lp * dist0_sq / iterations as f64
}

/// `B(u) = P(x_k) + Q(u) + (u - x_k) / theta`, with `P(x_k)` supplied.
///
/// Costs one `Q` call and no `P` call.
pub fn b_operator(problem: &CompositeVI, x_k: &Vector, p_xk: &Vector, theta: f64, u: &Vector) -> Result<Vector> {
    if !(theta > 0.0) {
        return Err(Error::config(format!("theta must be positive, got {theta}")));
    }
    check_dim(problem.dim(), x_k.len())?;
    check_dim(problem.dim(), p_xk.len())?;
    let q = problem.q.eval(u)?;
    Ok(q + p_xk + (u - x_k) / theta)
}

/// Checkable sufficient condition for `|B(u)|^2 <= (L_p^2 / 3) |x_k - u~|^2`.
///
/// `B` is `1/theta`-strongly monotone, so `|u - u~| <= theta |B(u)|` and
/// `|x_k - u~| >= dist - theta |B(u)|`. Accepting when
/// `(1 + theta L_p / sqrt 3) |B(u)| <= (L_p / sqrt 3) dist` therefore
/// guarantees the condition with the unknown exact solution `u~`.
/// `b_norm <= abs_tol` is accepted unconditionally.
pub fn check_inexact(b_norm: f64, dist: f64, lp: f64, theta: f64, abs_tol: f64) -> bool {
    let c = lp / 3f64.sqrt();
    (1.0 + theta * c) * b_norm <= c * dist || b_norm <= abs_tol
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub u: Vector,
    pub iters: usize,
    pub certified: bool,
}

/// Approximately solves `B(u) = 0`, warm started at `x_k`.
///
/// On constrained problems the criterion is evaluated on the projected
/// gradient mapping `(u - proj(u - s B(u))) / s`, which equals `B(u)` when
/// the set is free.
pub fn inner_solve(problem: &CompositeVI, x_k: &Vector, p_xk: &Vector, params: &SlidingParams) -> Result<InnerOutcome> {
    let theta = params.theta;
    let cfg = &params.inner;
    let step = match cfg.method {
        InnerMethod::Eg => cfg.eg_step,
        InnerMethod::Eag => cfg.eag_step,
    };
    let step = match step {
        Some(s) => s,
        None => {
            let lq = problem.lipschitz_q().ok_or_else(|| {
                Error::config("Q has no Lipschitz constant; set the inner step explicitly")
            })?;
            let lb = lq + 1.0 / theta;
            match cfg.method {
                InnerMethod::Eg => 1.0 / (2.0 * lb),
                InnerMethod::Eag => 1.0 / (8.0 * lb),
            }
        }
    };
    let abs_tol = cfg
        .abs_tol
        .unwrap_or_else(|| 1e-12 * params.lp * x_k.norm().max(1.0));
    let budget = cfg.fixed_iters.unwrap_or(cfg.max_inner);
    let free = problem.feasible.is_free();
    let project = |mut v: Vector| {
        problem.feasible.project_in_place(&mut v);
        v
    };

    let mut u = x_k.clone();
    for t in 0.. {
        let b = b_operator(problem, x_k, p_xk, theta, &u)?;
        let base = match cfg.method {
            InnerMethod::Eg => u.clone(),
            InnerMethod::Eag => {
                let beta = 1.0 / (t as f64 + 2.0);
                &u + (x_k - &u) * beta
            }
        };
        let (b_norm, u_half) = if free {
            (b.norm(), &base - &b * step)
        } else {
            let u_half = project(&base - &b * step);
            let mapping = if cfg.method == InnerMethod::Eg {
                (&u - &u_half).norm() / step
            } else {
                (&u - project(&u - &b * step)).norm() / step
            };
            (mapping, u_half)
        };
        let accept = check_inexact(b_norm, (x_k - &u).norm(), params.lp, theta, abs_tol);
        if (cfg.fixed_iters.is_none() && accept) || t == budget {
            return Ok(InnerOutcome {
                u,
                iters: t,
                certified: accept,
            });
        }
        let b_half = b_operator(problem, x_k, p_xk, theta, &u_half)?;
        u = project(&base - b_half * step);
    }
    unreachable!()
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn starting_point(problem: &CompositeVI, x0: &Vector) -> Result<Vector> {
    check_dim(problem.dim(), x0.len())?;
    if !all_finite(x0) {
        return Err(Error::InvalidArgument("starting point has non-finite entries".into()));
    }
    problem.feasible.validate(problem.dim())?;
    let mut x = x0.clone();
    problem.feasible.project_in_place(&mut x);
    Ok(x)
}

struct Recorder {
    start: OracleCounter,
    clock: Instant,
    records: Vec<IterateRecord>,
    best_sq: f64,
    best_u: Option<Vector>,
}

impl Recorder {
    fn new(problem: &CompositeVI, capacity: usize) -> Self {
        Self {
            start: problem.counters(),
            clock: Instant::now(),
            records: Vec::with_capacity(capacity),
            best_sq: f64::INFINITY,
            best_u: None,
        }
    }

    fn push(&mut self, problem: &CompositeVI, k: usize, residual: &Vector, at: &Vector, inner_iters: usize, certified: bool) -> Result<()> {
        let residual_norm = residual.norm();
        if !residual_norm.is_finite() || !all_finite(at) {
            return Err(Error::NonFinite {
                iteration: k,
                records: std::mem::take(&mut self.records),
            });
        }
        let sq = residual_norm * residual_norm;
        if sq < self.best_sq || self.best_u.is_none() {
            self.best_sq = sq;
            self.best_u = Some(at.clone());
        }
        let counts = problem.counters().since(self.start);
        self.records.push(IterateRecord {
            k,
            residual_norm,
            best_residual_sq: self.best_sq,
            p_calls: counts.p_calls,
            q_calls: counts.q_calls,
            inner_iters,
            inner_certified: certified,
            elapsed_s: self.clock.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn finish(self, final_x: Vector, config: SolverConfig) -> RunResult {
        RunResult {
            records: self.records,
            best_u: self.best_u.unwrap_or_else(|| final_x.clone()),
            final_x,
            config,
            seed: None,
        }
    }
}

/// Extragradient sliding. Exactly two `P` calls per outer iteration.
pub fn sliding_solve(problem: &CompositeVI, params: &SlidingParams) -> Result<RunResult> {
    params.validate()?;
    let mut x = starting_point(problem, &params.x0)?;
    let mut rec = Recorder::new(problem, params.iterations);
    let mut uncertified = 0usize;

    for k in 0..params.iterations {
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                iteration: k,
                records: rec.records,
            });
        }
        let p_xk = problem.p.eval(&x)?;
        let inner = inner_solve(problem, &x, &p_xk, params)?;
        if !inner.certified {
            uncertified += 1;
            debug!("outer iteration {k}: inner solve stopped after {} steps without certification", inner.iters);
        }
        let r_u = problem.eval_r(&inner.u)?;
        rec.push(problem, k, &r_u, &inner.u, inner.iters, inner.certified)?;
        x -= r_u * params.eta;
        problem.feasible.project_in_place(&mut x);
    }
    if uncertified > 0 && params.inner.fixed_iters.is_none() {
        warn!("{uncertified} of {} inner solves hit max_inner without certification", params.iterations);
    }
    let config = SolverConfig::Sliding {
        lp: params.lp,
        theta: params.theta,
        eta: params.eta,
        inner: params.inner.clone(),
    };
    Ok(rec.finish(x, config))
}

/// Default extragradient step `1 / (2 (L_p + L_q))`.
pub fn default_gamma(problem: &CompositeVI) -> Result<f64> {
    match (problem.lipschitz_p(), problem.lipschitz_q()) {
        (Some(lp), Some(lq)) if lp + lq > 0.0 => Ok(1.0 / (2.0 * (lp + lq))),
        _ => Err(Error::config("extragradient needs Lipschitz constants for both P and Q, or an explicit step")),
    }
}

/// Classical extragradient. Two `P` and two `Q` calls per iteration; the
/// residual is reported at the extrapolated point.
pub fn extragradient_solve(problem: &CompositeVI, gamma: f64, iterations: usize, x0: &Vector) -> Result<RunResult> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("gamma must be positive, got {gamma}")));
    }
    if iterations == 0 {
        return Err(Error::config("the number of iterations must be positive"));
    }
    let mut x = starting_point(problem, x0)?;
    let mut rec = Recorder::new(problem, iterations);

    for k in 0..iterations {
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                iteration: k,
                records: rec.records,
            });
        }
        let r_x = problem.eval_r(&x)?;
        let mut x_half = &x - r_x * gamma;
        problem.feasible.project_in_place(&mut x_half);
        let r_half = problem.eval_r(&x_half)?;
        rec.push(problem, k, &r_half, &x_half, 0, true)?;
        x -= r_half * gamma;
        problem.feasible.project_in_place(&mut x);
    }
    Ok(rec.finish(x, SolverConfig::Extragradient { gamma }))
}
