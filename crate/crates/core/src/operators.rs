//! Vector fields, the composite problem model, feasible sets and sampled
//! assumption probes.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;

/// A map `R^d -> R^d`.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Vector) -> Vector;
}

/// A [`Field`] backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Vector) -> Vector + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&Vector) -> Vector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
}

/// An evaluatable operator with optional regularity metadata and a call counter.
///
/// The field itself is shared; the counter belongs to this handle. Use
/// [`OperatorHandle::fork`] to get a handle with a fresh counter for a new run.
pub struct OperatorHandle {
    field: Arc<dyn Field>,
    lipschitz_hint: Option<f64>,
    monotone_hint: Option<bool>,
    calls: AtomicU64,
}

impl OperatorHandle {
    pub fn new(field: Arc<dyn Field>) -> Self {
        Self {
            field,
            lipschitz_hint: None,
            monotone_hint: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnField::new(dim, f)))
    }

    /// The zero field on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self::from_fn(dim, move |_| Vector::zeros(dim))
            .with_lipschitz(0.0)
            .with_monotone(true)
    }

    /// `x -> scale * (x - center)`.
    pub fn scaled_identity(center: Vector, scale: f64) -> Self {
        let dim = center.len();
        Self::from_fn(dim, move |x| (x - &center) * scale)
            .with_lipschitz(scale.abs())
            .with_monotone(scale >= 0.0)
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    pub fn with_monotone(mut self, monotone: bool) -> Self {
        self.monotone_hint = Some(monotone);
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn monotone_hint(&self) -> Option<bool> {
        self.monotone_hint
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Evaluates the operator, counting one call.
    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let out = self.field.apply(x);
        debug_assert_eq!(out.len(), self.dim());
        Ok(out)
    }

    /// Same field and metadata, fresh counter.
    pub fn fork(&self) -> Self {
        Self {
            field: Arc::clone(&self.field),
            lipschitz_hint: self.lipschitz_hint,
            monotone_hint: self.monotone_hint,
            calls: AtomicU64::new(0),
        }
    }
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("dim", &self.dim())
            .field("lipschitz_hint", &self.lipschitz_hint)
            .field("monotone_hint", &self.monotone_hint)
            .field("calls", &self.calls())
            .finish()
    }
}

/// Snapshot of the number of `P` and `Q` evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCounter {
    pub p_calls: u64,
    pub q_calls: u64,
}

impl OracleCounter {
    pub fn since(self, start: OracleCounter) -> OracleCounter {
        OracleCounter {
            p_calls: self.p_calls - start.p_calls,
            q_calls: self.q_calls - start.q_calls,
        }
    }
}

/// Feasible set for the iterates.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Free,
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// An unconstrained prefix of length `prefix` followed by Euclidean balls
    /// of radius `radius`, one per block.
    BlockBalls {
        prefix: usize,
        block_starts: Vec<usize>,
        block_len: usize,
        radius: f64,
    },
}

impl ConstraintSet {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        ConstraintSet::Box {
            lower: Vector::from_element(dim, -half_width),
            upper: Vector::from_element(dim, half_width),
        }
    }

    /// `n_blocks` consecutive balls of length `block_len` after `prefix` free coordinates.
    pub fn block_balls(prefix: usize, n_blocks: usize, block_len: usize, radius: f64) -> Self {
        ConstraintSet::BlockBalls {
            prefix,
            block_starts: (0..n_blocks).map(|i| prefix + i * block_len).collect(),
            block_len,
            radius,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ConstraintSet::Free)
    }

    /// Checks the set is well formed for vectors of length `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ConstraintSet::Free => Ok(()),
            ConstraintSet::Box { lower, upper } => {
                check_dim(dim, lower.len())?;
                check_dim(dim, upper.len())?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
                    return Err(Error::config("box lower bound exceeds upper bound"));
                }
                Ok(())
            }
            ConstraintSet::BlockBalls {
                prefix,
                block_starts,
                block_len,
                radius,
            } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::config(format!("invalid ball radius {radius}")));
                }
                if *block_len == 0 {
                    return Err(Error::config("ball blocks must be non-empty"));
                }
                let mut expected = *prefix;
                for &start in block_starts {
                    if start != expected {
                        return Err(Error::config(format!(
                            "ball block starting at {start} overlaps or leaves a gap (expected {expected})"
                        )));
                    }
                    expected += block_len;
                }
                if expected != dim {
                    return Err(Error::config(format!(
                        "ball blocks end at {expected} but the dimension is {dim}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        self.validate(x.len())?;
        let mut out = x.clone();
        self.project_in_place(&mut out);
        Ok(out)
    }

    /// Projection without validation; callers validate once up front.
    pub(crate) fn project_in_place(&self, x: &mut Vector) {
        match self {
            ConstraintSet::Free => {}
            ConstraintSet::Box { lower, upper } => {
                for i in 0..x.len() {
                    x[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
            ConstraintSet::BlockBalls {
                block_starts,
                block_len,
                radius,
                ..
            } => {
                for &start in block_starts {
                    let mut block = x.rows_mut(start, *block_len);
                    let norm = block.norm();
                    if norm > *radius {
                        block *= radius / norm;
                    }
                }
            }
        }
    }

    /// Draws a point of the set. Unconstrained coordinates are uniform in
    /// `[lo, hi]`; ball blocks are uniform in their ball.
    pub fn sample_point(&self, dim: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vector {
        let mut x = Vector::from_fn(dim, |_, _| rng.random_range(lo..=hi));
        match self {
            ConstraintSet::Free => {}
            ConstraintSet::Box { .. } => self.project_in_place(&mut x),
            ConstraintSet::BlockBalls {
                block_starts,
                block_len,
                radius,
                ..
            } => {
                for &start in block_starts {
                    let dir = Vector::from_fn(*block_len, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let norm = dir.norm();
                    let r = radius * rng.random::<f64>().powf(1.0 / *block_len as f64);
                    let scale = if norm > 0.0 { r / norm } else { 0.0 };
                    x.rows_mut(start, *block_len).copy_from(&(dir * scale));
                }
            }
        }
        x
    }
}

/// The composite problem `R(x) = P(x) + Q(x)`.
#[derive(Debug)]
pub struct CompositeVI {
    /// Generally non-monotone, "expensive" part.
    pub p: OperatorHandle,
    /// Monotone, "cheap" part.
    pub q: OperatorHandle,
    pub feasible: ConstraintSet,
    pub known_solution: Option<Vector>,
}

impl CompositeVI {
    pub fn new(p: OperatorHandle, q: OperatorHandle) -> Result<Self> {
        check_dim(p.dim(), q.dim())?;
        if p.dim() == 0 {
            return Err(Error::config("problem dimension must be positive"));
        }
        Ok(Self {
            p,
            q,
            feasible: ConstraintSet::Free,
            known_solution: None,
        })
    }

    pub fn with_feasible(mut self, feasible: ConstraintSet) -> Result<Self> {
        feasible.validate(self.dim())?;
        self.feasible = feasible;
        Ok(self)
    }

    pub fn with_known_solution(mut self, x: Vector) -> Result<Self> {
        check_dim(self.dim(), x.len())?;
        self.known_solution = Some(x);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn lipschitz_p(&self) -> Option<f64> {
        self.p.lipschitz_hint()
    }

    pub fn lipschitz_q(&self) -> Option<f64> {
        self.q.lipschitz_hint()
    }

    /// `R(x) = P(x) + Q(x)`; one call to each oracle.
    pub fn eval_r(&self, x: &Vector) -> Result<Vector> {
        let p = self.p.eval(x)?;
        let q = self.q.eval(x)?;
        Ok(p + q)
    }

    pub fn counters(&self) -> OracleCounter {
        OracleCounter {
            p_calls: self.p.calls(),
            q_calls: self.q.calls(),
        }
    }

    pub fn reset_counters(&self) {
        self.p.reset_calls();
        self.q.reset_calls();
    }

    /// Shares the fields, starts fresh counters. One fork per run.
    pub fn fork(&self) -> Self {
        Self {
            p: self.p.fork(),
            q: self.q.fork(),
            feasible: self.feasible.clone(),
            known_solution: self.known_solution.clone(),
        }
    }
}

/// Source of point pairs for the sampled probes.
pub trait PairSampler {
    fn sample_pair(&mut self) -> (Vector, Vector);
}

impl<F> PairSampler for F
where
    F: FnMut() -> (Vector, Vector),
{
    fn sample_pair(&mut self) -> (Vector, Vector) {
        self()
    }
}

/// Independent pairs drawn from a set via [`ConstraintSet::sample_point`].
pub struct SetPairSampler {
    set: ConstraintSet,
    dim: usize,
    lo: f64,
    hi: f64,
    rng: ChaCha8Rng,
}

impl SetPairSampler {
    pub fn new(set: ConstraintSet, dim: usize, lo: f64, hi: f64, rng: ChaCha8Rng) -> Self {
        Self {
            set,
            dim,
            lo,
            hi,
            rng,
        }
    }

    /// Uniform pairs in the cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64, rng: ChaCha8Rng) -> Self {
        Self::new(ConstraintSet::Free, dim, lo, hi, rng)
    }
}

impl PairSampler for SetPairSampler {
    fn sample_pair(&mut self) -> (Vector, Vector) {
        let a = self.set.sample_point(self.dim, self.lo, self.hi, &mut self.rng);
        let b = self.set.sample_point(self.dim, self.lo, self.hi, &mut self.rng);
        (a, b)
    }
}

fn sampled_extreme<S, F>(sampler: &mut S, trials: usize, mut ratio: F, take_max: bool) -> Result<f64>
where
    S: PairSampler + ?Sized,
    F: FnMut(&Vector, &Vector, f64) -> Result<f64>,
{
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut best: Option<f64> = None;
    for _ in 0..trials {
        let (a, b) = sampler.sample_pair();
        let dist_sq = (&a - &b).norm_squared();
        if dist_sq == 0.0 {
            continue;
        }
        let r = ratio(&a, &b, dist_sq)?;
        best = Some(match best {
            None => r,
            Some(v) if take_max => v.max(r),
            Some(v) => v.min(r),
        });
    }
    best.ok_or(Error::DegenerateSamples { trials })
}

/// Minimum over sampled pairs of `<F(a) - F(b), a - b> / |a - b|^2`.
///
/// A nonnegative value is consistent with monotonicity; a negative one is a
/// witness against it.
pub fn probe_monotonicity<S>(op: &OperatorHandle, sampler: &mut S, trials: usize) -> Result<f64>
where
    S: PairSampler + ?Sized,
{
    sampled_extreme(
        sampler,
        trials,
        |a, b, dist_sq| {
            let diff = op.eval(a)? - op.eval(b)?;
            Ok(diff.dot(&(a - b)) / dist_sq)
        },
        false,
    )
}

/// Maximum over sampled pairs of `|F(a) - F(b)| / |a - b|`; a lower bound on
/// the Lipschitz constant.
pub fn estimate_lipschitz<S>(op: &OperatorHandle, sampler: &mut S, trials: usize) -> Result<f64>
where
    S: PairSampler + ?Sized,
{
    sampled_extreme(
        sampler,
        trials,
        |a, b, dist_sq| {
            let diff = op.eval(a)? - op.eval(b)?;
            Ok(diff.norm() / dist_sq.sqrt())
        },
        true,
    )
}

/// Minimum over sampled points of `<R(x), x - x*> / |x - x*|^2`, a sampled
/// check of the Minty condition. Requires a known solution.
pub fn probe_minty<S>(problem: &CompositeVI, sampler: &mut S, trials: usize) -> Result<f64>
where
    S: PairSampler + ?Sized,
{
    let star = problem
        .known_solution
        .as_ref()
        .ok_or_else(|| Error::config("the Minty probe needs a known solution"))?;
    sampled_extreme(
        &mut || {
            let (a, _) = sampler.sample_pair();
            (a, star.clone())
        },
        trials,
        |x, star, dist_sq| Ok(problem.eval_r(x)?.dot(&(x - star)) / dist_sq),
        false,
    )
}

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Saddle field of a scalar function by central differences.
///
/// The first `split.0` coordinates are minimized over and keep the gradient
/// sign; the remaining `split.1` coordinates are maximized over and get the
/// negated gradient.
pub fn finite_difference_field<F>(scalar_fn: F, split: (usize, usize), x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    check_dim(split.0 + split.1, x.len())?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vector::zeros(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + h;
        let fp = scalar_fn(&probe);
        probe[i] = xi - h;
        let fm = scalar_fn(&probe);
        probe[i] = xi;
        let g = (fp - fm) / (2.0 * h);
        out[i] = if i < split.0 { g } else { -g };
    }
    Ok(out)
}
