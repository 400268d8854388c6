//! Benchmark problems: a random bilinear saddle problem and saddle problems
//! for training linear classifiers against per-sample adversarial noise.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::SparseDataset;
use crate::error::{check_dim, Error, Result};
use crate::operators::{
    estimate_lipschitz, CompositeVI, ConstraintSet, Field, OperatorHandle, SetPairSampler, Vector,
};
use crate::seeding::rng_for;

/// Random symmetric positive definite matrix `U^T diag(lambda) U` with `U`
/// orthonormal (QR of a Gaussian matrix) and `lambda` uniform in `[mu, l]`.
///
/// Returns the matrix and its eigenvalues.
pub fn gen_spd_with_spectrum(d: usize, mu: f64, l: f64, seed: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if d == 0 {
        return Err(Error::config("matrix dimension must be positive"));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(Error::config(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    let mut rng = rng_for(seed, 0);
    let gaussian = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let basis = gaussian.qr().q();
    let eigenvalues: Vec<f64> = (0..d).map(|_| rng.random_range(mu..=l)).collect();
    let scaled = DMatrix::from_fn(d, d, |i, j| basis[(i, j)] * eigenvalues[j]);
    let a = &scaled * basis.transpose();
    let sym = (&a + a.transpose()) * 0.5;
    Ok((sym, eigenvalues))
}

pub fn gen_spd(d: usize, mu: f64, l: f64, seed: u64) -> Result<DMatrix<f64>> {
    gen_spd_with_spectrum(d, mu, l, seed).map(|(a, _)| a)
}

/// `f(x, y) = (x - b_x)^T A (y - b_y) + reg/2 |x - b_x|^2 - reg/2 |y - b_y|^2`.
///
/// `P` is the coupling part of the saddle field and `Q` the regularizer part.
/// The saddle point is `(b_x, b_y)`.
#[derive(Debug, Clone)]
pub struct BilinearProblem {
    pub a: DMatrix<f64>,
    pub b_x: Vector,
    pub b_y: Vector,
    pub reg: f64,
    /// Largest singular value of `A`.
    pub sigma_max: f64,
}

struct BilinearCoupling {
    a: DMatrix<f64>,
    b_x: Vector,
    b_y: Vector,
}

impl Field for BilinearCoupling {
    fn dim(&self) -> usize {
        self.b_x.len() + self.b_y.len()
    }

    fn apply(&self, v: &Vector) -> Vector {
        let dx = self.b_x.len();
        let x = v.rows(0, dx) - &self.b_x;
        let y = v.rows(dx, self.b_y.len()) - &self.b_y;
        let mut out = Vector::zeros(self.dim());
        out.rows_mut(0, dx).copy_from(&(&self.a * y));
        out.rows_mut(dx, self.b_y.len()).copy_from(&-(self.a.tr_mul(&x)));
        out
    }
}

impl BilinearProblem {
    /// Builds a problem from an explicit coupling matrix. `sigma_max` is
    /// computed from the SVD.
    pub fn new(a: DMatrix<f64>, b_x: Vector, b_y: Vector, reg: f64) -> Result<Self> {
        check_dim(a.nrows(), b_x.len())?;
        check_dim(a.ncols(), b_y.len())?;
        if !(reg >= 0.0) {
            return Err(Error::config(format!("regularization must be nonnegative, got {reg}")));
        }
        let sigma_max = a.singular_values().max();
        Ok(Self {
            a,
            b_x,
            b_y,
            reg,
            sigma_max,
        })
    }

    /// `A = gen_spd(d, mu, l, seed)`, `b_x, b_y ~ U(-1, 1)` per coordinate,
    /// unit regularization.
    pub fn generate(d: usize, mu: f64, l: f64, seed: u64) -> Result<Self> {
        let (a, eigenvalues) = gen_spd_with_spectrum(d, mu, l, seed)?;
        let mut rng = rng_for(seed, 1);
        let b_x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let b_y = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let sigma_max = eigenvalues.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            a,
            b_x,
            b_y,
            reg: 1.0,
            sigma_max,
        })
    }

    /// `Q = lq (v - b)` with a unit-norm rotation coupling scaled to `lp`:
    /// `P(x, y) = lp (y - b_y, -(x - b_x))`.
    pub fn rotation(d: usize, lp: f64, lq: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, 1);
        let b_x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let b_y = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let mut p = Self::new(DMatrix::identity(d, d) * lp, b_x, b_y, lq)?;
        p.sigma_max = lp;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.b_x.len() + self.b_y.len()
    }

    pub fn solution(&self) -> Vector {
        let mut s = Vector::zeros(self.dim());
        s.rows_mut(0, self.b_x.len()).copy_from(&self.b_x);
        s.rows_mut(self.b_x.len(), self.b_y.len()).copy_from(&self.b_y);
        s
    }

    /// `(L_p, L_q) = (sigma_max(A), reg)`.
    pub fn lipschitz_bounds(&self) -> (f64, f64) {
        (self.sigma_max, self.reg)
    }

    pub fn fields(&self) -> (OperatorHandle, OperatorHandle) {
        let p = OperatorHandle::new(Arc::new(BilinearCoupling {
            a: self.a.clone(),
            b_x: self.b_x.clone(),
            b_y: self.b_y.clone(),
        }))
        .with_lipschitz(self.sigma_max)
        .with_monotone(true);
        let q = OperatorHandle::scaled_identity(self.solution(), self.reg);
        (p, q)
    }

    /// The composite problem; with `box_half_width` the iterates are kept
    /// in `[-w, w]^{2d}`.
    pub fn to_vi(&self, box_half_width: Option<f64>) -> Result<CompositeVI> {
        let (p, q) = self.fields();
        let vi = CompositeVI::new(p, q)?.with_known_solution(self.solution())?;
        match box_half_width {
            Some(w) => vi.with_feasible(ConstraintSet::cube(self.dim(), w)),
            None => Ok(vi),
        }
    }

    pub fn objective(&self, v: &Vector) -> f64 {
        let dx = self.b_x.len();
        let x = v.rows(0, dx) - &self.b_x;
        let y = v.rows(dx, self.b_y.len()) - &self.b_y;
        x.dot(&(&self.a * &y)) + 0.5 * self.reg * (x.norm_squared() - y.norm_squared())
    }
}

/// Data loss of the adversarial problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `ln(1 + exp(-b x^T (a + y)))`, labels in `{-1, +1}`.
    Logistic,
    /// `(b - sigmoid(x^T (a + y)))^2`, labels in `{0, 1}`.
    Nllsq,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::Nllsq => "nllsq",
        }
    }
}

/// Numerically stable `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + exp(t))`.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// ```text
/// min_x max_{|y_i| <= delta} 1/N sum_i loss(x, A_i + y_i, b_i)
///                            + beta_x/2 |x|^2 - beta_y/2 |y|^2
/// ```
///
/// Variables are laid out as `(x, y_1, ..., y_N)`, each block of length `d`.
#[derive(Debug, Clone)]
pub struct AdversarialProblem {
    pub loss: Loss,
    /// Dense `N x d` feature matrix.
    pub features: Arc<DMatrix<f64>>,
    pub labels: Arc<Vec<f64>>,
    pub beta_x: f64,
    pub beta_y: f64,
    pub delta: f64,
}

struct AdversarialField {
    loss: Loss,
    features: Arc<DMatrix<f64>>,
    labels: Arc<Vec<f64>>,
}

impl AdversarialField {
    fn d(&self) -> usize {
        self.features.ncols()
    }

    fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Returns `(w_i, c_i)` with `w_i = A_i + y_i` and `c_i` the derivative of
    /// the per-sample loss with respect to `x^T w_i`.
    fn sample(&self, point: &Vector, i: usize) -> (Vector, f64) {
        let d = self.d();
        let x = point.rows(0, d);
        let w = self.features.row(i).transpose() + point.rows(d * (i + 1), d);
        let t = x.dot(&w);
        let b = self.labels[i];
        let c = match self.loss {
            Loss::Logistic => -b * sigmoid(-b * t),
            Loss::Nllsq => {
                let s = sigmoid(t);
                -2.0 * (b - s) * s * (1.0 - s)
            }
        };
        (w, c)
    }
}

impl Field for AdversarialField {
    fn dim(&self) -> usize {
        self.d() * (self.n() + 1)
    }

    fn apply(&self, point: &Vector) -> Vector {
        let d = self.d();
        let n = self.n();
        let inv_n = 1.0 / n.max(1) as f64;
        let mut out = Vector::zeros(self.dim());
        let x = point.rows(0, d).into_owned();
        for i in 0..n {
            let (w, c) = self.sample(point, i);
            let scale = c * inv_n;
            out.rows_mut(0, d).axpy(scale, &w, 1.0);
            out.rows_mut(d * (i + 1), d).copy_from(&(&x * -scale));
        }
        out
    }
}

impl AdversarialProblem {
    pub fn new(loss: Loss, features: DMatrix<f64>, labels: Vec<f64>, beta_x: f64, beta_y: f64, delta: f64) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        if features.ncols() == 0 || features.nrows() == 0 {
            return Err(Error::config("the dataset must have at least one row and one feature"));
        }
        if !(beta_x >= 0.0 && beta_y >= 0.0) {
            return Err(Error::config("regularization weights must be nonnegative"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::config(format!("noise radius must be nonnegative, got {delta}")));
        }
        let ok = |b: f64| match loss {
            Loss::Logistic => b == -1.0 || b == 1.0,
            Loss::Nllsq => (0.0..=1.0).contains(&b),
        };
        if let Some(bad) = labels.iter().find(|&&b| !ok(b)) {
            return Err(Error::config(format!("label {bad} is not valid for the {} loss", loss.name())));
        }
        Ok(Self {
            loss,
            features: Arc::new(features),
            labels: Arc::new(labels),
            beta_x,
            beta_y,
            delta,
        })
    }

    /// Densifies a dataset whose labels are already mapped for `loss`.
    pub fn from_dataset(loss: Loss, ds: &SparseDataset, beta_x: f64, beta_y: f64, delta: f64) -> Result<Self> {
        Self::new(loss, ds.to_dense(), ds.labels.clone(), beta_x, beta_y, delta)
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn dim(&self) -> usize {
        self.n_features() * (self.n_samples() + 1)
    }

    pub fn lipschitz_q(&self) -> f64 {
        self.beta_x.max(self.beta_y)
    }

    pub fn feasible_set(&self) -> ConstraintSet {
        let d = self.n_features();
        ConstraintSet::block_balls(d, self.n_samples(), d, self.delta)
    }

    fn p_field(&self) -> AdversarialField {
        AdversarialField {
            loss: self.loss,
            features: Arc::clone(&self.features),
            labels: Arc::clone(&self.labels),
        }
    }

    /// `(P(point), Q(point))` without counting.
    pub fn field_values(&self, point: &Vector) -> Result<(Vector, Vector)> {
        check_dim(self.dim(), point.len())?;
        Ok((self.p_field().apply(point), self.q_value(point)))
    }

    fn q_value(&self, point: &Vector) -> Vector {
        let d = self.n_features();
        let (bx, by) = (self.beta_x, self.beta_y);
        Vector::from_fn(point.len(), |i, _| if i < d { bx * point[i] } else { by * point[i] })
    }

    pub fn fields(&self, lp: f64) -> (OperatorHandle, OperatorHandle) {
        let p = OperatorHandle::new(Arc::new(self.p_field())).with_lipschitz(lp);
        let d = self.n_features();
        let (bx, by) = (self.beta_x, self.beta_y);
        let q = OperatorHandle::from_fn(self.dim(), move |v| {
            Vector::from_fn(v.len(), |i, _| if i < d { bx * v[i] } else { by * v[i] })
        })
        .with_lipschitz(self.lipschitz_q())
        .with_monotone(true);
        (p, q)
    }

    /// Sampled `L_p` estimate over `x in [-1, 1]^d` and feasible noise,
    /// multiplied by `safety`.
    pub fn estimate_lp(&self, trials: usize, safety: f64, seed: u64) -> Result<f64> {
        let op = OperatorHandle::new(Arc::new(self.p_field()));
        let mut sampler = SetPairSampler::new(self.feasible_set(), self.dim(), -1.0, 1.0, rng_for(seed, 0));
        Ok(safety * estimate_lipschitz(&op, &mut sampler, trials)?)
    }

    /// `(L_p, L_q)`: `L_p` is `lp_override` if given, else a 1000-pair
    /// estimate times 1.5.
    pub fn lipschitz_bounds(&self, lp_override: Option<f64>, seed: u64) -> Result<(f64, f64)> {
        let lp = match lp_override {
            Some(lp) => lp,
            None => self.estimate_lp(1000, 1.5, seed)?,
        };
        Ok((lp, self.lipschitz_q()))
    }

    /// The composite problem; `constrained` keeps each noise block in its ball.
    pub fn to_vi(&self, lp: f64, constrained: bool) -> Result<CompositeVI> {
        let (p, q) = self.fields(lp);
        let vi = CompositeVI::new(p, q)?;
        if constrained {
            vi.with_feasible(self.feasible_set())
        } else {
            Ok(vi)
        }
    }

    /// The scalar saddle objective.
    pub fn objective(&self, point: &Vector) -> f64 {
        let d = self.n_features();
        let n = self.n_samples();
        let x = point.rows(0, d);
        let mut loss = 0.0;
        for i in 0..n {
            let w = self.features.row(i).transpose() + point.rows(d * (i + 1), d);
            let t = x.dot(&w);
            let b = self.labels[i];
            loss += match self.loss {
                Loss::Logistic => softplus(-b * t),
                Loss::Nllsq => (b - sigmoid(t)).powi(2),
            };
        }
        let y_sq = point.rows(d, d * n).norm_squared();
        loss / n as f64 + 0.5 * self.beta_x * x.norm_squared() - 0.5 * self.beta_y * y_sq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{finite_difference_field, probe_monotonicity, FD_STEP};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn gen_spd_rejects_bad_spectrum() {
        assert!(gen_spd(3, 0.0, 1.0, 0).is_err());
        assert!(gen_spd(3, 2.0, 1.0, 0).is_err());
        assert!(gen_spd(0, 0.1, 1.0, 0).is_err());
    }

    #[test]
    fn gen_spd_one_dimensional() {
        let (a, lambda) = gen_spd_with_spectrum(1, 0.1, 100.0, 9).unwrap();
        assert!((a[(0, 0)] - lambda[0]).abs() < 1e-12);
        assert!((0.1..=100.0).contains(&lambda[0]));
    }

    #[test]
    fn bilinear_hand_example() {
        let prob = BilinearProblem::new(DMatrix::from_element(1, 1, 2.0), v(&[0.0]), v(&[0.0]), 1.0).unwrap();
        let (p, q) = prob.fields();
        let pt = v(&[3.0, 5.0]);
        assert_eq!(p.eval(&pt).unwrap(), v(&[10.0, -6.0]));
        assert_eq!(q.eval(&pt).unwrap(), v(&[3.0, 5.0]));
        let vi = prob.to_vi(None).unwrap();
        assert_eq!(vi.eval_r(&pt).unwrap(), v(&[13.0, -1.0]));
        assert_eq!(vi.counters().p_calls, 1);
    }

    #[test]
    fn eval_r_example() {
        let prob = BilinearProblem::new(DMatrix::from_element(1, 1, 1.0), v(&[0.0]), v(&[0.0]), 1.0).unwrap();
        let vi = prob.to_vi(None).unwrap();
        assert_eq!(vi.eval_r(&v(&[1.0, 2.0])).unwrap(), v(&[3.0, 1.0]));
        assert!(vi.eval_r(&v(&[1.0])).is_err());
    }

    #[test]
    fn bilinear_vanishes_at_solution() {
        let prob = BilinearProblem::generate(6, 0.1, 10.0, 3).unwrap();
        let vi = prob.to_vi(None).unwrap();
        let (p, q) = prob.fields();
        let s = prob.solution();
        assert_eq!(p.eval(&s).unwrap().norm(), 0.0);
        assert_eq!(q.eval(&s).unwrap().norm(), 0.0);
        assert!(vi.eval_r(&s).unwrap().norm() <= 1e-10 * (1.0 + s.norm()));
    }

    #[test]
    fn rotation_problem_constants() {
        let prob = BilinearProblem::rotation(3, 1.0, 100.0, 0).unwrap();
        assert_eq!(prob.lipschitz_bounds(), (1.0, 100.0));
        assert!((prob.a.singular_values().max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_at_origin() {
        let features = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 1.0]);
        let labels = vec![1.0, -1.0, 1.0];
        let prob = AdversarialProblem::new(Loss::Logistic, features.clone(), labels.clone(), 0.1, 0.1, 0.1).unwrap();
        let (p, q) = prob.field_values(&Vector::zeros(prob.dim())).unwrap();
        let mut expected = Vector::zeros(2);
        for i in 0..3 {
            expected -= features.row(i).transpose() * labels[i] / 6.0;
        }
        assert!((p.rows(0, 2) - expected).norm() < 1e-15);
        assert_eq!(p.rows(2, 6).norm(), 0.0);
        assert_eq!(q.norm(), 0.0);

        let half = vec![0.5; 3];
        let prob = AdversarialProblem::new(Loss::Nllsq, features, half, 0.1, 0.1, 0.1).unwrap();
        let (p, _) = prob.field_values(&Vector::zeros(prob.dim())).unwrap();
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn label_encodings_enforced() {
        let f = DMatrix::from_element(1, 1, 1.0);
        assert!(AdversarialProblem::new(Loss::Logistic, f.clone(), vec![0.0], 0.1, 0.1, 0.1).is_err());
        assert!(AdversarialProblem::new(Loss::Nllsq, f, vec![-1.0], 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn q_is_monotone_with_rate_beta() {
        let features = DMatrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64).sin());
        let prob = AdversarialProblem::new(Loss::Logistic, features, vec![1.0, -1.0, 1.0, 1.0, -1.0], 0.1, 0.1, 0.1).unwrap();
        let (_, q) = prob.fields(1.0);
        let mut sampler = SetPairSampler::cube(prob.dim(), -10.0, 10.0, rng_for(4, 0));
        let m = probe_monotonicity(&q, &mut sampler, 200).unwrap();
        assert!((m - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(-1000.0)).abs() < 1e-300);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn bilinear_objective_matches_field() {
        let prob = BilinearProblem::generate(3, 0.5, 2.0, 1).unwrap();
        let vi = prob.to_vi(None).unwrap();
        let x = v(&[0.3, -0.2, 0.9, 0.1, 0.4, -0.7]);
        let fd = finite_difference_field(|p| prob.objective(p), (3, 3), &x, FD_STEP).unwrap();
        let r = vi.eval_r(&x).unwrap();
        assert!((fd - &r).norm() <= 1e-6 * r.norm());
    }
}
