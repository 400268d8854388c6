//! Checks of the analytic fields and solver internals against independent
//! oracles: central finite differences, dense linear solves and power
//! iteration.

use nalgebra::{DMatrix, LU};
use rand::Rng;

use vi_sliding::operators::{
    estimate_lipschitz, finite_difference_field, probe_minty, probe_monotonicity, SetPairSampler, FD_STEP,
};
use vi_sliding::problems::{gen_spd_with_spectrum, AdversarialProblem, BilinearProblem, Loss};
use vi_sliding::seeding::rng_for;
use vi_sliding::solvers::{b_operator, check_inexact, inner_solve};
use vi_sliding::{SlidingParams, Vector};

fn small_adversarial(loss: Loss, n: usize, d: usize, seed: u64) -> AdversarialProblem {
    let mut rng = rng_for(seed, 9);
    let features = DMatrix::from_fn(n, d, |_, _| if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random_range(-1.0..1.0) });
    let labels = (0..n)
        .map(|_| match loss {
            Loss::Logistic => if rng.random::<bool>() { 1.0 } else { -1.0 },
            Loss::Nllsq => if rng.random::<bool>() { 1.0 } else { 0.0 },
        })
        .collect();
    AdversarialProblem::new(loss, features, labels, 0.1, 0.1, 0.1).unwrap()
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn bilinear_field_matches_finite_differences() {
    let prob = BilinearProblem::generate(5, 0.1, 100.0, 17).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let mut rng = rng_for(1, 0);
    for _ in 0..20 {
        let x = Vector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let fd = finite_difference_field(|v| prob.objective(v), (5, 5), &x, FD_STEP).unwrap();
        assert!(rel_err(&vi.eval_r(&x).unwrap(), &fd) <= 1e-6);
    }
}

#[test]
fn adversarial_fields_match_finite_differences() {
    for loss in [Loss::Logistic, Loss::Nllsq] {
        let prob = small_adversarial(loss, 5, 4, 3);
        let set = prob.feasible_set();
        let mut rng = rng_for(5, 0);
        for _ in 0..20 {
            let x = set.sample_point(prob.dim(), -1.0, 1.0, &mut rng);
            let (p, q) = prob.field_values(&x).unwrap();
            let fd = finite_difference_field(|v| prob.objective(v), (4, 20), &x, FD_STEP).unwrap();
            let err = rel_err(&(p + q), &fd);
            assert!(err <= 1e-5, "{loss:?}: relative error {err}");
        }
    }
}

#[test]
fn nllsq_coupling_is_not_monotone() {
    let prob = small_adversarial(Loss::Nllsq, 10, 5, 21);
    let (p, _) = prob.fields(1.0);
    let mut sampler = SetPairSampler::new(prob.feasible_set(), prob.dim(), -3.0, 3.0, rng_for(2, 0));
    let m = probe_monotonicity(&p, &mut sampler, 10_000).unwrap();
    assert!(m < 0.0, "no monotonicity violation found (min ratio {m})");
}

#[test]
fn q_fields_are_monotone_on_shipped_problems() {
    let bilinear = BilinearProblem::generate(10, 0.1, 100.0, 0).unwrap();
    let logistic = small_adversarial(Loss::Logistic, 6, 3, 1);
    let nllsq = small_adversarial(Loss::Nllsq, 6, 3, 2);
    let qs = [
        bilinear.fields().1,
        logistic.fields(1.0).1,
        nllsq.fields(1.0).1,
    ];
    for q in &qs {
        let mut sampler = SetPairSampler::cube(q.dim(), -10.0, 10.0, rng_for(8, 0));
        assert!(probe_monotonicity(q, &mut sampler, 1000).unwrap() >= -1e-12);
        let lq = q.lipschitz_hint().unwrap();
        assert!(estimate_lipschitz(q, &mut sampler, 1000).unwrap() <= lq * (1.0 + 1e-9));
    }
}

#[test]
fn declared_lp_bounds_sampled_estimates() {
    let bilinear = BilinearProblem::generate(20, 0.1, 100.0, 4).unwrap();
    let (p, _) = bilinear.fields();
    let mut sampler = SetPairSampler::cube(40, -10.0, 10.0, rng_for(3, 0));
    assert!(estimate_lipschitz(&p, &mut sampler, 1000).unwrap() <= bilinear.sigma_max * (1.0 + 1e-9));

    for loss in [Loss::Logistic, Loss::Nllsq] {
        let prob = small_adversarial(loss, 8, 4, 6);
        let (lp, lq) = prob.lipschitz_bounds(None, 11).unwrap();
        assert_eq!(lq, 0.1);
        let (p, _) = prob.fields(lp);
        let mut sampler = SetPairSampler::new(prob.feasible_set(), prob.dim(), -1.0, 1.0, rng_for(12, 0));
        assert!(estimate_lipschitz(&p, &mut sampler, 1000).unwrap() <= lp * (1.0 + 1e-9));
    }
}

#[test]
fn constant_field_has_zero_lipschitz_estimate() {
    // With zero features, zero noise radius and labels 1/2, every residual
    // b_i - sigmoid(0) vanishes and P is identically zero.
    let constant = AdversarialProblem::new(Loss::Nllsq, DMatrix::zeros(3, 2), vec![0.5; 3], 0.1, 0.1, 0.0).unwrap();
    assert_eq!(constant.lipschitz_bounds(None, 0).unwrap(), (0.0, 0.1));
}

#[test]
fn bilinear_lipschitz_estimate_approaches_sigma_max() {
    let prob = BilinearProblem::generate(50, 0.1, 100.0, 5).unwrap();
    let (p, _) = prob.fields();
    let mut sampler = SetPairSampler::cube(100, -1.0, 1.0, rng_for(6, 0));
    let est = estimate_lipschitz(&p, &mut sampler, 10_000).unwrap();
    assert!(est <= 100.0 * (1.0 + 1e-9));
    assert!(est >= 50.0, "estimate {est}");
}

#[test]
fn bilinear_coupling_is_skew() {
    let prob = BilinearProblem::generate(8, 0.1, 100.0, 7).unwrap();
    let (p, _) = prob.fields();
    let mut sampler = SetPairSampler::cube(16, -10.0, 10.0, rng_for(7, 0));
    for _ in 0..200 {
        let (a, b) = vi_sliding::operators::PairSampler::sample_pair(&mut sampler);
        let inner = (p.eval(&a).unwrap() - p.eval(&b).unwrap()).dot(&(&a - &b));
        assert!(inner.abs() <= 1e-10 * (&a - &b).norm_squared().max(1.0) * 100.0);
    }
}

#[test]
fn bilinear_minty_probe_on_known_solution() {
    let prob = BilinearProblem::generate(6, 0.1, 10.0, 8).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let mut sampler = SetPairSampler::cube(12, -5.0, 5.0, rng_for(9, 0));
    assert!(probe_minty(&vi, &mut sampler, 500).unwrap() >= -1e-10);
}

fn power_iteration(a: &DMatrix<f64>, iters: usize) -> f64 {
    let mut v = Vector::from_element(a.nrows(), 1.0).normalize();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        lambda = v.dot(&w);
        v = w.normalize();
    }
    lambda
}

#[test]
fn gen_spd_spectrum_and_symmetry() {
    for (d, seed) in [(1, 0), (50, 1), (200, 2)] {
        let (a, lambda) = gen_spd_with_spectrum(d, 0.1, 100.0, seed).unwrap();
        assert!((&a - a.transpose()).amax() <= 1e-12);
        let eig = a.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() >= 0.1 * (1.0 - 1e-9) && eig.max() <= 100.0 * (1.0 + 1e-9));
        let lmax = lambda.iter().cloned().fold(0.0, f64::max);
        if d == 50 {
            let est = power_iteration(&a, 20_000);
            assert!((est - lmax).abs() <= 1e-6 * lmax, "power iteration {est} vs {lmax}");
        }
        assert_eq!(gen_spd_with_spectrum(d, 0.1, 100.0, seed).unwrap().0, a);
    }
}

/// Root of an affine map by a dense LU solve.
fn affine_root(f: impl Fn(&Vector) -> Vector, dim: usize) -> Vector {
    let c = f(&Vector::zeros(dim));
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let mut e = Vector::zeros(dim);
        e[j] = 1.0;
        f(&e)[i] - c[i]
    });
    LU::new(m).solve(&-c).expect("non-singular subproblem")
}

/// `B(u)` for the bilinear problem written out from `A` and `b` directly.
fn bilinear_b(prob: &BilinearProblem, xk: &Vector, theta: f64) -> impl Fn(&Vector) -> Vector {
    let reg = prob.reg;
    let d = prob.b_x.len();
    let s = prob.solution();
    let e = xk - &s;
    let mut pxk = Vector::zeros(2 * d);
    pxk.rows_mut(0, d).copy_from(&(&prob.a * e.rows(d, d)));
    pxk.rows_mut(d, d).copy_from(&-(prob.a.transpose() * e.rows(0, d)));
    let xk = xk.clone();
    move |u: &Vector| &pxk + (u - &s) * reg + (u - &xk) / theta
}

#[test]
fn b_operator_vanishes_at_exact_subproblem_solution() {
    let prob = BilinearProblem::new(DMatrix::identity(2, 2), Vector::zeros(2), Vector::zeros(2), 1.0).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let xk = Vector::from_column_slice(&[1.0, 0.0, 0.0, 1.0]);
    let theta = 0.5;
    let exact = affine_root(bilinear_b(&prob, &xk, theta), 4);
    let pxk = vi.p.eval(&xk).unwrap();
    assert!(b_operator(&vi, &xk, &pxk, theta, &exact).unwrap().norm() <= 1e-10);
}

#[test]
fn inner_eg_certificate_holds_against_exact_solution() {
    let prob = BilinearProblem::new(DMatrix::identity(2, 2), Vector::zeros(2), Vector::zeros(2), 1.0).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let params = SlidingParams::new(1.0, 1, Vector::zeros(4));
    let mut rng = rng_for(10, 0);
    for _ in 0..50 {
        let xk = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let pxk = vi.p.eval(&xk).unwrap();
        let out = inner_solve(&vi, &xk, &pxk, &params).unwrap();
        assert!(out.certified);
        let exact = affine_root(bilinear_b(&prob, &xk, params.theta), 4);
        let b = b_operator(&vi, &xk, &pxk, params.theta, &out.u).unwrap();
        assert!((&out.u - &exact).norm() <= params.theta * b.norm() * (1.0 + 1e-9) + 1e-15);
        assert!(out.iters <= 20);
    }
}

#[test]
fn eag_inner_solver_certifies() {
    let prob = BilinearProblem::generate(5, 0.1, 10.0, 12).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let mut params = SlidingParams::new(prob.sigma_max, 1, Vector::zeros(10));
    params.inner.method = vi_sliding::InnerMethod::Eag;
    let xk = Vector::from_element(10, 0.5);
    let pxk = vi.p.eval(&xk).unwrap();
    let out = inner_solve(&vi, &xk, &pxk, &params).unwrap();
    assert!(out.certified);
    let exact = affine_root(bilinear_b(&prob, &xk, params.theta), 10);
    let b = b_operator(&vi, &xk, &pxk, params.theta, &out.u).unwrap();
    assert!(b.norm_squared() <= prob.sigma_max.powi(2) / 3.0 * (&xk - exact).norm_squared());
}

#[test]
fn relative_branch_never_accepts_a_violation() {
    let prob = BilinearProblem::generate(10, 0.1, 10.0, 13).unwrap();
    let vi = prob.to_vi(None).unwrap();
    let lp = prob.sigma_max;
    let theta = 1.0 / (2.0 * lp);
    let mut rng = rng_for(14, 0);
    let (mut accepted, mut checked) = (0, 0);
    for _ in 0..400 {
        let xk = Vector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let pxk = vi.p.eval(&xk).unwrap();
        let exact = affine_root(bilinear_b(&prob, &xk, theta), 20);
        let scale = 10f64.powf(rng.random_range(-4.0..0.0)) * (&xk - &exact).norm();
        let noise = Vector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let u = &exact + noise.normalize() * scale;
        let b = b_operator(&vi, &xk, &pxk, theta, &u).unwrap().norm();
        let dist = (&xk - &u).norm();
        checked += 1;
        if check_inexact(b, dist, lp, theta, 0.0) {
            accepted += 1;
            assert!(b * b <= lp * lp / 3.0 * (&xk - &exact).norm_squared());
        }
    }
    assert!(checked >= 200);
    assert!(accepted > 0);
}
