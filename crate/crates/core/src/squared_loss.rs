//! Squared-loss objectives `F(x) = E_ξ[(u(ξ) - E_{η|ξ}[g_η(x, ξ)])²]`.
//!
//! Besides the general MLMC machinery (through [`SquaredLoss`]), this
//! special case admits three direct unbiased gradient estimators:
//!
//! 1. `-2 (u - ḡ) ∇ḡ'` with two independent inner batches,
//! 2. the symmetrization of (1) over the two batches,
//! 3. the gradient of the bias-corrected objective estimator, using a
//!    single batch.
//!
//! At matched cost (batches of `M`, `M` and `2M`) their variances are
//! ordered `V₁ ≥ V₂ ≥ V₃`.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::estimators::GradientEstimate;
use crate::problem::{axpy, CsoProblem, DiscreteLaw, DiscreteOuter, FiniteSupport, NestedSampler};
use crate::rng::RngStream;

/// A scalar inner map `g` and an observable `u`.
pub trait SquaredLossModel: NestedSampler {
    fn param_dim(&self) -> usize;

    fn u_eval(&self, outer: &Self::Outer) -> f64;

    fn g_value(&self, x: &[f64], outer: &Self::Outer, inner: &Self::Inner) -> f64;

    /// Writes `∇g` into `grad` and returns `g`.
    fn g_value_and_grad(
        &self,
        x: &[f64],
        outer: &Self::Outer,
        inner: &Self::Inner,
        grad: &mut [f64],
    ) -> f64;
}

/// Exposes a [`SquaredLossModel`] as a [`CsoProblem`] with `k = 1` and
/// `f_ξ(v) = (u(ξ) - v)²`.
#[derive(Debug, Clone)]
pub struct SquaredLoss<M>(pub M);

impl<M: SquaredLossModel> NestedSampler for SquaredLoss<M> {
    type Outer = M::Outer;
    type Inner = M::Inner;

    fn sample_outer(&self, rng: &mut RngStream) -> M::Outer {
        self.0.sample_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &M::Outer) -> M::Inner {
        self.0.sample_inner_one(rng, outer)
    }
}

impl<M: SquaredLossModel> CsoProblem for SquaredLoss<M> {
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }

    fn value_dim(&self) -> usize {
        1
    }

    fn g_into(&self, x: &[f64], outer: &M::Outer, inner: &M::Inner, out: &mut [f64]) {
        out[0] = self.0.g_value(x, outer, inner);
    }

    fn g_jacobian_into(&self, x: &[f64], outer: &M::Outer, inner: &M::Inner, jac: &mut [f64]) {
        self.0.g_value_and_grad(x, outer, inner, jac);
    }

    fn g_with_jacobian(
        &self,
        x: &[f64],
        outer: &M::Outer,
        inner: &M::Inner,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        out[0] = self.0.g_value_and_grad(x, outer, inner, jac);
    }

    fn f_value(&self, outer: &M::Outer, v: &[f64]) -> f64 {
        let r = self.0.u_eval(outer) - v[0];
        r * r
    }

    fn f_grad_into(&self, outer: &M::Outer, v: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * (self.0.u_eval(outer) - v[0]);
    }
}

impl<M: SquaredLossModel + FiniteSupport> FiniteSupport for SquaredLoss<M> {
    fn outer_support(&self) -> Vec<(f64, M::Outer)> {
        FiniteSupport::outer_support(&self.0)
    }

    fn inner_support(&self, outer: &M::Outer) -> Vec<(f64, M::Inner)> {
        FiniteSupport::inner_support(&self.0, outer)
    }
}

pub fn u_eval<M: SquaredLossModel + ?Sized>(problem: &M, outer: &M::Outer) -> f64 {
    problem.u_eval(outer)
}

/// Per-sample `g` values and gradients of one inner batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerValues {
    pub g: Vec<f64>,
    /// Row-major `len × d`.
    pub grad: Vec<f64>,
    pub d: usize,
}

impl InnerValues {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    fn grad_row(&self, i: usize) -> &[f64] {
        &self.grad[i * self.d..(i + 1) * self.d]
    }

    /// Concatenation in order.
    pub fn concat(&self, other: &InnerValues) -> InnerValues {
        let mut g = self.g.clone();
        g.extend_from_slice(&other.g);
        let mut grad = self.grad.clone();
        grad.extend_from_slice(&other.grad);
        InnerValues { g, grad, d: self.d }
    }

    fn mean_g(&self) -> f64 {
        let sum = self.g[1..].iter().fold(self.g[0], |acc, g| acc + g);
        sum / self.len() as f64
    }

    fn mean_grad(&self) -> Vec<f64> {
        let mut acc = self.grad_row(0).to_vec();
        for i in 1..self.len() {
            axpy(1.0, self.grad_row(i), &mut acc);
        }
        let m = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

/// Evaluate `g` and `∇g` on `m` fresh inner draws.
fn draw_values<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    outer: &M::Outer,
    m: usize,
    rng: &mut RngStream,
) -> InnerValues {
    let d = problem.param_dim();
    let mut g = Vec::with_capacity(m);
    let mut grad = vec![0.0; m * d];
    for row in grad.chunks_exact_mut(d) {
        let inner = problem.sample_inner_one(rng, outer);
        g.push(problem.g_value_and_grad(x, outer, &inner, row));
    }
    InnerValues { g, grad, d }
}

fn draw_g<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    outer: &M::Outer,
    m: usize,
    rng: &mut RngStream,
) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let inner = problem.sample_inner_one(rng, outer);
            problem.g_value(x, outer, &inner)
        })
        .collect()
}

/// `-2 (u - ḡ_a) ∇ḡ_b` for one outer draw.
pub fn estimator_1_term(u: f64, a: &InnerValues, b: &InnerValues) -> Vec<f64> {
    let r = u - a.mean_g();
    b.mean_grad().into_iter().map(|g| -2.0 * r * g).collect()
}

/// `-[(u - ḡ_a) ∇ḡ_b + (u - ḡ_b) ∇ḡ_a]` for one outer draw.
pub fn estimator_2_term(u: f64, a: &InnerValues, b: &InnerValues) -> Vec<f64> {
    let ra = u - a.mean_g();
    let rb = u - b.mean_g();
    let ga = a.mean_grad();
    let gb = b.mean_grad();
    gb.iter()
        .zip(&ga)
        .map(|(gb, ga)| -(ra * gb + rb * ga))
        .collect()
}

/// Gradient of the bias-corrected objective for one outer draw.
///
/// Evaluated in the pairwise form
/// `-(2/(M(M-1))) Σ_j ∇g_j Σ_{i≠j} (u - g_i)`, which equals
/// `-2(u - ḡ)∇ḡ - (2/(M(M-1))) Σ_m (g_m - ḡ)(∇g_m - ∇ḡ)` identically and
/// avoids the cancellation of the centered form. At `M = 2` it evaluates
/// term by term to the same floating-point operations as
/// [`estimator_2_term`] with `M = 1`.
pub fn estimator_3_term(u: f64, batch: &InnerValues) -> Result<Vec<f64>> {
    let m = batch.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "estimator 3 needs M >= 2, got {m}"
        )));
    }
    let residuals: Vec<f64> = batch.g.iter().map(|g| u - g).collect();
    let others = |j: usize| {
        let mut iter = residuals
            .iter()
            .enumerate()
            .filter(move |&(i, _)| i != j)
            .map(|(_, r)| *r);
        let first = iter.next().expect("M >= 2");
        iter.fold(first, |acc, r| acc + r)
    };
    let c0 = others(0);
    let mut acc: Vec<f64> = batch.grad_row(0).iter().map(|g| c0 * g).collect();
    for j in 1..m {
        let cj = others(j);
        for (a, g) in acc.iter_mut().zip(batch.grad_row(j)) {
            *a += cj * g;
        }
    }
    let scale = -2.0 / (m as f64 * (m - 1) as f64);
    Ok(acc.into_iter().map(|a| a * scale).collect())
}

/// `(u - ḡ)²` for one outer draw.
pub fn objective_biased_term(u: f64, g: &[f64]) -> f64 {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    (u - mean).powi(2)
}

/// `(u - ḡ)² - (1/(M(M-1))) Σ_m (g_m - ḡ)²` for one outer draw.
pub fn objective_unbiased_term(u: f64, g: &[f64]) -> Result<f64> {
    let m = g.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "bias-corrected objective needs M >= 2, got {m}"
        )));
    }
    let mean = g.iter().sum::<f64>() / m as f64;
    let ss: f64 = g.iter().map(|gi| (gi - mean).powi(2)).sum();
    Ok((u - mean).powi(2) - ss / (m as f64 * (m - 1) as f64))
}

fn check_counts(m: u64, n: u64, min_m: u64) -> Result<()> {
    if m < min_m {
        return Err(Error::InvalidArgument(format!(
            "M must be at least {min_m}, got {m}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    Ok(())
}

fn average_terms(n: u64, mut term: impl FnMut() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut acc = term()?;
    for _ in 1..n {
        axpy(1.0, &term()?, &mut acc);
    }
    let nf = n as f64;
    acc.iter_mut().for_each(|a| *a /= nf);
    Ok(acc)
}

/// Estimator 1 with `N` outer draws and two inner batches of `M` each.
/// Cost `2MN`.
pub fn grad_estimator_1<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, n, 1)?;
    let value = average_terms(n, || {
        let outer = problem.sample_outer(rng);
        let a = draw_values(problem, x, &outer, m as usize, rng);
        let b = draw_values(problem, x, &outer, m as usize, rng);
        Ok(estimator_1_term(problem.u_eval(&outer), &a, &b))
    })?;
    Ok(GradientEstimate {
        value,
        cost: 2 * m * n,
    })
}

/// Estimator 2, the symmetrized form of estimator 1 on the same batches.
/// Cost `2MN`.
pub fn grad_estimator_2<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, n, 1)?;
    let value = average_terms(n, || {
        let outer = problem.sample_outer(rng);
        let a = draw_values(problem, x, &outer, m as usize, rng);
        let b = draw_values(problem, x, &outer, m as usize, rng);
        Ok(estimator_2_term(problem.u_eval(&outer), &a, &b))
    })?;
    Ok(GradientEstimate {
        value,
        cost: 2 * m * n,
    })
}

/// Estimator 3, a single batch of `M ≥ 2` per outer draw. Cost `MN`.
pub fn grad_estimator_3<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, n, 2)?;
    let value = average_terms(n, || {
        let outer = problem.sample_outer(rng);
        let batch = draw_values(problem, x, &outer, m as usize, rng);
        estimator_3_term(problem.u_eval(&outer), &batch)
    })?;
    Ok(GradientEstimate { value, cost: m * n })
}

/// Plug-in objective estimate; biased upward by `E_ξ[Var(g | ξ)] / M`.
pub fn objective_biased<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<f64> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, n, 1)?;
    let mut total = 0.0;
    for _ in 0..n {
        let outer = problem.sample_outer(rng);
        let g = draw_g(problem, x, &outer, m as usize, rng);
        total += objective_biased_term(problem.u_eval(&outer), &g);
    }
    Ok(total / n as f64)
}

/// Bias-corrected objective estimate, unbiased for `F(x)` when `M ≥ 2`.
pub fn objective_unbiased<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<f64> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, n, 2)?;
    let mut total = 0.0;
    for _ in 0..n {
        let outer = problem.sample_outer(rng);
        let g = draw_g(problem, x, &outer, m as usize, rng);
        total += objective_unbiased_term(problem.u_eval(&outer), &g)?;
    }
    Ok(total / n as f64)
}

/// Estimators 1 and 2 at batch size `M` and estimator 3 at `2M`, all on one
/// outer draw and the same `2M` inner draws (the first `M` are the unprimed
/// batch, the rest the primed one).
pub fn coupled_estimates<M: SquaredLossModel + ?Sized>(
    problem: &M,
    x: &[f64],
    m: u64,
    rng: &mut RngStream,
) -> Result<[Vec<f64>; 3]> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_counts(m, 1, 1)?;
    let outer = problem.sample_outer(rng);
    let u = problem.u_eval(&outer);
    let a = draw_values(problem, x, &outer, m as usize, rng);
    let b = draw_values(problem, x, &outer, m as usize, rng);
    Ok([
        estimator_1_term(u, &a, &b),
        estimator_2_term(u, &a, &b),
        estimator_3_term(u, &a.concat(&b))?,
    ])
}

pub type ObservableFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarMapFn = Arc<dyn Fn(&[f64], f64, f64, &mut [f64]) -> f64 + Send + Sync>;

/// Finite-support squared-loss model with closed-form `u` and `g`.
///
/// `g(x, ξ, η, grad)` writes `∇g` and returns `g`.
#[derive(Clone)]
pub struct DiscreteSquaredLoss {
    law: DiscreteLaw,
    d: usize,
    u: ObservableFn,
    g: ScalarMapFn,
}

impl fmt::Debug for DiscreteSquaredLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteSquaredLoss")
            .field("law", &self.law)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl DiscreteSquaredLoss {
    pub fn new(law: DiscreteLaw, d: usize, u: ObservableFn, g: ScalarMapFn) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("d must be positive".into()));
        }
        Ok(Self { law, d, u, g })
    }

    /// `u(ξ) = ξ` and `g = x·η` with `d = 1`.
    pub fn scalar_linear(law: DiscreteLaw) -> Self {
        Self {
            law,
            d: 1,
            u: Arc::new(|xi| xi),
            g: Arc::new(|x, _xi, eta, grad| {
                grad[0] = eta;
                x[0] * eta
            }),
        }
    }

    /// ξ uniform on {0, 1}, `u(ξ) = ξ`, η | ξ uniform on {ξ, ξ+1},
    /// `g = x·η`.
    pub fn oracle_b() -> Self {
        let law = DiscreteLaw::new(
            vec![(0.5, 0.0), (0.5, 1.0)],
            vec![vec![(0.5, 0.0), (0.5, 1.0)], vec![(0.5, 1.0), (0.5, 2.0)]],
        )
        .expect("oracle B law is valid");
        Self::scalar_linear(law)
    }

    /// Oracle B with the inner law collapsed onto `η = ξ + 1/2`.
    pub fn deterministic_inner() -> Self {
        let law = DiscreteLaw::new(
            vec![(0.5, 0.0), (0.5, 1.0)],
            vec![vec![(1.0, 0.5)], vec![(1.0, 1.5)]],
        )
        .expect("law is valid");
        Self::scalar_linear(law)
    }
}

impl NestedSampler for DiscreteSquaredLoss {
    type Outer = DiscreteOuter;
    type Inner = f64;

    fn sample_outer(&self, rng: &mut RngStream) -> DiscreteOuter {
        self.law.sample_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &DiscreteOuter) -> f64 {
        self.law.sample_inner(rng, outer)
    }
}

impl SquaredLossModel for DiscreteSquaredLoss {
    fn param_dim(&self) -> usize {
        self.d
    }

    fn u_eval(&self, outer: &DiscreteOuter) -> f64 {
        (self.u)(outer.value)
    }

    fn g_value(&self, x: &[f64], outer: &DiscreteOuter, inner: &f64) -> f64 {
        let mut scratch = vec![0.0; self.d];
        (self.g)(x, outer.value, *inner, &mut scratch)
    }

    fn g_value_and_grad(
        &self,
        x: &[f64],
        outer: &DiscreteOuter,
        inner: &f64,
        grad: &mut [f64],
    ) -> f64 {
        (self.g)(x, outer.value, *inner, grad)
    }
}

impl FiniteSupport for DiscreteSquaredLoss {
    fn outer_support(&self) -> Vec<(f64, DiscreteOuter)> {
        self.law.outer_support()
    }

    fn inner_support(&self, outer: &DiscreteOuter) -> Vec<(f64, f64)> {
        self.law.inner_support(outer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{exact_gradient, exact_objective, f_eval};
    use crate::rng::StreamKey;

    fn values(g: &[f64], grad: &[f64]) -> InnerValues {
        InnerValues {
            g: g.to_vec(),
            grad: grad.to_vec(),
            d: grad.len() / g.len(),
        }
    }

    #[test]
    fn u_eval_and_wrapper_loss() {
        let p = DiscreteSquaredLoss::oracle_b();
        let one = DiscreteOuter {
            index: 1,
            value: 1.0,
        };
        assert_eq!(u_eval(&p, &one), 1.0);
        let w = SquaredLoss(p);
        for v in [-2.0, 0.0, 0.3, 5.0] {
            assert_eq!(f_eval(&w, &one, &[v]).unwrap(), (1.0 - v) * (1.0 - v));
        }
    }

    #[test]
    fn estimator_3_matches_centered_formula() {
        let d = 2;
        let g = [0.3, -1.2, 2.5, 0.7];
        let grad = [1.0, 0.5, -0.3, 2.0, 0.9, -1.1, 0.2, 0.4];
        let batch = values(&g, &grad);
        let u = 0.8;
        let m = g.len() as f64;
        let gbar = g.iter().sum::<f64>() / m;
        let mut gradbar = vec![0.0; d];
        for row in grad.chunks(d) {
            for (a, r) in gradbar.iter_mut().zip(row) {
                *a += r / m;
            }
        }
        let mut expected: Vec<f64> = gradbar.iter().map(|gb| -2.0 * (u - gbar) * gb).collect();
        for (i, row) in grad.chunks(d).enumerate() {
            for j in 0..d {
                expected[j] -= 2.0 / (m * (m - 1.0)) * (g[i] - gbar) * (row[j] - gradbar[j]);
            }
        }
        let got = estimator_3_term(u, &batch).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn estimator_3_two_samples_equals_estimator_2_single() {
        let a = values(&[1.7], &[0.3, -2.0]);
        let b = values(&[-0.4], &[1.1, 0.25]);
        let e2 = estimator_2_term(0.9, &a, &b);
        let e3 = estimator_3_term(0.9, &a.concat(&b)).unwrap();
        for (x, y) in e2.iter().zip(&e3) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn objective_correction_at_two_samples() {
        let (g1, g2, u) = (1.25, -0.5, 0.3);
        let corrected = objective_unbiased_term(u, &[g1, g2]).unwrap();
        let biased = objective_biased_term(u, &[g1, g2]);
        assert!((biased - corrected - (g1 - g2) * (g1 - g2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_inner_estimators_equal_exact_gradient() {
        let p = DiscreteSquaredLoss::deterministic_inner();
        let x = [0.6];
        let mut rng = StreamKey::new(40).derive();
        for _ in 0..100 {
            let mut r1 = rng.clone();
            let e1 = grad_estimator_1(&p, &x, 2, 1, &mut r1).unwrap();
            let mut r2 = rng.clone();
            let e2 = grad_estimator_2(&p, &x, 2, 1, &mut r2).unwrap();
            let mut r3 = rng.clone();
            let e3 = grad_estimator_3(&p, &x, 3, 1, &mut r3).unwrap();
            let outer = p.sample_outer(&mut rng);
            let eta = outer.value + 0.5;
            let exact = -2.0 * (outer.value - x[0] * eta) * eta;
            assert!((e1.value[0] - exact).abs() < 1e-15);
            assert!((e2.value[0] - exact).abs() < 1e-15);
            assert!((e3.value[0] - exact).abs() < 1e-15);
            let corr = objective_unbiased_term(1.0, &[2.0, 2.0]).unwrap();
            assert_eq!(corr, 1.0);
        }
    }

    #[test]
    fn costs_and_preconditions() {
        let p = DiscreteSquaredLoss::oracle_b();
        let mut rng = StreamKey::new(41).derive();
        assert_eq!(
            grad_estimator_1(&p, &[1.0], 3, 2, &mut rng).unwrap().cost,
            12
        );
        assert_eq!(
            grad_estimator_2(&p, &[1.0], 3, 2, &mut rng).unwrap().cost,
            12
        );
        assert_eq!(
            grad_estimator_3(&p, &[1.0], 3, 2, &mut rng).unwrap().cost,
            6
        );
        assert!(grad_estimator_3(&p, &[1.0], 1, 1, &mut rng).is_err());
        assert!(grad_estimator_1(&p, &[1.0], 0, 1, &mut rng).is_err());
        assert!(grad_estimator_2(&p, &[1.0], 1, 0, &mut rng).is_err());
        assert!(objective_unbiased(&p, &[1.0], 1, 10, &mut rng).is_err());
        assert!(objective_biased(&p, &[1.0], 0, 10, &mut rng).is_err());
        assert!(grad_estimator_1(&p, &[1.0, 0.0], 1, 1, &mut rng).is_err());
    }

    #[test]
    fn estimator_1_statistically_unbiased_on_oracle_b() {
        let p = DiscreteSquaredLoss::oracle_b();
        let x = [1.0];
        let truth = exact_gradient(&SquaredLoss(p.clone()), &x).unwrap()[0];
        let mut rng = StreamKey::new(42).derive();
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| grad_estimator_1(&p, &x, 1, 1, &mut rng).unwrap().value[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - truth).abs() < 4.0 * se,
            "{mean} vs {truth} (se {se})"
        );
    }

    #[test]
    fn biased_objective_bias_halves_with_m() {
        // exact expectation by enumeration over ordered inner tuples
        let p = DiscreteSquaredLoss::oracle_b();
        let x = [1.0];
        let expect = |m: u32| -> f64 {
            let mut total = 0.0;
            for (po, outer) in FiniteSupport::outer_support(&p) {
                let support = FiniteSupport::inner_support(&p, &outer);
                let s = support.len();
                for code in 0..s.pow(m) {
                    let mut c = code;
                    let mut prob = po;
                    let mut g = Vec::new();
                    for _ in 0..m {
                        let (q, eta) = support[c % s];
                        c /= s;
                        prob *= q;
                        g.push(p.g_value(&x, &outer, &eta));
                    }
                    total += prob * objective_biased_term(p.u_eval(&outer), &g);
                }
            }
            total
        };
        let f = exact_objective(&SquaredLoss(p.clone()), &x).unwrap();
        // Var(g | ξ) = x² · 1/4 for both outer points
        let bias1 = expect(1) - f;
        let bias2 = expect(2) - f;
        assert!((bias1 - 0.25).abs() < 1e-14);
        assert!((bias2 - bias1 / 2.0).abs() < 1e-14);
    }
}
