//! Problem interface for `F(x) = E_ξ[f_ξ(E_{η|ξ}[g_η(x, ξ)])]`.
//!
//! A problem supplies the outer law of `ξ`, the conditional inner law of
//! `η | ξ`, the inner map `g_η(·, ξ): R^d → R^k` with its Jacobian, and the
//! outer loss `f_ξ: R^k → R` with its gradient. Trait methods write into
//! caller-provided buffers and assume correct sizes; the free functions in
//! this module are the checked, allocating entry points.

use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Decision variable `x ∈ R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter coordinate {i} is not finite"
            )));
        }
        Ok(Self(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Outer and conditional inner sampling.
pub trait NestedSampler: Sync {
    type Outer: Clone + Send + Sync + fmt::Debug;
    type Inner: Clone + Send + Sync + fmt::Debug;

    fn sample_outer(&self, rng: &mut RngStream) -> Self::Outer;

    /// One draw of `η` conditional on `outer`.
    fn sample_inner_one(&self, rng: &mut RngStream, outer: &Self::Outer) -> Self::Inner;
}

/// A conditional stochastic optimization problem.
pub trait CsoProblem: NestedSampler {
    /// `d`, the dimension of the decision variable.
    fn param_dim(&self) -> usize;

    /// `k`, the output dimension of `g`.
    fn value_dim(&self) -> usize;

    fn g_into(&self, x: &[f64], outer: &Self::Outer, inner: &Self::Inner, out: &mut [f64]);

    /// Row-major `k × d` Jacobian of `g` in `x`.
    fn g_jacobian_into(&self, x: &[f64], outer: &Self::Outer, inner: &Self::Inner, jac: &mut [f64]);

    /// `g` and its Jacobian in one evaluation. Estimators only call this,
    /// and each call is one unit of cost.
    fn g_with_jacobian(
        &self,
        x: &[f64],
        outer: &Self::Outer,
        inner: &Self::Inner,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        self.g_into(x, outer, inner, out);
        self.g_jacobian_into(x, outer, inner, jac);
    }

    fn f_value(&self, outer: &Self::Outer, v: &[f64]) -> f64;

    fn f_grad_into(&self, outer: &Self::Outer, v: &[f64], out: &mut [f64]);
}

/// Problems whose outer and inner laws have finite support, so
/// expectations can be computed exactly by enumeration.
pub trait FiniteSupport: NestedSampler {
    fn outer_support(&self) -> Vec<(f64, Self::Outer)>;
    fn inner_support(&self, outer: &Self::Outer) -> Vec<(f64, Self::Inner)>;
}

/// Inner draws for one outer sample, in draw order.
#[derive(Debug, Clone)]
pub struct InnerBatch<O, I> {
    pub outer: O,
    pub samples: Vec<I>,
}

impl<O, I> InnerBatch<O, I> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Dense row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn sample_outer<S: NestedSampler + ?Sized>(problem: &S, rng: &mut RngStream) -> S::Outer {
    problem.sample_outer(rng)
}

pub fn sample_inner<S: NestedSampler + ?Sized>(
    problem: &S,
    rng: &mut RngStream,
    outer: &S::Outer,
    m: usize,
) -> Result<InnerBatch<S::Outer, S::Inner>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "inner batch size must be at least 1".into(),
        ));
    }
    let samples = (0..m)
        .map(|_| problem.sample_inner_one(rng, outer))
        .collect();
    Ok(InnerBatch {
        outer: outer.clone(),
        samples,
    })
}

pub fn g_eval<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    outer: &P::Outer,
    inner: &P::Inner,
) -> Result<Vec<f64>> {
    check_dim("x", problem.param_dim(), x.len())?;
    let mut out = vec![0.0; problem.value_dim()];
    problem.g_into(x, outer, inner, &mut out);
    Ok(out)
}

pub fn g_grad<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    outer: &P::Outer,
    inner: &P::Inner,
) -> Result<Jacobian> {
    check_dim("x", problem.param_dim(), x.len())?;
    let (rows, cols) = (problem.value_dim(), problem.param_dim());
    let mut data = vec![0.0; rows * cols];
    problem.g_jacobian_into(x, outer, inner, &mut data);
    Ok(Jacobian { rows, cols, data })
}

pub fn f_eval<P: CsoProblem + ?Sized>(problem: &P, outer: &P::Outer, v: &[f64]) -> Result<f64> {
    check_dim("v", problem.value_dim(), v.len())?;
    Ok(problem.f_value(outer, v))
}

pub fn f_grad<P: CsoProblem + ?Sized>(
    problem: &P,
    outer: &P::Outer,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_dim("v", problem.value_dim(), v.len())?;
    let mut out = vec![0.0; v.len()];
    problem.f_grad_into(outer, v, &mut out);
    Ok(out)
}

/// Exact conditional means `E[g | ξ]` and `E[∇g | ξ]` by enumeration.
fn conditional_means<P: CsoProblem + FiniteSupport + ?Sized>(
    problem: &P,
    x: &[f64],
    outer: &P::Outer,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let support = problem.inner_support(outer);
    if support.is_empty() {
        return Err(Error::EmptySupport("inner"));
    }
    let mut g_mean = vec![0.0; k];
    let mut jac_mean = vec![0.0; k * d];
    let mut g = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    for (p, inner) in &support {
        problem.g_with_jacobian(x, outer, inner, &mut g, &mut jac);
        axpy(*p, &g, &mut g_mean);
        axpy(*p, &jac, &mut jac_mean);
    }
    Ok((g_mean, jac_mean))
}

/// Exact `∇F(x)` on a finite-support problem.
pub fn exact_gradient<P: CsoProblem + FiniteSupport + ?Sized>(
    problem: &P,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_dim("x", problem.param_dim(), x.len())?;
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let outers = problem.outer_support();
    if outers.is_empty() {
        return Err(Error::EmptySupport("outer"));
    }
    let mut grad = vec![0.0; d];
    let mut fg = vec![0.0; k];
    let mut term = vec![0.0; d];
    for (p, outer) in &outers {
        let (g_mean, jac_mean) = conditional_means(problem, x, outer)?;
        problem.f_grad_into(outer, &g_mean, &mut fg);
        jacobian_t_vec(&jac_mean, &fg, d, &mut term);
        axpy(*p, &term, &mut grad);
    }
    Ok(grad)
}

/// Exact `F(x)` on a finite-support problem.
pub fn exact_objective<P: CsoProblem + FiniteSupport + ?Sized>(
    problem: &P,
    x: &[f64],
) -> Result<f64> {
    check_dim("x", problem.param_dim(), x.len())?;
    let outers = problem.outer_support();
    if outers.is_empty() {
        return Err(Error::EmptySupport("outer"));
    }
    let mut total = 0.0;
    for (p, outer) in &outers {
        let (g_mean, _) = conditional_means(problem, x, outer)?;
        total += p * problem.f_value(outer, &g_mean);
    }
    Ok(total)
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out = Jᵀ v` for a row-major `k × d` matrix `J`.
#[inline]
pub(crate) fn jacobian_t_vec(jac: &[f64], v: &[f64], d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (row, vi) in jac.chunks_exact(d).zip(v) {
        axpy(*vi, row, out);
    }
}

/// Finite-support law: outer points with probabilities and, per outer
/// point, a conditional inner law. Points are scalars.
#[derive(Debug, Clone)]
pub struct DiscreteLaw {
    outer: Vec<(f64, f64)>,
    inner: Vec<Vec<(f64, f64)>>,
}

fn check_probabilities(what: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    let mut any = false;
    for p in probs {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "{what}: probability {p} is negative or not finite"
            )));
        }
        total += p;
        any = true;
    }
    if !any {
        return Err(Error::InvalidDistribution(format!("{what}: empty support")));
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!(
            "{what}: probabilities sum to {total}"
        )));
    }
    Ok(())
}

impl DiscreteLaw {
    /// `outer` is `(probability, ξ)`; `inner[i]` is `(probability, η)` given
    /// the `i`-th outer point.
    pub fn new(outer: Vec<(f64, f64)>, inner: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        check_probabilities("outer law", outer.iter().map(|o| o.0))?;
        check_dim("inner laws", outer.len(), inner.len())?;
        for (i, law) in inner.iter().enumerate() {
            check_probabilities(&format!("inner law {i}"), law.iter().map(|o| o.0))?;
        }
        Ok(Self { outer, inner })
    }

    fn pick(rng: &mut RngStream, law: &[(f64, f64)]) -> usize {
        let u = rng.uniform01();
        let mut acc = 0.0;
        for (i, (p, _)) in law.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver above the cumulative total
        law.iter().rposition(|(p, _)| *p > 0.0).unwrap_or(0)
    }

    pub fn sample_outer(&self, rng: &mut RngStream) -> DiscreteOuter {
        let index = Self::pick(rng, &self.outer);
        DiscreteOuter {
            index,
            value: self.outer[index].1,
        }
    }

    pub fn sample_inner(&self, rng: &mut RngStream, outer: &DiscreteOuter) -> f64 {
        let law = &self.inner[outer.index];
        law[Self::pick(rng, law)].1
    }

    pub fn outer_support(&self) -> Vec<(f64, DiscreteOuter)> {
        self.outer
            .iter()
            .enumerate()
            .map(|(index, &(p, value))| (p, DiscreteOuter { index, value }))
            .collect()
    }

    pub fn inner_support(&self, outer: &DiscreteOuter) -> Vec<(f64, f64)> {
        self.inner[outer.index].clone()
    }
}

/// An outer point of a [`DiscreteLaw`]: its index and value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteOuter {
    pub index: usize,
    pub value: f64,
}

pub type InnerMapFn = Arc<dyn Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync>;
pub type OuterLossFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type OuterLossGradFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Finite-support CSO problem with closed-form maps.
///
/// `g(x, ξ, η, out)` writes `k` values, `g_jac(x, ξ, η, jac)` writes the
/// row-major `k × d` Jacobian, `f(ξ, v)` and `f_grad(ξ, v, out)` evaluate
/// the outer loss.
#[derive(Clone)]
pub struct DiscreteCsoProblem {
    law: DiscreteLaw,
    d: usize,
    k: usize,
    g: InnerMapFn,
    g_jac: InnerMapFn,
    f: OuterLossFn,
    f_grad: OuterLossGradFn,
}

impl fmt::Debug for DiscreteCsoProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteCsoProblem")
            .field("law", &self.law)
            .field("d", &self.d)
            .field("k", &self.k)
            .finish_non_exhaustive()
    }
}

impl DiscreteCsoProblem {
    pub fn new(
        law: DiscreteLaw,
        d: usize,
        k: usize,
        g: InnerMapFn,
        g_jac: InnerMapFn,
        f: OuterLossFn,
        f_grad: OuterLossGradFn,
    ) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "problem dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            law,
            d,
            k,
            g,
            g_jac,
            f,
            f_grad,
        })
    }

    /// `g = x·η` with `d = k = 1` and the given outer loss.
    pub fn scalar_linear(law: DiscreteLaw, f: OuterLossFn, f_grad: OuterLossGradFn) -> Self {
        Self {
            law,
            d: 1,
            k: 1,
            g: Arc::new(|x, _xi, eta, out| out[0] = x[0] * eta),
            g_jac: Arc::new(|_x, _xi, eta, jac| jac[0] = eta),
            f,
            f_grad,
        }
    }

    /// Canonical enumeration target: ξ ∈ {0, 1} equiprobable,
    /// η | ξ=0 uniform on {1, 3}, η | ξ=1 uniform on {0, 2}, `g = xη`,
    /// `f(v) = v²`. Then `F(x) = 5x²/2` and `∇F(x) = 5x`.
    pub fn oracle_a() -> Self {
        let law = DiscreteLaw::new(
            vec![(0.5, 0.0), (0.5, 1.0)],
            vec![vec![(0.5, 1.0), (0.5, 3.0)], vec![(0.5, 0.0), (0.5, 2.0)]],
        )
        .expect("oracle A law is valid");
        Self::scalar_linear(
            law,
            Arc::new(|_xi, v| v[0] * v[0]),
            Arc::new(|_xi, v, out| out[0] = 2.0 * v[0]),
        )
    }

    pub fn law(&self) -> &DiscreteLaw {
        &self.law
    }
}

impl NestedSampler for DiscreteCsoProblem {
    type Outer = DiscreteOuter;
    type Inner = f64;

    fn sample_outer(&self, rng: &mut RngStream) -> DiscreteOuter {
        self.law.sample_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &DiscreteOuter) -> f64 {
        self.law.sample_inner(rng, outer)
    }
}

impl CsoProblem for DiscreteCsoProblem {
    fn param_dim(&self) -> usize {
        self.d
    }

    fn value_dim(&self) -> usize {
        self.k
    }

    fn g_into(&self, x: &[f64], outer: &DiscreteOuter, inner: &f64, out: &mut [f64]) {
        (self.g)(x, outer.value, *inner, out)
    }

    fn g_jacobian_into(&self, x: &[f64], outer: &DiscreteOuter, inner: &f64, jac: &mut [f64]) {
        (self.g_jac)(x, outer.value, *inner, jac)
    }

    fn f_value(&self, outer: &DiscreteOuter, v: &[f64]) -> f64 {
        (self.f)(outer.value, v)
    }

    fn f_grad_into(&self, outer: &DiscreteOuter, v: &[f64], out: &mut [f64]) {
        (self.f_grad)(outer.value, v, out)
    }
}

impl FiniteSupport for DiscreteCsoProblem {
    fn outer_support(&self) -> Vec<(f64, DiscreteOuter)> {
        self.law.outer_support()
    }

    fn inner_support(&self, outer: &DiscreteOuter) -> Vec<(f64, f64)> {
        self.law.inner_support(outer)
    }
}

/// Replaces the outer loss of `P` with the affine map `f(v) = c·v + b`.
///
/// With an affine loss every antithetic difference `Δψ_ℓ`, `ℓ ≥ 1`,
/// vanishes identically.
#[derive(Debug, Clone)]
pub struct AffineLoss<P> {
    pub inner: P,
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl<P: CsoProblem> AffineLoss<P> {
    pub fn new(inner: P, coef: Vec<f64>, offset: f64) -> Result<Self> {
        check_dim("affine coefficients", inner.value_dim(), coef.len())?;
        Ok(Self {
            inner,
            coef,
            offset,
        })
    }
}

impl<P: CsoProblem> NestedSampler for AffineLoss<P> {
    type Outer = P::Outer;
    type Inner = P::Inner;

    fn sample_outer(&self, rng: &mut RngStream) -> P::Outer {
        self.inner.sample_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &P::Outer) -> P::Inner {
        self.inner.sample_inner_one(rng, outer)
    }
}

impl<P: CsoProblem> CsoProblem for AffineLoss<P> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn value_dim(&self) -> usize {
        self.inner.value_dim()
    }

    fn g_into(&self, x: &[f64], outer: &P::Outer, inner: &P::Inner, out: &mut [f64]) {
        self.inner.g_into(x, outer, inner, out)
    }

    fn g_jacobian_into(&self, x: &[f64], outer: &P::Outer, inner: &P::Inner, jac: &mut [f64]) {
        self.inner.g_jacobian_into(x, outer, inner, jac)
    }

    fn g_with_jacobian(
        &self,
        x: &[f64],
        outer: &P::Outer,
        inner: &P::Inner,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        self.inner.g_with_jacobian(x, outer, inner, out, jac)
    }

    fn f_value(&self, _outer: &P::Outer, v: &[f64]) -> f64 {
        self.offset + self.coef.iter().zip(v).map(|(c, vi)| c * vi).sum::<f64>()
    }

    fn f_grad_into(&self, _outer: &P::Outer, _v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coef);
    }
}

impl<P: CsoProblem + FiniteSupport> FiniteSupport for AffineLoss<P> {
    fn outer_support(&self) -> Vec<(f64, P::Outer)> {
        self.inner.outer_support()
    }

    fn inner_support(&self, outer: &P::Outer) -> Vec<(f64, P::Inner)> {
        self.inner.inner_support(outer)
    }
}

/// Counts every inner `g`/`∇g` evaluation made through it.
#[derive(Debug)]
pub struct CountingProblem<P> {
    pub inner: P,
    evaluations: AtomicU64,
}

impl<P> CountingProblem<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    fn tick(&self) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
    }
}

impl<P: NestedSampler> NestedSampler for CountingProblem<P> {
    type Outer = P::Outer;
    type Inner = P::Inner;

    fn sample_outer(&self, rng: &mut RngStream) -> P::Outer {
        self.inner.sample_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &P::Outer) -> P::Inner {
        self.inner.sample_inner_one(rng, outer)
    }
}

impl<P: CsoProblem> CsoProblem for CountingProblem<P> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn value_dim(&self) -> usize {
        self.inner.value_dim()
    }

    fn g_into(&self, x: &[f64], outer: &P::Outer, inner: &P::Inner, out: &mut [f64]) {
        self.tick();
        self.inner.g_into(x, outer, inner, out)
    }

    fn g_jacobian_into(&self, x: &[f64], outer: &P::Outer, inner: &P::Inner, jac: &mut [f64]) {
        self.tick();
        self.inner.g_jacobian_into(x, outer, inner, jac)
    }

    fn g_with_jacobian(
        &self,
        x: &[f64],
        outer: &P::Outer,
        inner: &P::Inner,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        self.tick();
        self.inner.g_with_jacobian(x, outer, inner, out, jac)
    }

    fn f_value(&self, outer: &P::Outer, v: &[f64]) -> f64 {
        self.inner.f_value(outer, v)
    }

    fn f_grad_into(&self, outer: &P::Outer, v: &[f64], out: &mut [f64]) {
        self.inner.f_grad_into(outer, v, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn oracle_a_exact_gradient_is_five_x() {
        let p = DiscreteCsoProblem::oracle_a();
        for x in [-3.0, -0.5, 0.0, 1.0, 2.0, 7.25] {
            let g = exact_gradient(&p, &[x]).unwrap();
            assert!((g[0] - 5.0 * x).abs() <= 1e-15 * (1.0 + x.abs()), "x={x}");
            let f = exact_objective(&p, &[x]).unwrap();
            assert!((f - 2.5 * x * x).abs() <= 1e-14 * (1.0 + x * x));
        }
        assert_eq!(exact_gradient(&p, &[1.0]).unwrap(), vec![5.0]);
        assert_eq!(exact_gradient(&p, &[2.0]).unwrap(), vec![10.0]);
        assert_eq!(exact_gradient(&p, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn discrete_sample_outer_in_support_and_balanced() {
        let p = DiscreteCsoProblem::oracle_a();
        let mut rng = StreamKey::new(1).derive();
        let o = sample_outer(&p, &mut rng);
        assert!(o.value == 0.0 || o.value == 1.0);
        let n = 1_000_000;
        let ones = (0..n)
            .filter(|_| p.sample_outer(&mut rng).value == 1.0)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn discrete_inner_conditional_frequencies() {
        let p = DiscreteCsoProblem::oracle_a();
        let mut rng = StreamKey::new(2).derive();
        let zero = DiscreteOuter {
            index: 0,
            value: 0.0,
        };
        let n = 1_000_000;
        let batch = sample_inner(&p, &mut rng, &zero, n).unwrap();
        let mean = batch.samples.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.005, "mean {mean}");
        let threes = batch.samples.iter().filter(|&&e| e == 3.0).count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((threes - 0.5).abs() < 4.0 * se);
        assert!(batch.samples.iter().all(|&e| e == 1.0 || e == 3.0));
    }

    #[test]
    fn inner_batch_sizes() {
        let p = DiscreteCsoProblem::oracle_a();
        let mut rng = StreamKey::new(3).derive();
        let o = p.sample_outer(&mut rng);
        assert_eq!(sample_inner(&p, &mut rng, &o, 1).unwrap().len(), 1);
        assert!(matches!(
            sample_inner(&p, &mut rng, &o, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn oracle_maps_and_dimension_checks() {
        let p = DiscreteCsoProblem::oracle_a();
        let o = DiscreteOuter {
            index: 0,
            value: 0.0,
        };
        assert_eq!(g_eval(&p, &[1.0], &o, &3.0).unwrap(), vec![3.0]);
        assert_eq!(g_eval(&p, &[2.0], &o, &3.0).unwrap(), vec![6.0]);
        assert_eq!(g_grad(&p, &[2.0], &o, &3.0).unwrap().data, vec![3.0]);
        assert_eq!(f_eval(&p, &o, &[3.0]).unwrap(), 9.0);
        assert_eq!(f_grad(&p, &o, &[3.0]).unwrap(), vec![6.0]);
        assert!(g_eval(&p, &[1.0, 2.0], &o, &3.0).is_err());
        assert!(g_grad(&p, &[], &o, &3.0).is_err());
        assert!(f_eval(&p, &o, &[1.0, 1.0]).is_err());
        assert!(f_grad(&p, &o, &[]).is_err());
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(DiscreteLaw::new(vec![(0.5, 0.0)], vec![vec![(1.0, 1.0)]]).is_err());
        assert!(DiscreteLaw::new(
            vec![(1.2, 0.0), (-0.2, 1.0)],
            vec![vec![(1.0, 1.0)], vec![(1.0, 1.0)]]
        )
        .is_err());
        assert!(DiscreteLaw::new(vec![(1.0, 0.0)], vec![vec![]]).is_err());
        assert!(DiscreteLaw::new(vec![], vec![]).is_err());
        assert!(DiscreteLaw::new(vec![(1.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
        assert_eq!(ParamVector::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn sampling_is_deterministic_under_clone() {
        let p = DiscreteCsoProblem::oracle_a();
        let mut a = StreamKey::new(12).derive();
        let mut b = a.clone();
        for _ in 0..100 {
            let oa = p.sample_outer(&mut a);
            let ob = p.sample_outer(&mut b);
            assert_eq!(oa, ob);
            assert_eq!(
                sample_inner(&p, &mut a, &oa, 4).unwrap().samples,
                sample_inner(&p, &mut b, &ob, 4).unwrap().samples
            );
        }
    }
}
