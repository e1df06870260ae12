//! Nested Monte Carlo and multilevel Monte Carlo gradient estimators.
//!
//! `ψ_ℓ` is the nested estimator with one outer draw and `2^ℓ` inner draws.
//! `Δψ_ℓ` couples `ψ_ℓ` with the average of the two `ψ_{ℓ-1}` statistics
//! built from the first and second halves of the same inner batch, so that
//! `E[Δψ_ℓ] = E[ψ_ℓ] - E[ψ_{ℓ-1}]` while its second moment decays faster
//! than `2^-ℓ` for smooth outer losses.
//!
//! Cost is counted in fused `g`/`∇g` evaluations, one per inner sample.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{axpy, jacobian_t_vec, CsoProblem, InnerBatch};
use crate::rng::RngStream;

/// Default hard cap on sampled levels.
pub const DEFAULT_LEVEL_CAP: u32 = 40;

/// Default decay exponent of the level distribution.
pub const DEFAULT_TAU: f64 = 1.5;

/// Largest level whose batch size `2^ℓ` is representable.
const MAX_LEVEL: u32 = 62;

/// A gradient estimate and the number of inner evaluations it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    pub cost: u64,
}

/// `ω_ℓ = (1 - 2^-τ) 2^-τℓ` on `ℓ = 0, 1, ...`, with a hard cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    tau: f64,
    level_cap: u32,
}

impl LevelDistribution {
    pub fn new(tau: f64, level_cap: u32) -> Result<Self> {
        if !(tau > 1.0) || !tau.is_finite() {
            return Err(Error::DivergentCost { tau });
        }
        if level_cap > MAX_LEVEL {
            return Err(Error::InvalidArgument(format!(
                "level cap {level_cap} exceeds {MAX_LEVEL}"
            )));
        }
        Ok(Self { tau, level_cap })
    }

    pub fn with_tau(tau: f64) -> Result<Self> {
        Self::new(tau, DEFAULT_LEVEL_CAP)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn level_cap(&self) -> u32 {
        self.level_cap
    }

    pub fn weight(&self, level: u32) -> f64 {
        (1.0 - (-self.tau).exp2()) * (-self.tau * f64::from(level)).exp2()
    }

    /// Probability mass beyond `level`, i.e. `P(ℓ > level) = 2^-τ(level+1)`.
    pub fn tail(&self, level: u32) -> f64 {
        (-self.tau * (f64::from(level) + 1.0)).exp2()
    }

    pub fn expected_cost(&self) -> f64 {
        (1.0 - (-self.tau).exp2()) / (1.0 - (1.0 - self.tau).exp2())
    }
}

impl Default for LevelDistribution {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            level_cap: DEFAULT_LEVEL_CAP,
        }
    }
}

/// Expected cost `Σ ω_ℓ 2^ℓ = (1 - 2^-τ)/(1 - 2^(1-τ))` of one level draw.
pub fn expected_cost(dist: &LevelDistribution) -> Result<f64> {
    if !(dist.tau > 1.0) {
        return Err(Error::DivergentCost { tau: dist.tau });
    }
    Ok(dist.expected_cost())
}

pub fn sample_level(dist: &LevelDistribution, rng: &mut RngStream) -> Result<u32> {
    let level = rng.geometric_level(dist.tau);
    if level > u64::from(dist.level_cap) {
        return Err(Error::LevelOverflow {
            level,
            cap: dist.level_cap,
        });
    }
    Ok(level as u32)
}

/// Per-level replication counts `N_0, ..., N_L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmcSchedule {
    counts: Vec<u64>,
}

impl MlmcSchedule {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument(
                "schedule needs at least level 0".into(),
            ));
        }
        if counts.len() > MAX_LEVEL as usize + 1 {
            return Err(Error::InvalidArgument(
                "schedule has too many levels".into(),
            ));
        }
        if let Some(l) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "schedule count at level {l} is zero"
            )));
        }
        Ok(Self { counts })
    }

    pub fn max_level(&self) -> u32 {
        (self.counts.len() - 1) as u32
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `Σ N_ℓ 2^ℓ`.
    pub fn cost(&self) -> u64 {
        self.counts.iter().enumerate().map(|(l, n)| n << l).sum()
    }
}

/// Reusable buffers for one problem's `k` and `d`.
struct Scratch {
    d: usize,
    g: Vec<f64>,
    jac: Vec<f64>,
    mean_g: Vec<f64>,
    mean_jac: Vec<f64>,
    fg: Vec<f64>,
}

impl Scratch {
    fn new(k: usize, d: usize) -> Self {
        Self {
            d,
            g: vec![0.0; k],
            jac: vec![0.0; k * d],
            mean_g: vec![0.0; k],
            mean_jac: vec![0.0; k * d],
            fg: vec![0.0; k],
        }
    }
}

/// Running sums of `g` and `∇g` over part of an inner batch.
#[derive(Clone)]
struct Sums {
    g: Vec<f64>,
    jac: Vec<f64>,
}

impl Sums {
    fn new(k: usize, d: usize) -> Self {
        Self {
            g: vec![0.0; k],
            jac: vec![0.0; k * d],
        }
    }

    fn add(&mut self, g: &[f64], jac: &[f64]) {
        axpy(1.0, g, &mut self.g);
        axpy(1.0, jac, &mut self.jac);
    }

    fn merged(&self, other: &Sums) -> Sums {
        let mut out = self.clone();
        out.add(&other.g, &other.jac);
        out
    }
}

fn accumulate<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    outer: &P::Outer,
    inner: &P::Inner,
    sums: &mut Sums,
    scratch: &mut Scratch,
) {
    problem.g_with_jacobian(x, outer, inner, &mut scratch.g, &mut scratch.jac);
    sums.add(&scratch.g, &scratch.jac);
}

/// `(mean ∇g)ᵀ ∇f(mean g)` from sums over `count` inner samples.
fn psi_from_sums<P: CsoProblem + ?Sized>(
    problem: &P,
    outer: &P::Outer,
    sums: &Sums,
    count: u64,
    scratch: &mut Scratch,
    out: &mut [f64],
) {
    let c = count as f64;
    for (m, s) in scratch.mean_g.iter_mut().zip(&sums.g) {
        *m = s / c;
    }
    for (m, s) in scratch.mean_jac.iter_mut().zip(&sums.jac) {
        *m = s / c;
    }
    problem.f_grad_into(outer, &scratch.mean_g, &mut scratch.fg);
    jacobian_t_vec(&scratch.mean_jac, &scratch.fg, scratch.d, out);
}

/// `ψ_ℓ` and `Δψ_ℓ` for one outer draw and `2^ℓ` inner draws supplied in
/// draw order by `next_inner`.
fn level_terms<P, F>(
    problem: &P,
    x: &[f64],
    level: u32,
    outer: &P::Outer,
    mut next_inner: F,
) -> (Vec<f64>, Vec<f64>)
where
    P: CsoProblem + ?Sized,
    F: FnMut() -> P::Inner,
{
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let mut scratch = Scratch::new(k, d);
    let mut psi = vec![0.0; d];
    if level == 0 {
        let mut sums = Sums::new(k, d);
        let inner = next_inner();
        accumulate(problem, x, outer, &inner, &mut sums, &mut scratch);
        psi_from_sums(problem, outer, &sums, 1, &mut scratch, &mut psi);
        return (psi.clone(), psi);
    }
    let half = 1u64 << (level - 1);
    let mut first = Sums::new(k, d);
    let mut second = Sums::new(k, d);
    for _ in 0..half {
        let inner = next_inner();
        accumulate(problem, x, outer, &inner, &mut first, &mut scratch);
    }
    for _ in 0..half {
        let inner = next_inner();
        accumulate(problem, x, outer, &inner, &mut second, &mut scratch);
    }
    let full = first.merged(&second);
    let mut psi_a = vec![0.0; d];
    let mut psi_b = vec![0.0; d];
    psi_from_sums(problem, outer, &full, 2 * half, &mut scratch, &mut psi);
    psi_from_sums(problem, outer, &first, half, &mut scratch, &mut psi_a);
    psi_from_sums(problem, outer, &second, half, &mut scratch, &mut psi_b);
    let delta = psi
        .iter()
        .zip(psi_a.iter().zip(&psi_b))
        .map(|(p, (a, b))| p - 0.5 * (a + b))
        .collect();
    (psi, delta)
}

fn check_level(level: u32) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "level {level} exceeds {MAX_LEVEL}"
        )));
    }
    Ok(())
}

fn check_count(name: &str, value: u64) -> Result<()> {
    if value == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Arithmetic mean of equally sized vectors, accumulated in order.
fn mean_in_order(values: impl IntoIterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut iter = values.into_iter();
    let mut acc = iter.next().expect("at least one value");
    let mut n = 1usize;
    for v in iter {
        axpy(1.0, &v, &mut acc);
        n += 1;
    }
    let nf = n as f64;
    acc.iter_mut().for_each(|a| *a /= nf);
    acc
}

/// Plug-in nested estimator with `N` outer and `M` inner draws each.
pub fn nested_mc_gradient<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    m: u64,
    n: u64,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_count("M", m)?;
    check_count("N", n)?;
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let mut scratch = Scratch::new(k, d);
    let value = mean_in_order((0..n).map(|_| {
        let outer = problem.sample_outer(rng);
        let mut sums = Sums::new(k, d);
        for _ in 0..m {
            let inner = problem.sample_inner_one(rng, &outer);
            accumulate(problem, x, &outer, &inner, &mut sums, &mut scratch);
        }
        let mut psi = vec![0.0; d];
        psi_from_sums(problem, &outer, &sums, m, &mut scratch, &mut psi);
        psi
    }));
    Ok(GradientEstimate { value, cost: m * n })
}

/// `ψ_ℓ` on a given batch of exactly `2^ℓ` inner samples.
pub fn psi_level<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    level: u32,
    batch: &InnerBatch<P::Outer, P::Inner>,
) -> Result<Vec<f64>> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_level(level)?;
    check_dim("inner batch", 1usize << level, batch.len())?;
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let mut scratch = Scratch::new(k, d);
    let mut sums = Sums::new(k, d);
    for inner in &batch.samples {
        accumulate(problem, x, &batch.outer, inner, &mut sums, &mut scratch);
    }
    let mut psi = vec![0.0; d];
    psi_from_sums(
        problem,
        &batch.outer,
        &sums,
        1u64 << level,
        &mut scratch,
        &mut psi,
    );
    Ok(psi)
}

/// `(ψ_ℓ, Δψ_ℓ)` on a given batch of exactly `2^ℓ` inner samples. The
/// antithetic halves are the first and second `2^(ℓ-1)` entries.
pub fn level_pair_on_batch<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    level: u32,
    batch: &InnerBatch<P::Outer, P::Inner>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_level(level)?;
    check_dim("inner batch", 1usize << level, batch.len())?;
    let mut inners = batch.samples.iter();
    Ok(level_terms(problem, x, level, &batch.outer, || {
        inners.next().expect("length checked").clone()
    }))
}

/// One draw of `(ψ_ℓ, Δψ_ℓ)` sharing the same outer and inner samples.
/// Cost is `2^ℓ`.
pub fn level_pair<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    level: u32,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_level(level)?;
    let outer = problem.sample_outer(rng);
    Ok(level_terms(problem, x, level, &outer, || {
        problem.sample_inner_one(rng, &outer)
    }))
}

/// One draw of the antithetic difference `Δψ_ℓ`.
pub fn delta_psi<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    level: u32,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    let (_, delta) = level_pair(problem, x, level, rng)?;
    Ok(GradientEstimate {
        value: delta,
        cost: 1u64 << level,
    })
}

/// Truncated MLMC estimator `Σ_ℓ (1/N_ℓ) Σ Δψ_ℓ`. Biased: its mean is
/// `E[ψ_L]`.
pub fn fixed_level_mlmc_gradient<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    schedule: &MlmcSchedule,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    let mut total = vec![0.0; problem.param_dim()];
    for (level, &reps) in schedule.counts.iter().enumerate() {
        let level = level as u32;
        let draws = (0..reps)
            .map(|_| delta_psi(problem, x, level, rng).map(|e| e.value))
            .collect::<Result<Vec<_>>>()?;
        axpy(1.0, &mean_in_order(draws), &mut total);
    }
    Ok(GradientEstimate {
        value: total,
        cost: schedule.cost(),
    })
}

/// Randomized single-term estimator `(1/N) Σ Δψ_{ℓ_n} / ω_{ℓ_n}`,
/// unbiased for `∇F(x)`.
pub fn unbiased_mlmc_gradient<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    n: u64,
    dist: &LevelDistribution,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_dim("x", problem.param_dim(), x.len())?;
    check_count("N", n)?;
    let mut cost = 0u64;
    let mut draws = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let level = sample_level(dist, rng)?;
        let mut est = delta_psi(problem, x, level, rng)?;
        let w = dist.weight(level);
        est.value.iter_mut().for_each(|v| *v /= w);
        cost += est.cost;
        draws.push(est.value);
    }
    Ok(GradientEstimate {
        value: mean_in_order(draws),
        cost,
    })
}
