//! Empirical checks: level-moment decay, finite-difference gradient checks,
//! estimator variance comparison, and objective evaluation for the two
//! experiment models.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::level_pair;
use crate::models::{softplus, IvProblem, LogisticInvariantModel};
use crate::problem::CsoProblem;
use crate::rng::{RngStream, StreamKey};
use crate::squared_loss::{coupled_estimates, objective_unbiased, SquaredLossModel};

/// Default evaluation sample size for the logistic objective.
pub const DEFAULT_LOGISTIC_EVAL: u64 = 1_000;
/// Default outer and inner sample sizes for the IV objective.
pub const DEFAULT_IV_EVAL_N: u64 = 10_000;
pub const DEFAULT_IV_EVAL_M: u64 = 2;
/// Default level range of the decay fit.
pub const DEFAULT_FIT_RANGE: (u32, u32) = (1, 8);

/// Runs `f` for `reps` replicates in parallel, replicate `r` using the
/// stream `key/r`. Output order is replicate order.
pub fn replicate<T, F>(key: &StreamKey, reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut RngStream) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = key.child(r)?.derive();
            f(r, &mut rng)
        })
        .collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    pub reps: u64,
    pub mean_dpsi_sq: f64,
    pub se_dpsi_sq: f64,
    pub mean_psi_sq: f64,
    pub se_psi_sq: f64,
}

/// Monte Carlo estimates of `E‖Δψ_ℓ‖²` and `E‖ψ_ℓ‖²` per level, both from
/// the same draws. Level `ℓ`, replicate `r` uses the stream `key/ℓ/r`.
pub fn level_moments<P: CsoProblem>(
    problem: &P,
    x: &[f64],
    levels: RangeInclusive<u32>,
    reps: u64,
    key: &StreamKey,
) -> Result<Vec<LevelRow>> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "level moments need at least 2 replicates, got {reps}"
        )));
    }
    levels
        .map(|level| {
            let pairs = replicate(&key.child(u64::from(level))?, reps, |_, rng| {
                let (psi, dpsi) = level_pair(problem, x, level, rng)?;
                Ok((norm_sq(&dpsi), norm_sq(&psi)))
            })?;
            let (d, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (mean_dpsi_sq, se_dpsi_sq) = mean_and_se(&d);
            let (mean_psi_sq, se_psi_sq) = mean_and_se(&p);
            Ok(LevelRow {
                level,
                reps,
                mean_dpsi_sq,
                se_dpsi_sq,
                mean_psi_sq,
                se_psi_sq,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub intercept: f64,
    pub fit_range: (u32, u32),
}

/// Least-squares line through `(ℓ, log₂ E‖Δψ_ℓ‖²)` over the fit range;
/// `β` is minus the slope.
pub fn fit_beta(rows: &[LevelRow], fit_range: (u32, u32)) -> Result<BetaFit> {
    let (lo, hi) = fit_range;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| (lo..=hi).contains(&r.level))
        .map(|r| {
            if r.mean_dpsi_sq > 0.0 && r.mean_dpsi_sq.is_finite() {
                Ok((f64::from(r.level), r.mean_dpsi_sq.log2()))
            } else {
                Err(Error::CannotFit(format!(
                    "moment at level {} is {}",
                    r.level, r.mean_dpsi_sq
                )))
            }
        })
        .collect::<Result<_>>()?;
    if points.len() < 2 {
        return Err(Error::CannotFit(format!(
            "need at least two levels in {lo}..={hi}, found {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(BetaFit {
        beta: -slope,
        intercept: my - slope * mx,
        fit_range,
    })
}

/// Which map a gradient-check mismatch refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckedMap {
    /// Jacobian of `g` in `x`.
    Inner,
    /// Gradient of `f` in its argument.
    Outer,
    /// Gradient of `x ↦ f(g(x))` for a single inner sample.
    Pathwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub map: CheckedMap,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub points: u64,
    pub worst: Option<Mismatch>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_err)
    }

    fn absorb(&mut self, other: GradCheckReport) {
        self.points += other.points;
        if let Some(w) = other.worst {
            if self.worst.is_none_or(|cur| w.rel_err > cur.rel_err) {
                self.worst = Some(w);
            }
        }
        self.pass = self.max_rel_err() < self.tol;
    }
}

/// `|a - n| / max(|a|, |n|, 1)`: relative for large values, absolute near
/// zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn central_difference(x: &[f64], i: usize, step: f64, mut h: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + step;
    let plus = h(&xp);
    xp[i] = x[i] - step;
    let minus = h(&xp);
    (plus - minus) / (2.0 * step)
}

/// Central differences of `g`, `f` and the pathwise integrand `f(g(x))`
/// against their analytic derivatives at one `(x, ξ, η)`.
pub fn grad_check<P: CsoProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    outer: &P::Outer,
    inner: &P::Inner,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    crate::error::check_dim("x", problem.param_dim(), x.len())?;
    let (k, d) = (problem.value_dim(), problem.param_dim());
    let mut report = GradCheckReport {
        step,
        tol,
        points: 1,
        worst: None,
        pass: true,
    };
    let mut consider = |map, coordinate, analytic: f64, numeric: f64| {
        let rel_err = relative_error(analytic, numeric);
        if report.worst.is_none_or(|w| !(rel_err <= w.rel_err)) {
            report.worst = Some(Mismatch {
                map,
                coordinate,
                analytic,
                numeric,
                rel_err,
            });
        }
    };

    let mut g = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    problem.g_into(x, outer, inner, &mut g);
    problem.g_jacobian_into(x, outer, inner, &mut jac);
    let mut buf = vec![0.0; k];
    for i in 0..k {
        for j in 0..d {
            let numeric = central_difference(x, j, step, |xp| {
                problem.g_into(xp, outer, inner, &mut buf);
                buf[i]
            });
            consider(CheckedMap::Inner, i * d + j, jac[i * d + j], numeric);
        }
    }

    let mut fg = vec![0.0; k];
    problem.f_grad_into(outer, &g, &mut fg);
    for (i, &analytic) in fg.iter().enumerate() {
        let numeric = central_difference(&g, i, step, |v| problem.f_value(outer, v));
        consider(CheckedMap::Outer, i, analytic, numeric);
    }

    for j in 0..d {
        let analytic: f64 = (0..k).map(|i| jac[i * d + j] * fg[i]).sum();
        let numeric = central_difference(x, j, step, |xp| {
            problem.g_into(xp, outer, inner, &mut buf);
            problem.f_value(outer, &buf)
        });
        consider(CheckedMap::Pathwise, j, analytic, numeric);
    }

    report.pass = report.max_rel_err() < tol;
    Ok(report)
}

/// [`grad_check`] at `points` random `(x, ξ, η)`. `draw_x` proposes the
/// parameter point; `accept` may reject a whole triple (for example near a
/// rectifier kink) and a fresh one is drawn.
pub fn grad_check_random<P, D, A>(
    problem: &P,
    points: u64,
    step: f64,
    tol: f64,
    rng: &mut RngStream,
    mut draw_x: D,
    accept: A,
) -> Result<GradCheckReport>
where
    P: CsoProblem + ?Sized,
    D: FnMut(&mut RngStream) -> Vec<f64>,
    A: Fn(&[f64], &P::Outer, &P::Inner) -> bool,
{
    const MAX_ATTEMPTS: u64 = 1_000;
    let mut report = GradCheckReport {
        step,
        tol,
        points: 0,
        worst: None,
        pass: true,
    };
    for _ in 0..points {
        let mut attempts = 0;
        let (x, outer, inner) = loop {
            let x = draw_x(rng);
            let outer = problem.sample_outer(rng);
            let inner = problem.sample_inner_one(rng, &outer);
            if accept(&x, &outer, &inner) {
                break (x, outer, inner);
            }
            attempts += 1;
            if attempts == MAX_ATTEMPTS {
                return Err(Error::InvalidArgument(
                    "gradient check rejected every proposed point".into(),
                ));
            }
        };
        report.absorb(grad_check(problem, &x, &outer, &inner, step, tol)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub m: u64,
    pub reps: u64,
    /// `E‖e - E e‖²` for estimators 1(M), 2(M) and 3(2M).
    pub var: [f64; 3],
    /// Jackknife standard errors of `var`.
    pub se: [f64; 3],
    /// Per-coordinate variances.
    pub coordinate_var: [Vec<f64>; 3],
    /// Jackknife standard errors of `var[0] - var[1]` and `var[1] - var[2]`
    /// from the paired replicates.
    pub diff_se: [f64; 2],
    pub ordering_pass: bool,
}

/// Number of standard errors a variance ordering may be violated by.
pub const ORDERING_TOLERANCE_SE: f64 = 3.0;

/// Jackknife standard error of the unbiased sample variance from the
/// squared deviations `dev`, in closed form: leaving out replicate `i`
/// shifts the estimate by `-n/((n-1)(n-2)) (dev_i - mean dev)`.
fn jackknife_se(dev: &[f64]) -> f64 {
    let n = dev.len() as f64;
    let mean = dev.iter().sum::<f64>() / n;
    let ss: f64 = dev.iter().map(|v| (v - mean).powi(2)).sum();
    n / ((n - 1.0) * (n - 2.0)) * ((n - 1.0) / n * ss).sqrt()
}

/// Coupled variance comparison of the three squared-loss gradient
/// estimators at matched cost, using one outer draw per replicate.
pub fn variance_compare<M: SquaredLossModel>(
    problem: &M,
    x: &[f64],
    m: u64,
    reps: u64,
    key: &StreamKey,
) -> Result<VarianceReport> {
    if reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "variance comparison needs at least 3 replicates, got {reps}"
        )));
    }
    let draws = replicate(key, reps, |_, rng| coupled_estimates(problem, x, m, rng))?;
    let n = reps as f64;
    let d = x.len();
    let mut var = [0.0; 3];
    let mut se = [0.0; 3];
    let mut coordinate_var: [Vec<f64>; 3] = Default::default();
    let mut dev: [Vec<f64>; 3] = Default::default();
    for e in 0..3 {
        let mut mean = vec![0.0; d];
        for draw in &draws {
            mean.iter_mut().zip(&draw[e]).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cv = vec![0.0; d];
        dev[e] = draws
            .iter()
            .map(|draw| {
                draw[e]
                    .iter()
                    .zip(&mean)
                    .zip(&mut cv)
                    .map(|((v, m), c)| {
                        let sq = (v - m).powi(2);
                        *c += sq;
                        sq
                    })
                    .sum()
            })
            .collect();
        cv.iter_mut().for_each(|c| *c /= n - 1.0);
        var[e] = dev[e].iter().sum::<f64>() / (n - 1.0);
        se[e] = jackknife_se(&dev[e]);
        coordinate_var[e] = cv;
    }
    let diff = |a: usize, b: usize| -> Vec<f64> {
        dev[a].iter().zip(&dev[b]).map(|(x, y)| x - y).collect()
    };
    let diff_se = [jackknife_se(&diff(0, 1)), jackknife_se(&diff(1, 2))];
    // identical estimators differ only by rounding; allow for it
    let slack = 1e-12 * var.iter().fold(0.0f64, |m, v| m.max(*v));
    let ordering_pass =
        (0..2).all(|i| var[i] - var[i + 1] >= -ORDERING_TOLERANCE_SE * diff_se[i] - slack);
    Ok(VarianceReport {
        m,
        reps,
        var,
        se,
        coordinate_var,
        diff_se,
        ordering_pass,
    })
}

/// `(1/N̂) Σ log(1 + exp(-b aᵀx))` over fresh outer draws, using
/// `E[η | ξ] = a`.
pub fn objective_mc_logistic(
    model: &LogisticInvariantModel,
    x: &[f64],
    n_hat: u64,
    rng: &mut RngStream,
) -> Result<f64> {
    crate::error::check_dim("x", model.dim(), x.len())?;
    if n_hat == 0 {
        return Err(Error::InvalidArgument("N̂ must be at least 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_hat {
        let outer = model.logistic_outer(rng);
        let margin: f64 = outer.a.iter().zip(x).map(|(a, x)| a * x).sum();
        total += softplus(-outer.b * margin);
    }
    Ok(total / n_hat as f64)
}

/// Bias-corrected objective estimate on the IV model.
pub fn objective_iv(
    problem: &IvProblem,
    x: &[f64],
    n: u64,
    m: u64,
    rng: &mut RngStream,
) -> Result<f64> {
    objective_unbiased(problem, x, m, n, rng)
}
