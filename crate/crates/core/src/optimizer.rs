//! Robbins–Monro stochastic gradient descent under a cost budget.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimators::{
    expected_cost, fixed_level_mlmc_gradient, nested_mc_gradient, unbiased_mlmc_gradient,
    GradientEstimate, LevelDistribution, MlmcSchedule,
};
use crate::problem::{exact_gradient, CsoProblem, FiniteSupport, ParamVector};
use crate::rng::{RngStream, StreamKey};
use crate::squared_loss::{
    grad_estimator_1, grad_estimator_2, grad_estimator_3, SquaredLoss, SquaredLossModel,
};

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Number of objective evaluations a run logs by default.
pub const DEFAULT_EVAL_POINTS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `γ_t = γ_0`.
    Constant { gamma0: f64 },
    /// `γ_t = γ_0 / (t + 1)`.
    InverseT { gamma0: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let (Self::Constant { gamma0 } | Self::InverseT { gamma0 }) = *self;
        if !(gamma0 > 0.0) || !gamma0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite and positive, got {gamma0}"
            )));
        }
        Ok(())
    }

    pub fn step(&self, t: u64) -> f64 {
        match *self {
            Self::Constant { gamma0 } => gamma0,
            Self::InverseT { gamma0 } => gamma0 / (t as f64 + 1.0),
        }
    }
}

/// Which gradient estimator drives the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorConfig {
    NestedMc {
        m: u64,
        n: u64,
    },
    UnbiasedMlmc {
        n: u64,
        dist: LevelDistribution,
    },
    FixedLevelMlmc {
        schedule: MlmcSchedule,
    },
    #[serde(rename = "squared-loss-1")]
    SquaredLoss1 {
        m: u64,
        n: u64,
    },
    #[serde(rename = "squared-loss-2")]
    SquaredLoss2 {
        m: u64,
        n: u64,
    },
    #[serde(rename = "squared-loss-3")]
    SquaredLoss3 {
        m: u64,
        n: u64,
    },
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: u64| {
            if v == 0 {
                Err(Error::InvalidArgument(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::NestedMc { m, n } | Self::SquaredLoss1 { m, n } | Self::SquaredLoss2 { m, n } => {
                positive("M", *m)?;
                positive("N", *n)
            }
            Self::SquaredLoss3 { m, n } => {
                if *m < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "estimator 3 needs M >= 2, got {m}"
                    )));
                }
                positive("N", *n)
            }
            Self::UnbiasedMlmc { n, dist } => {
                positive("N", *n)?;
                LevelDistribution::new(dist.tau(), dist.level_cap()).map(|_| ())
            }
            Self::FixedLevelMlmc { schedule } => {
                MlmcSchedule::new(schedule.counts().to_vec()).map(|_| ())
            }
        }
    }

    pub fn is_squared_loss(&self) -> bool {
        matches!(
            self,
            Self::SquaredLoss1 { .. } | Self::SquaredLoss2 { .. } | Self::SquaredLoss3 { .. }
        )
    }
}

/// Cost charged per iteration: `MN` for nested MC, the expected cost times
/// `N` for the randomized estimator, `Σ N_ℓ 2^ℓ` for a fixed schedule, and
/// `2MN`, `2MN`, `MN` for the squared-loss estimators.
pub fn budget_accounting(config: &EstimatorConfig) -> Result<f64> {
    config.validate()?;
    Ok(match config {
        EstimatorConfig::NestedMc { m, n } | EstimatorConfig::SquaredLoss3 { m, n } => {
            (m * n) as f64
        }
        EstimatorConfig::SquaredLoss1 { m, n } | EstimatorConfig::SquaredLoss2 { m, n } => {
            (2 * m * n) as f64
        }
        EstimatorConfig::UnbiasedMlmc { n, dist } => expected_cost(dist)? * *n as f64,
        EstimatorConfig::FixedLevelMlmc { schedule } => schedule.cost() as f64,
    })
}

/// Anything that produces a stochastic gradient at a point.
pub trait GradientSource: Sync {
    fn dim(&self) -> usize;

    /// Cost charged against the budget for one call to `estimate`.
    fn cost_per_iteration(&self) -> f64;

    fn estimate(&self, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate>;

    fn config(&self) -> Option<&EstimatorConfig> {
        None
    }
}

/// A general estimator bound to a problem. Squared-loss estimators are
/// rejected here; use [`SquaredLossEstimator`].
#[derive(Debug)]
pub struct CsoEstimator<'a, P> {
    problem: &'a P,
    config: EstimatorConfig,
    cost: f64,
}

impl<'a, P: CsoProblem> CsoEstimator<'a, P> {
    pub fn new(problem: &'a P, config: EstimatorConfig) -> Result<Self> {
        if config.is_squared_loss() {
            return Err(Error::InvalidArgument(
                "squared-loss estimators need a squared-loss problem".into(),
            ));
        }
        let cost = budget_accounting(&config)?;
        Ok(Self {
            problem,
            config,
            cost,
        })
    }
}

fn general_estimate<P: CsoProblem + ?Sized>(
    problem: &P,
    config: &EstimatorConfig,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    match config {
        EstimatorConfig::NestedMc { m, n } => nested_mc_gradient(problem, x, *m, *n, rng),
        EstimatorConfig::UnbiasedMlmc { n, dist } => {
            unbiased_mlmc_gradient(problem, x, *n, dist, rng)
        }
        EstimatorConfig::FixedLevelMlmc { schedule } => {
            fixed_level_mlmc_gradient(problem, x, schedule, rng)
        }
        _ => unreachable!("squared-loss configurations are dispatched elsewhere"),
    }
}

impl<P: CsoProblem> GradientSource for CsoEstimator<'_, P> {
    fn dim(&self) -> usize {
        self.problem.param_dim()
    }

    fn cost_per_iteration(&self) -> f64 {
        self.cost
    }

    fn estimate(&self, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
        general_estimate(self.problem, &self.config, x, rng)
    }

    fn config(&self) -> Option<&EstimatorConfig> {
        Some(&self.config)
    }
}

/// Any estimator bound to a squared-loss problem.
#[derive(Debug)]
pub struct SquaredLossEstimator<'a, M> {
    problem: &'a SquaredLoss<M>,
    config: EstimatorConfig,
    cost: f64,
}

impl<'a, M: SquaredLossModel> SquaredLossEstimator<'a, M> {
    pub fn new(problem: &'a SquaredLoss<M>, config: EstimatorConfig) -> Result<Self> {
        let cost = budget_accounting(&config)?;
        Ok(Self {
            problem,
            config,
            cost,
        })
    }
}

impl<M: SquaredLossModel> GradientSource for SquaredLossEstimator<'_, M> {
    fn dim(&self) -> usize {
        self.problem.0.param_dim()
    }

    fn cost_per_iteration(&self) -> f64 {
        self.cost
    }

    fn estimate(&self, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
        let model = &self.problem.0;
        match self.config {
            EstimatorConfig::SquaredLoss1 { m, n } => grad_estimator_1(model, x, m, n, rng),
            EstimatorConfig::SquaredLoss2 { m, n } => grad_estimator_2(model, x, m, n, rng),
            EstimatorConfig::SquaredLoss3 { m, n } => grad_estimator_3(model, x, m, n, rng),
            _ => general_estimate(self.problem, &self.config, x, rng),
        }
    }

    fn config(&self) -> Option<&EstimatorConfig> {
        Some(&self.config)
    }
}

/// The exact gradient of a finite-support problem as a zero-variance
/// source charged one unit per call.
#[derive(Debug)]
pub struct ExactGradient<'a, P>(pub &'a P);

impl<P: CsoProblem + FiniteSupport> GradientSource for ExactGradient<'_, P> {
    fn dim(&self) -> usize {
        self.0.param_dim()
    }

    fn cost_per_iteration(&self) -> f64 {
        1.0
    }

    fn estimate(&self, x: &[f64], _rng: &mut RngStream) -> Result<GradientEstimate> {
        Ok(GradientEstimate {
            value: exact_gradient(self.0, x)?,
            cost: 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdSettings {
    pub schedule: StepSchedule,
    pub budget: f64,
    /// Evaluate the objective every this many iterations; `None` picks a
    /// cadence giving about [`DEFAULT_EVAL_POINTS`] rows.
    pub eval_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    /// Iterations times the expected per-iteration cost.
    pub cost_expected: f64,
    /// Inner evaluations actually drawn so far.
    pub cost_actual: u64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_params: Vec<f64>,
    pub seed: u64,
    pub estimator: Option<EstimatorConfig>,
    pub settings: SgdSettings,
    /// Iterations the budget allows.
    pub planned_iterations: u64,
}

impl RunTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.objective)
    }
}

/// Largest `T` with `T · cost ≤ budget`.
pub fn iteration_count(cost_per_iteration: f64, budget: f64) -> Result<u64> {
    if !(cost_per_iteration > 0.0) || !cost_per_iteration.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cost per iteration must be positive, got {cost_per_iteration}"
        )));
    }
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "budget must be finite and non-negative, got {budget}"
        )));
    }
    let mut t = (budget / cost_per_iteration).floor() as u64;
    while t > 0 && t as f64 * cost_per_iteration > budget {
        t -= 1;
    }
    Ok(t)
}

/// `x_{t+1} = x_t - γ_t · estimate(x_t)` for as many iterations as the
/// budget allows at the source's per-iteration cost.
///
/// Gradient draws use the stream `key/0`. The objective callback receives
/// the iterate and the index of the evaluation, and is called at the
/// initial point, every `eval_every` iterations, and at the final iterate.
pub fn robbins_monro<S, F>(
    source: &S,
    x0: ParamVector,
    settings: &SgdSettings,
    key: &StreamKey,
    mut objective: F,
) -> Result<RunTrace>
where
    S: GradientSource + ?Sized,
    F: FnMut(&[f64], u64) -> Result<f64>,
{
    settings.schedule.validate()?;
    if !(settings.budget > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cost budget must be positive, got {}",
            settings.budget
        )));
    }
    check_dim("initial point", source.dim(), x0.dim())?;
    let cost = source.cost_per_iteration();
    let total = iteration_count(cost, settings.budget)?;
    let eval_every = match settings.eval_every {
        Some(0) => {
            return Err(Error::InvalidArgument(
                "eval_every must be at least 1".into(),
            ))
        }
        Some(e) => e,
        None => (total / DEFAULT_EVAL_POINTS).max(1),
    };

    let mut rng = key.child(0)?.derive();
    let mut x = x0.into_inner();
    let mut trace = RunTrace {
        rows: Vec::new(),
        final_params: Vec::new(),
        seed: key.seed(),
        estimator: source.config().cloned(),
        settings: *settings,
        planned_iterations: total,
    };
    let mut actual = 0u64;
    let mut record = |trace: &mut RunTrace, x: &[f64], t: u64, actual: u64| -> Result<()> {
        let value = objective(x, trace.rows.len() as u64)?;
        trace.rows.push(TraceRow {
            iteration: t,
            cost_expected: t as f64 * cost,
            cost_actual: actual,
            objective: value,
        });
        Ok(())
    };

    record(&mut trace, &x, 0, actual)?;
    for t in 0..total {
        let est = source.estimate(&x, &mut rng)?;
        let gamma = settings.schedule.step(t);
        x.iter_mut()
            .zip(&est.value)
            .for_each(|(xi, gi)| *xi -= gamma * gi);
        actual += est.cost;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            trace.final_params = x;
            return Err(Error::Divergence {
                iteration: t + 1,
                trace: Box::new(trace),
            });
        }
        let done = t + 1;
        if done % eval_every == 0 || done == total {
            record(&mut trace, &x, done, actual)?;
        }
    }
    trace.final_params = x;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DiscreteCsoProblem;

    fn settings(gamma0: f64, budget: f64) -> SgdSettings {
        SgdSettings {
            schedule: StepSchedule::Constant { gamma0 },
            budget,
            eval_every: Some(1),
        }
    }

    #[test]
    fn exact_gradient_on_quadratic_halves_each_step() {
        // F = 5x²/2, γ = 0.1: x_{t+1} = x_t/2
        let problem = DiscreteCsoProblem::oracle_a();
        let source = ExactGradient(&problem);
        let x0 = ParamVector::new(vec![1.0]).unwrap();
        let trace = robbins_monro(
            &source,
            x0,
            &settings(0.1, 20.0),
            &StreamKey::new(0),
            |x, _| Ok(x[0]),
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 21);
        for row in &trace.rows {
            let expected = 0.5f64.powi(row.iteration as i32);
            assert!((row.objective - expected).abs() < 1e-15 * expected.max(1e-300) + 1e-300);
        }
        let errors: Vec<f64> = trace.rows.iter().map(|r| r.objective.abs()).collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn budget_below_one_step_keeps_only_initial_row() {
        let problem = DiscreteCsoProblem::oracle_a();
        let source = CsoEstimator::new(&problem, EstimatorConfig::NestedMc { m: 8, n: 1 }).unwrap();
        let trace = robbins_monro(
            &source,
            ParamVector::new(vec![1.0]).unwrap(),
            &settings(0.1, 7.0),
            &StreamKey::new(1),
            |_, _| Ok(0.0),
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].iteration, 0);
        assert_eq!(trace.final_params, vec![1.0]);
    }

    #[test]
    fn budget_accounting_values() {
        let mlmc = EstimatorConfig::UnbiasedMlmc {
            n: 1,
            dist: LevelDistribution::default(),
        };
        assert!((budget_accounting(&mlmc).unwrap() - 2.2071).abs() < 1e-4);
        let nested = EstimatorConfig::NestedMc { m: 8, n: 1 };
        assert_eq!(budget_accounting(&nested).unwrap(), 8.0);
        let sl3 = EstimatorConfig::SquaredLoss3 { m: 4, n: 1 };
        assert_eq!(budget_accounting(&sl3).unwrap(), 4.0);
        let sl1 = EstimatorConfig::SquaredLoss1 { m: 4, n: 3 };
        assert_eq!(budget_accounting(&sl1).unwrap(), 24.0);
        let fixed = EstimatorConfig::FixedLevelMlmc {
            schedule: MlmcSchedule::new(vec![4, 2, 1]).unwrap(),
        };
        assert_eq!(budget_accounting(&fixed).unwrap(), 12.0);
        assert!(budget_accounting(&EstimatorConfig::SquaredLoss3 { m: 1, n: 1 }).is_err());
    }

    #[test]
    fn iteration_count_never_overshoots() {
        assert_eq!(iteration_count(3.0, 6000.0).unwrap(), 2000);
        let c = LevelDistribution::default().expected_cost();
        let t = iteration_count(c, 1e6).unwrap();
        assert!(t as f64 * c <= 1e6 && (t + 1) as f64 * c > 1e6);
        assert_eq!(iteration_count(2.0, 0.0).unwrap(), 0);
        assert!(iteration_count(2.0, -1.0).is_err());
    }

    #[test]
    fn traces_are_reproducible_and_costs_consistent() {
        let problem = DiscreteCsoProblem::oracle_a();
        let config = EstimatorConfig::UnbiasedMlmc {
            n: 1,
            dist: LevelDistribution::default(),
        };
        let source = CsoEstimator::new(&problem, config).unwrap();
        let s = SgdSettings {
            schedule: StepSchedule::InverseT { gamma0: 0.05 },
            budget: 50_000.0,
            eval_every: None,
        };
        let run = || {
            robbins_monro(
                &source,
                ParamVector::new(vec![1.0]).unwrap(),
                &s,
                &StreamKey::new(9),
                |x, _| Ok(x[0]),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let last = a.rows.last().unwrap();
        assert_eq!(last.iteration, a.planned_iterations);
        assert!(last.cost_expected <= 50_000.0);
        assert!(a
            .rows
            .windows(2)
            .all(|w| w[0].cost_actual <= w[1].cost_actual));
        let per_step = last.cost_actual as f64 / last.iteration as f64;
        assert!(a.planned_iterations >= 10_000);
        assert!((per_step / source.cost_per_iteration() - 1.0).abs() < 0.1);
        assert!(a.rows.len() as u64 >= DEFAULT_EVAL_POINTS);
    }

    #[test]
    fn divergence_returns_partial_trace() {
        let problem = DiscreteCsoProblem::oracle_a();
        let source = ExactGradient(&problem);
        // γ·5 = 10 > 2: |x| grows ninefold per step
        let err = robbins_monro(
            &source,
            ParamVector::new(vec![1.0]).unwrap(),
            &settings(2.0, 1000.0),
            &StreamKey::new(0),
            |x, _| Ok(x[0]),
        )
        .unwrap_err();
        match err {
            Error::Divergence { iteration, trace } => {
                assert_eq!(iteration, 13);
                assert_eq!(trace.rows.len(), 13);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_positive_budget_rejected() {
        let problem = DiscreteCsoProblem::oracle_a();
        let source = ExactGradient(&problem);
        for budget in [0.0, -5.0, f64::NAN] {
            let r = robbins_monro(
                &source,
                ParamVector::new(vec![1.0]).unwrap(),
                &settings(0.1, budget),
                &StreamKey::new(0),
                |_, _| Ok(0.0),
            );
            assert!(matches!(r, Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn squared_loss_config_rejected_for_general_problem() {
        let problem = DiscreteCsoProblem::oracle_a();
        assert!(CsoEstimator::new(&problem, EstimatorConfig::SquaredLoss1 { m: 1, n: 1 }).is_err());
    }
}
