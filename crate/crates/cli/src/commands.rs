use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cso_core::diagnostics::{
    fit_beta, grad_check_random, level_moments, objective_iv, objective_mc_logistic,
    variance_compare, BetaFit, GradCheckReport, LevelRow, VarianceReport, DEFAULT_IV_EVAL_N,
    DEFAULT_LOGISTIC_EVAL,
};
use cso_core::optimizer::{
    robbins_monro, CsoEstimator, GradientSource, RunTrace, SgdSettings, SquaredLossEstimator,
};
use cso_core::problem::{exact_objective, ParamVector};
use cso_core::rng::{RngStream, StreamKey};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ProblemKind, RunConfig};
use crate::output::{write_csv, write_json, Cell};
use crate::problems::AnyProblem;
use crate::with_problem;

/// Network points closer than this to a rectifier kink are not
/// finite-differenced.
pub const KINK_MARGIN: f64 = 1e-3;

const TAG_OPTIMIZE: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_BETA_POINT: u64 = 10;
const TAG_BETA: u64 = 11;
const TAG_VARIANCE_POINT: u64 = 20;
const TAG_VARIANCE: u64 = 21;
const TAG_GRADCHECK: u64 = 30;
const TAG_SCATTER: u64 = 40;

/// Why a command failed, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Numerical(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn numerical(e: cso_core::Error) -> Failure {
    Failure::Numerical(e.to_string())
}

fn key(seed: u64, path: &[u64]) -> StreamKey {
    StreamKey::with_path(seed, path).expect("fixed paths are short")
}

fn point_or_random(
    field: &str,
    given: &Option<Vec<f64>>,
    problem: &AnyProblem,
    sd: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>, Failure> {
    match given {
        Some(x) if x.len() != problem.dim() => Err(ConfigError::new(
            field,
            format!(
                "has {} coordinates, the problem needs {}",
                x.len(),
                problem.dim()
            ),
        )
        .into()),
        Some(x) => Ok(x.clone()),
        None => Ok(problem.diagnostic_point(sd, rng)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaOutcome {
    pub x: Vec<f64>,
    pub rows: Vec<LevelRow>,
    pub fit: Option<BetaFit>,
    pub fit_error: Option<String>,
}

pub fn run_beta(config: &RunConfig) -> Result<BetaOutcome, Failure> {
    config.validate()?;
    let problem = AnyProblem::build(config.problem.kind, config)?;
    let b = &config.beta;
    let mut rng = key(config.seed, &[TAG_BETA_POINT]).derive();
    let x = point_or_random("beta.x", &b.x, &problem, b.x_sd, &mut rng)?;
    let moments_key = key(config.seed, &[TAG_BETA]);
    let rows = with_problem!(&problem, p => level_moments(p, &x, b.level_min..=b.level_max, b.reps, &moments_key))
        .map_err(numerical)?;
    let (fit, fit_error) = match fit_beta(&rows, (b.fit_min, b.fit_max)) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(BetaOutcome {
        x,
        rows,
        fit,
        fit_error,
    })
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    result: T,
}

fn sidecar<T: Serialize>(
    dir: &Path,
    name: &str,
    config: &RunConfig,
    result: T,
) -> Result<(), Failure> {
    write_json(
        &dir.join(name),
        &Sidecar {
            seed: config.seed,
            config,
            result,
        },
    )?;
    Ok(())
}

fn prepare_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn cmd_beta(config: &RunConfig) -> Result<BetaOutcome, Failure> {
    let outcome = run_beta(config)?;
    let dir = prepare_dir(config)?;
    let rows: Vec<Vec<Cell>> = outcome
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Int(u64::from(r.level)),
                Cell::Float(r.mean_dpsi_sq),
                Cell::Float(r.se_dpsi_sq),
                Cell::Float(r.mean_psi_sq),
                Cell::Float(r.se_psi_sq),
            ]
        })
        .collect();
    write_csv(
        &dir.join("beta.csv"),
        &[
            "level",
            "mean_dpsi_sq",
            "se_dpsi_sq",
            "mean_psi_sq",
            "se_psi_sq",
        ],
        &rows,
    )?;
    sidecar(
        &dir,
        "beta.json",
        config,
        serde_json::json!({
            "beta": outcome.fit.map(|f| f.beta),
            "intercept": outcome.fit.map(|f| f.intercept),
            "fit_range": [config.beta.fit_min, config.beta.fit_max],
            "fit_error": outcome.fit_error,
            "x": outcome.x,
        }),
    )?;
    Ok(outcome)
}

fn gradient_source<'a>(
    problem: &'a AnyProblem,
    config: &RunConfig,
) -> Result<Box<dyn GradientSource + 'a>, Failure> {
    let estimator = config.estimator.resolve()?;
    let general = |e: cso_core::Error| ConfigError::new("estimator.kind", e);
    Ok(match problem {
        AnyProblem::Logistic(p) => Box::new(CsoEstimator::new(p, estimator).map_err(general)?),
        AnyProblem::OracleA(p) => Box::new(CsoEstimator::new(p, estimator).map_err(general)?),
        AnyProblem::AffineToy(p) => Box::new(CsoEstimator::new(p, estimator).map_err(general)?),
        AnyProblem::Iv(p) => Box::new(SquaredLossEstimator::new(p, estimator).map_err(general)?),
        AnyProblem::OracleB(p) | AnyProblem::DeterministicB(p) => {
            Box::new(SquaredLossEstimator::new(p, estimator).map_err(general)?)
        }
    })
}

/// Objective estimate used for traces: Monte Carlo for the experiment
/// models, exact for the finite fixtures.
pub fn evaluate_objective(
    problem: &AnyProblem,
    config: &RunConfig,
    x: &[f64],
    rng: &mut RngStream,
) -> cso_core::Result<f64> {
    match problem {
        AnyProblem::Logistic(m) => {
            objective_mc_logistic(m, x, config.eval.n.unwrap_or(DEFAULT_LOGISTIC_EVAL), rng)
        }
        AnyProblem::Iv(p) => objective_iv(
            &p.0,
            x,
            config.eval.n.unwrap_or(DEFAULT_IV_EVAL_N),
            config.eval.m,
            rng,
        ),
        AnyProblem::OracleA(p) => exact_objective(p, x),
        AnyProblem::AffineToy(p) => exact_objective(p, x),
        AnyProblem::OracleB(p) | AnyProblem::DeterministicB(p) => exact_objective(p, x),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub trace: RunTrace,
    /// Iteration at which the iterate diverged, if it did.
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub cost: f64,
    pub mean_objective: f64,
    pub stderr_objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeOutcome {
    pub cost_per_iteration: f64,
    pub replicates: Vec<ReplicateOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl OptimizeOutcome {
    /// Mean and standard error of the final objective over replicates
    /// that did not diverge.
    pub fn final_objective(&self) -> Option<(f64, f64)> {
        self.summary
            .last()
            .map(|r| (r.mean_objective, r.stderr_objective))
    }
}

fn summarize(replicates: &[ReplicateOutcome]) -> Vec<SummaryRow> {
    let ok: Vec<&RunTrace> = replicates
        .iter()
        .filter(|r| r.diverged_at.is_none())
        .map(|r| &r.trace)
        .collect();
    let Some(first) = ok.first() else {
        return Vec::new();
    };
    let n = ok.len() as f64;
    (0..first.rows.len())
        .map(|i| {
            let values: Vec<f64> = ok.iter().map(|t| t.rows[i].objective).collect();
            let mean = values.iter().sum::<f64>() / n;
            let stderr = if ok.len() > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                cost: first.rows[i].cost_expected,
                mean_objective: mean,
                stderr_objective: stderr,
            }
        })
        .collect()
}

pub fn run_optimize(config: &RunConfig) -> Result<OptimizeOutcome, Failure> {
    config.validate()?;
    let problem = AnyProblem::build(config.problem.kind, config)?;
    let source = gradient_source(&problem, config)?;
    let settings = SgdSettings {
        schedule: config.sgd.schedule(),
        budget: config.sgd.budget,
        eval_every: config.sgd.eval_every,
    };
    let replicates = (0..config.sgd.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateOutcome, Failure> {
            let mut init = key(config.init_seed(), &[TAG_INIT, r]).derive();
            let x0 = ParamVector::new(problem.random_point(config.sgd.x0_sd, &mut init))
                .map_err(numerical)?;
            let run_key = key(config.seed, &[TAG_OPTIMIZE, r]);
            let objective = |x: &[f64], index: u64| {
                let mut rng = run_key.child(1)?.child(index)?.derive();
                evaluate_objective(&problem, config, x, &mut rng)
            };
            match robbins_monro(source.as_ref(), x0, &settings, &run_key, objective) {
                Ok(trace) => Ok(ReplicateOutcome {
                    replicate: r,
                    trace,
                    diverged_at: None,
                }),
                Err(cso_core::Error::Divergence { iteration, trace }) => Ok(ReplicateOutcome {
                    replicate: r,
                    trace: *trace,
                    diverged_at: Some(iteration),
                }),
                Err(e) => Err(numerical(e)),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&replicates);
    Ok(OptimizeOutcome {
        cost_per_iteration: source.cost_per_iteration(),
        replicates,
        summary,
    })
}

#[derive(Serialize, Deserialize)]
pub struct SavedParams {
    pub replicate: u64,
    pub problem: ProblemKind,
    pub hidden: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeOutcome, Failure> {
    let outcome = run_optimize(config)?;
    let dir = prepare_dir(config)?;
    for rep in &outcome.replicates {
        let rows: Vec<Vec<Cell>> = rep
            .trace
            .rows
            .iter()
            .map(|row| {
                vec![
                    Cell::Int(row.iteration),
                    Cell::Float(row.cost_expected),
                    Cell::Int(row.cost_actual),
                    Cell::Float(row.objective),
                ]
            })
            .collect();
        write_csv(
            &dir.join(format!("trace_r{}.csv", rep.replicate)),
            &["iteration", "cost_expected", "cost_actual", "objective"],
            &rows,
        )?;
        write_json(
            &dir.join(format!("params_r{}.json", rep.replicate)),
            &SavedParams {
                replicate: rep.replicate,
                problem: config.problem.kind,
                hidden: config.problem.hidden.clone(),
                params: rep.trace.final_params.clone(),
            },
        )?;
    }
    let rows: Vec<Vec<Cell>> = outcome
        .summary
        .iter()
        .map(|s| {
            vec![
                Cell::Float(s.cost),
                Cell::Float(s.mean_objective),
                Cell::Float(s.stderr_objective),
            ]
        })
        .collect();
    write_csv(
        &dir.join("summary.csv"),
        &["cost", "mean_objective", "stderr_objective"],
        &rows,
    )?;
    let replicates: Vec<_> = outcome
        .replicates
        .iter()
        .map(|r| {
            serde_json::json!({
                "replicate": r.replicate,
                "iterations": r.trace.planned_iterations,
                "final_objective": r.trace.final_objective(),
                "diverged_at": r.diverged_at,
            })
        })
        .collect();
    sidecar(
        &dir,
        "run.json",
        config,
        serde_json::json!({
            "cost_per_iteration": outcome.cost_per_iteration,
            "replicates": replicates,
        }),
    )?;
    if outcome.summary.is_empty() {
        return Err(Failure::Numerical("every replicate diverged".into()));
    }
    Ok(outcome)
}

pub fn run_compare_variance(config: &RunConfig) -> Result<Vec<VarianceReport>, Failure> {
    config.validate()?;
    let kind = config.problem.kind;
    if !kind.is_squared_loss() {
        return Err(ConfigError::new(
            "problem.kind",
            format!("{} is not a squared-loss problem", kind.name()),
        )
        .into());
    }
    let problem = AnyProblem::build(kind, config)?;
    let v = &config.variance;
    let mut rng = key(config.seed, &[TAG_VARIANCE_POINT]).derive();
    let x = point_or_random("variance.x", &v.x, &problem, config.beta.x_sd, &mut rng)?;
    v.m.iter()
        .map(|&m| {
            let k = key(config.seed, &[TAG_VARIANCE, m]);
            match &problem {
                AnyProblem::Iv(p) => variance_compare(&p.0, &x, m, v.reps, &k),
                AnyProblem::OracleB(p) | AnyProblem::DeterministicB(p) => {
                    variance_compare(&p.0, &x, m, v.reps, &k)
                }
                _ => unreachable!("checked above"),
            }
            .map_err(numerical)
        })
        .collect()
}

pub fn cmd_compare_variance(config: &RunConfig) -> Result<Vec<VarianceReport>, Failure> {
    let reports = run_compare_variance(config)?;
    let dir = prepare_dir(config)?;
    let rows: Vec<Vec<Cell>> = reports
        .iter()
        .map(|r| {
            vec![
                Cell::Int(r.m),
                Cell::Float(r.var[0]),
                Cell::Float(r.se[0]),
                Cell::Float(r.var[1]),
                Cell::Float(r.se[1]),
                Cell::Float(r.var[2]),
                Cell::Float(r.se[2]),
                Cell::Bool(r.ordering_pass),
            ]
        })
        .collect();
    write_csv(
        &dir.join("variance.csv"),
        &[
            "M",
            "est1_var",
            "est1_se",
            "est2_var",
            "est2_se",
            "est3_var",
            "est3_se",
            "ordering_pass",
        ],
        &rows,
    )?;
    sidecar(
        &dir,
        "variance.json",
        config,
        serde_json::json!({ "reports": reports }),
    )?;
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheck {
    pub problem: ProblemKind,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckOutcome {
    pub pass: bool,
    pub models: Vec<ModelCheck>,
}

pub fn run_gradcheck(config: &RunConfig) -> Result<GradCheckOutcome, Failure> {
    config.validate()?;
    let g = &config.gradcheck;
    let kinds = g
        .problems
        .clone()
        .unwrap_or_else(|| ProblemKind::ALL.to_vec());
    let mut models = Vec::with_capacity(kinds.len());
    for (i, kind) in kinds.into_iter().enumerate() {
        let problem = AnyProblem::build(kind, config)?;
        let mut rng = key(config.seed, &[TAG_GRADCHECK, i as u64]).derive();
        let draw = |r: &mut RngStream| problem.random_point(1.0, r);
        let report = match &problem {
            AnyProblem::Iv(p) => {
                let net = &p.0.net;
                grad_check_random(p, g.points, g.step, g.tol, &mut rng, draw, |x, _, input| {
                    net.kink_distance(x, *input).is_ok_and(|d| d > KINK_MARGIN)
                })
            }
            other => with_problem!(other, p => grad_check_random(p, g.points, g.step, g.tol, &mut rng, draw, |_, _, _| true)),
        }
        .map_err(numerical)?;
        models.push(ModelCheck {
            problem: kind,
            report,
        });
    }
    Ok(GradCheckOutcome {
        pass: models.iter().all(|m| m.report.pass),
        models,
    })
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<GradCheckOutcome, Failure> {
    let outcome = run_gradcheck(config)?;
    let dir = prepare_dir(config)?;
    sidecar(&dir, "gradcheck.json", config, &outcome)?;
    if !outcome.pass {
        let failed: Vec<String> = outcome
            .models
            .iter()
            .filter(|m| !m.report.pass)
            .map(|m| {
                let w = m.report.worst.expect("a failing report has a worst entry");
                format!(
                    "{} coordinate {} ({:?}): analytic {} numeric {} rel_err {:.3e}",
                    m.problem.name(),
                    w.coordinate,
                    w.map,
                    w.analytic,
                    w.numeric,
                    w.rel_err
                )
            })
            .collect();
        return Err(Failure::Numerical(format!(
            "gradient check failed: {}",
            failed.join("; ")
        )));
    }
    Ok(outcome)
}

pub struct IvFitOutcome {
    pub grid: Vec<(f64, f64, f64)>,
    pub scatter: Vec<(f64, f64)>,
}

pub fn run_iv_fit(config: &RunConfig) -> Result<IvFitOutcome, Failure> {
    config.validate()?;
    if config.problem.kind != ProblemKind::Iv {
        return Err(ConfigError::new("problem.kind", "iv-fit needs the iv problem").into());
    }
    let AnyProblem::Iv(problem) = AnyProblem::build(ProblemKind::Iv, config)? else {
        unreachable!("built the iv problem");
    };
    let path = config
        .iv_fit
        .params
        .clone()
        .unwrap_or_else(|| config.output.dir.join("params_r0.json"));
    let text = fs::read_to_string(&path).map_err(|e| {
        ConfigError::new(
            "iv_fit.params",
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    let saved: SavedParams = serde_json::from_str(&text).map_err(|e| {
        ConfigError::new(
            "iv_fit.params",
            format!("malformed {}: {e}", path.display()),
        )
    })?;
    let net = &problem.0.net;
    let truth = problem.0.process.truth();
    if saved.params.len() != net.param_count() {
        return Err(ConfigError::new(
            "iv_fit.params",
            format!(
                "{} holds {} parameters, the network needs {}",
                path.display(),
                saved.params.len(),
                net.param_count()
            ),
        )
        .into());
    }
    let n = config.iv_fit.grid;
    let grid = (0..n)
        .map(|i| {
            let x = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
            let fitted = net.forward(&saved.params, x).map_err(numerical)?;
            Ok((x, truth.eval(x), fitted))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let mut rng = key(config.seed, &[TAG_SCATTER]).derive();
    let scatter = (0..config.iv_fit.scatter)
        .map(|_| {
            let s = problem.0.process.iv_sample(&mut rng);
            (s.x, s.y)
        })
        .collect();
    Ok(IvFitOutcome { grid, scatter })
}

pub fn cmd_iv_fit(config: &RunConfig) -> Result<IvFitOutcome, Failure> {
    let outcome = run_iv_fit(config)?;
    let dir = prepare_dir(config)?;
    let rows: Vec<Vec<Cell>> = outcome
        .grid
        .iter()
        .map(|&(x, f, g)| vec![Cell::Float(x), Cell::Float(f), Cell::Float(g)])
        .collect();
    write_csv(&dir.join("fit.csv"), &["x", "truth_f", "fitted_g"], &rows)?;
    let rows: Vec<Vec<Cell>> = outcome
        .scatter
        .iter()
        .map(|&(x, y)| vec![Cell::Float(x), Cell::Float(y)])
        .collect();
    write_csv(&dir.join("scatter.csv"), &["x", "y"], &rows)?;
    Ok(outcome)
}
