use cso_core::models::{IvDataProcess, IvProblem, LogisticInvariantModel, Mlp};
use cso_core::problem::{AffineLoss, DiscreteCsoProblem};
use cso_core::rng::RngStream;
use cso_core::squared_loss::{DiscreteSquaredLoss, SquaredLoss};

use crate::config::{ConfigError, ProblemKind, RunConfig};

/// Every problem the harness can run.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Logistic(LogisticInvariantModel),
    Iv(SquaredLoss<IvProblem>),
    OracleA(DiscreteCsoProblem),
    OracleB(SquaredLoss<DiscreteSquaredLoss>),
    AffineToy(AffineLoss<DiscreteCsoProblem>),
    DeterministicB(SquaredLoss<DiscreteSquaredLoss>),
}

/// Applies `$body` to the concrete problem behind an [`AnyProblem`].
#[macro_export]
macro_rules! with_problem {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            $crate::problems::AnyProblem::Logistic($p) => $body,
            $crate::problems::AnyProblem::Iv($p) => $body,
            $crate::problems::AnyProblem::OracleA($p) => $body,
            $crate::problems::AnyProblem::OracleB($p) => $body,
            $crate::problems::AnyProblem::AffineToy($p) => $body,
            $crate::problems::AnyProblem::DeterministicB($p) => $body,
        }
    };
}

impl AnyProblem {
    pub fn build(kind: ProblemKind, config: &RunConfig) -> Result<Self, ConfigError> {
        let p = &config.problem;
        Ok(match kind {
            ProblemKind::Logistic => {
                let x_star = (1..=p.dim).map(|i| i as f64).collect();
                AnyProblem::Logistic(
                    LogisticInvariantModel::new(p.sigma_xi2, p.sigma_eta2, x_star)
                        .map_err(|e| ConfigError::new("problem", e))?,
                )
            }
            ProblemKind::Iv => {
                let process = IvDataProcess::new(p.truth, config.noise())
                    .map_err(|e| ConfigError::new("problem", e))?;
                let net = Mlp::new(&p.hidden).map_err(|e| ConfigError::new("problem.hidden", e))?;
                AnyProblem::Iv(SquaredLoss(IvProblem::new(process, net)))
            }
            ProblemKind::OracleA => AnyProblem::OracleA(DiscreteCsoProblem::oracle_a()),
            ProblemKind::OracleB => {
                AnyProblem::OracleB(SquaredLoss(DiscreteSquaredLoss::oracle_b()))
            }
            ProblemKind::AffineToy => AnyProblem::AffineToy(
                AffineLoss::new(DiscreteCsoProblem::oracle_a(), vec![1.5], -0.25)
                    .expect("fixed affine toy is valid"),
            ),
            ProblemKind::DeterministicB => {
                AnyProblem::DeterministicB(SquaredLoss(DiscreteSquaredLoss::deterministic_inner()))
            }
        })
    }

    pub fn kind(&self) -> ProblemKind {
        match self {
            AnyProblem::Logistic(_) => ProblemKind::Logistic,
            AnyProblem::Iv(_) => ProblemKind::Iv,
            AnyProblem::OracleA(_) => ProblemKind::OracleA,
            AnyProblem::OracleB(_) => ProblemKind::OracleB,
            AnyProblem::AffineToy(_) => ProblemKind::AffineToy,
            AnyProblem::DeterministicB(_) => ProblemKind::DeterministicB,
        }
    }

    pub fn dim(&self) -> usize {
        use cso_core::problem::CsoProblem;
        with_problem!(self, p => p.param_dim())
    }

    /// A random point: network initialization for the IV model, otherwise
    /// Gaussian coordinates with standard deviation `sd`.
    pub fn random_point(&self, sd: f64, rng: &mut RngStream) -> Vec<f64> {
        match self {
            AnyProblem::Iv(p) => p.0.net.init(rng).into_inner(),
            _ => (0..self.dim())
                .map(|_| sd * rng.standard_normal())
                .collect(),
        }
    }

    /// The default evaluation point of the diagnostics: a random point for
    /// the experiment models and `x = 1` for the one-dimensional fixtures.
    pub fn diagnostic_point(&self, sd: f64, rng: &mut RngStream) -> Vec<f64> {
        match self {
            AnyProblem::Logistic(_) | AnyProblem::Iv(_) => self.random_point(sd, rng),
            _ => vec![1.0; self.dim()],
        }
    }
}
