use std::fmt;
use std::path::{Path, PathBuf};

use cso_core::estimators::{LevelDistribution, MlmcSchedule};
use cso_core::models::{IvNoise, Truth};
use cso_core::optimizer::{EstimatorConfig, StepSchedule};
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Logistic,
    Iv,
    OracleA,
    OracleB,
    AffineToy,
    DeterministicB,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::Logistic,
        ProblemKind::Iv,
        ProblemKind::OracleA,
        ProblemKind::OracleB,
        ProblemKind::AffineToy,
        ProblemKind::DeterministicB,
    ];

    pub fn is_squared_loss(self) -> bool {
        matches!(
            self,
            ProblemKind::Iv | ProblemKind::OracleB | ProblemKind::DeterministicB
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Logistic => "logistic",
            ProblemKind::Iv => "iv",
            ProblemKind::OracleA => "oracle-a",
            ProblemKind::OracleB => "oracle-b",
            ProblemKind::AffineToy => "affine-toy",
            ProblemKind::DeterministicB => "deterministic-b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Logistic dimension.
    pub dim: usize,
    pub sigma_xi2: f64,
    pub sigma_eta2: f64,
    /// IV ground truth and noise variances.
    pub truth: Truth,
    pub e_var: f64,
    pub gamma_var: f64,
    pub delta_var: f64,
    /// Hidden layer widths of the IV network.
    pub hidden: Vec<usize>,
    /// Seed for initial points; the master seed when absent.
    pub init_seed: Option<u64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        let noise = IvNoise::default();
        Self {
            kind: ProblemKind::Logistic,
            dim: 10,
            sigma_xi2: 1.0,
            sigma_eta2: 1.0,
            truth: Truth::Sin,
            e_var: noise.e_var,
            gamma_var: noise.gamma_var,
            delta_var: noise.delta_var,
            hidden: vec![16, 16],
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    NestedMc,
    UnbiasedMlmc,
    FixedLevelMlmc,
    #[serde(rename = "squared-loss-1")]
    SquaredLoss1,
    #[serde(rename = "squared-loss-2")]
    SquaredLoss2,
    #[serde(rename = "squared-loss-3")]
    SquaredLoss3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub m: u64,
    pub n: u64,
    pub tau: f64,
    pub level_cap: u32,
    /// Per-level counts for the fixed-level estimator.
    pub schedule: Vec<u64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::UnbiasedMlmc,
            m: 1,
            n: 1,
            tau: cso_core::estimators::DEFAULT_TAU,
            level_cap: cso_core::estimators::DEFAULT_LEVEL_CAP,
            schedule: vec![1],
        }
    }
}

impl EstimatorSection {
    pub fn resolve(&self) -> Result<EstimatorConfig, ConfigError> {
        let (m, n) = (self.m, self.n);
        if n == 0 {
            return Err(ConfigError::new("estimator.n", "must be at least 1"));
        }
        let needs_m = |min: u64| {
            if m < min {
                Err(ConfigError::new(
                    "estimator.m",
                    format!("must be at least {min} for {:?}, got {m}", self.kind),
                ))
            } else {
                Ok(())
            }
        };
        Ok(match self.kind {
            EstimatorKind::NestedMc => {
                needs_m(1)?;
                EstimatorConfig::NestedMc { m, n }
            }
            EstimatorKind::SquaredLoss1 => {
                needs_m(1)?;
                EstimatorConfig::SquaredLoss1 { m, n }
            }
            EstimatorKind::SquaredLoss2 => {
                needs_m(1)?;
                EstimatorConfig::SquaredLoss2 { m, n }
            }
            EstimatorKind::SquaredLoss3 => {
                needs_m(2)?;
                EstimatorConfig::SquaredLoss3 { m, n }
            }
            EstimatorKind::UnbiasedMlmc => {
                let dist = LevelDistribution::new(self.tau, self.level_cap).map_err(|e| {
                    let field = if self.tau > 1.0 {
                        "estimator.level_cap"
                    } else {
                        "estimator.tau"
                    };
                    ConfigError::new(field, e)
                })?;
                EstimatorConfig::UnbiasedMlmc { n, dist }
            }
            EstimatorKind::FixedLevelMlmc => {
                let schedule = MlmcSchedule::new(self.schedule.clone())
                    .map_err(|e| ConfigError::new("estimator.schedule", e))?;
                EstimatorConfig::FixedLevelMlmc { schedule }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Constant,
    InverseT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSection {
    pub step: StepKind,
    pub gamma0: f64,
    pub budget: f64,
    pub eval_every: Option<u64>,
    pub replicates: u64,
    /// Standard deviation of Gaussian initial points (non-network problems).
    pub x0_sd: f64,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self {
            step: StepKind::Constant,
            gamma0: 1e-4,
            budget: 1e6,
            eval_every: None,
            replicates: 10,
            x0_sd: 1e-2,
        }
    }
}

impl SgdSection {
    pub fn schedule(&self) -> StepSchedule {
        match self.step {
            StepKind::Constant => StepSchedule::Constant {
                gamma0: self.gamma0,
            },
            StepKind::InverseT => StepSchedule::InverseT {
                gamma0: self.gamma0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Outer sample size of objective estimates; problem-specific default.
    pub n: Option<u64>,
    /// Inner sample size of the IV objective estimate.
    pub m: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n: None, m: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSection {
    pub level_min: u32,
    pub level_max: u32,
    pub reps: u64,
    pub fit_min: u32,
    pub fit_max: u32,
    /// Evaluation point; drawn at random when absent.
    pub x: Option<Vec<f64>>,
    pub x_sd: f64,
}

impl Default for BetaSection {
    fn default() -> Self {
        Self {
            level_min: 0,
            level_max: 8,
            reps: 10_000,
            fit_min: 1,
            fit_max: 8,
            x: None,
            x_sd: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub m: Vec<u64>,
    pub reps: u64,
    pub x: Option<Vec<f64>>,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self {
            m: vec![1, 2, 4],
            reps: 100_000,
            x: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Problems to check; every shipped problem when absent.
    pub problems: Option<Vec<ProblemKind>>,
    pub points: u64,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            problems: None,
            points: 100,
            step: 1e-5,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvFitSection {
    /// Trained parameters; `<output>/params_r0.json` when absent.
    pub params: Option<PathBuf>,
    pub grid: usize,
    pub scatter: usize,
}

impl Default for IvFitSection {
    fn default() -> Self {
        Self {
            params: None,
            grid: 601,
            scatter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemSection,
    pub estimator: EstimatorSection,
    pub sgd: SgdSection,
    pub eval: EvalSection,
    pub beta: BetaSection,
    pub variance: VarianceSection,
    pub gradcheck: GradcheckSection,
    pub iv_fit: IvFitSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            problem: ProblemSection::default(),
            estimator: EstimatorSection::default(),
            sgd: SgdSection::default(),
            eval: EvalSection::default(),
            beta: BetaSection::default(),
            variance: VarianceSection::default(),
            gradcheck: GradcheckSection::default(),
            iv_fit: IvFitSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn positive_f64(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be finite and positive, got {v}"),
        ))
    }
}

fn non_negative_f64(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be finite and non-negative, got {v}"),
        ))
    }
}

fn at_least(field: &str, v: u64, min: u64) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".to_string());
            ConfigError::new(location, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn noise(&self) -> IvNoise {
        IvNoise {
            e_var: self.problem.e_var,
            gamma_var: self.problem.gamma_var,
            delta_var: self.problem.delta_var,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.problem.init_seed.unwrap_or(self.seed)
    }

    /// Checks everything every command relies on.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        if p.dim == 0 {
            return Err(ConfigError::new("problem.dim", "must be at least 1"));
        }
        positive_f64("problem.sigma_xi2", p.sigma_xi2)?;
        positive_f64("problem.sigma_eta2", p.sigma_eta2)?;
        non_negative_f64("problem.e_var", p.e_var)?;
        non_negative_f64("problem.gamma_var", p.gamma_var)?;
        non_negative_f64("problem.delta_var", p.delta_var)?;
        if p.hidden.contains(&0) {
            return Err(ConfigError::new(
                "problem.hidden",
                "widths must be positive",
            ));
        }
        self.estimator.resolve()?;
        positive_f64("sgd.gamma0", self.sgd.gamma0)?;
        positive_f64("sgd.budget", self.sgd.budget)?;
        if let Some(e) = self.sgd.eval_every {
            at_least("sgd.eval_every", e, 1)?;
        }
        at_least("sgd.replicates", self.sgd.replicates, 1)?;
        non_negative_f64("sgd.x0_sd", self.sgd.x0_sd)?;
        if let Some(n) = self.eval.n {
            at_least("eval.n", n, 1)?;
        }
        at_least("eval.m", self.eval.m, 2)?;
        let b = &self.beta;
        if b.level_min > b.level_max {
            return Err(ConfigError::new(
                "beta.level_max",
                format!("must be at least beta.level_min = {}", b.level_min),
            ));
        }
        if b.level_max > 30 {
            return Err(ConfigError::new("beta.level_max", "must be at most 30"));
        }
        at_least("beta.reps", b.reps, 2)?;
        if b.fit_min < b.level_min || b.fit_max > b.level_max || b.fit_max <= b.fit_min {
            return Err(ConfigError::new(
                "beta.fit_min",
                format!(
                    "fit range {}..={} must contain two levels within {}..={}",
                    b.fit_min, b.fit_max, b.level_min, b.level_max
                ),
            ));
        }
        non_negative_f64("beta.x_sd", b.x_sd)?;
        let v = &self.variance;
        if v.m.is_empty() || v.m.contains(&0) {
            return Err(ConfigError::new("variance.m", "needs positive batch sizes"));
        }
        at_least("variance.reps", v.reps, 1_000)?;
        at_least("gradcheck.points", self.gradcheck.points, 1)?;
        positive_f64("gradcheck.step", self.gradcheck.step)?;
        positive_f64("gradcheck.tol", self.gradcheck.tol)?;
        if self.iv_fit.grid < 2 {
            return Err(ConfigError::new("iv_fit.grid", "needs at least 2 points"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_and_sectioned_keys_agree() {
        let a = RunConfig::parse("problem.kind = \"iv\"\nsgd.budget = 6000\n").unwrap();
        let b = RunConfig::parse("[problem]\nkind = \"iv\"\n[sgd]\nbudget = 6000.0\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.problem.kind, ProblemKind::Iv);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let err = RunConfig::parse("seed = 3\n\n[sgd]\nbudgett = 5\n").unwrap_err();
        assert_eq!(err.field, "line 4");
        assert!(err.message.contains("budgett"));
    }

    #[test]
    fn estimator_errors_name_fields() {
        let field = |text: &str| {
            RunConfig::parse(text)
                .unwrap()
                .validate()
                .unwrap_err()
                .field
        };
        assert_eq!(
            field("estimator.kind = \"squared-loss-3\"\nestimator.m = 1"),
            "estimator.m"
        );
        assert_eq!(field("estimator.tau = 1.0"), "estimator.tau");
        assert_eq!(field("sgd.budget = 0"), "sgd.budget");
        assert_eq!(
            field("estimator.kind = \"fixed-level-mlmc\"\nestimator.schedule = [2, 0]"),
            "estimator.schedule"
        );
    }
}
