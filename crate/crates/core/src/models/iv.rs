use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Mlp;
use crate::problem::NestedSampler;
use crate::rng::RngStream;
use crate::squared_loss::SquaredLossModel;

const INSTRUMENT_HALF_WIDTH: f64 = 3.0;

/// Ground-truth structural function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Sin,
    Identity,
    Abs,
    /// `1` on the closed half-line `x ≥ 0`.
    Step,
}

impl Truth {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Truth::Sin => x.sin(),
            Truth::Identity => x,
            Truth::Abs => x.abs(),
            Truth::Step => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Variances of the confounder `e` and of the independent noises `γ`, `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvNoise {
    pub e_var: f64,
    pub gamma_var: f64,
    pub delta_var: f64,
}

impl Default for IvNoise {
    fn default() -> Self {
        Self {
            e_var: 1.0,
            gamma_var: 0.1,
            delta_var: 0.1,
        }
    }
}

/// One full draw of the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvSample {
    pub x: f64,
    pub y: f64,
    pub z: [f64; 2],
}

/// Outer variable `(Y, Z)`; the realized `X` is not retained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvOuter {
    pub y: f64,
    pub z: [f64; 2],
}

/// `Z ~ U([-3, 3]²)`, `X = (Z₁ + e)/2 + γ`, `Y = f(X) + e + δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvDataProcess {
    truth: Truth,
    noise: IvNoise,
    sd_e: f64,
    sd_gamma: f64,
    sd_delta: f64,
}

fn checked_sd(name: &str, var: f64) -> Result<f64> {
    if !(var >= 0.0) || !var.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a finite non-negative variance, got {var}"
        )));
    }
    Ok(var.sqrt())
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(a + h * i as f64);
    }
    total * h / 3.0
}

impl IvDataProcess {
    pub fn new(truth: Truth, noise: IvNoise) -> Result<Self> {
        Ok(Self {
            truth,
            noise,
            sd_e: checked_sd("e variance", noise.e_var)?,
            sd_gamma: checked_sd("gamma variance", noise.gamma_var)?,
            sd_delta: checked_sd("delta variance", noise.delta_var)?,
        })
    }

    pub fn truth(&self) -> Truth {
        self.truth
    }

    pub fn noise(&self) -> IvNoise {
        self.noise
    }

    fn instrument(&self, rng: &mut RngStream) -> [f64; 2] {
        [
            rng.uniform_in(-INSTRUMENT_HALF_WIDTH, INSTRUMENT_HALF_WIDTH),
            rng.uniform_in(-INSTRUMENT_HALF_WIDTH, INSTRUMENT_HALF_WIDTH),
        ]
    }

    pub fn iv_sample(&self, rng: &mut RngStream) -> IvSample {
        let z = self.instrument(rng);
        let e = self.sd_e * rng.standard_normal();
        let gamma = self.sd_gamma * rng.standard_normal();
        let delta = self.sd_delta * rng.standard_normal();
        let x = (z[0] + e) / 2.0 + gamma;
        let y = self.truth.eval(x) + e + delta;
        IvSample { x, y, z }
    }

    /// Fresh `X | Z`, independent of the noise that produced any `Y`.
    pub fn sample_x_given_z(&self, z: &[f64; 2], rng: &mut RngStream) -> f64 {
        let e = self.sd_e * rng.standard_normal();
        let gamma = self.sd_gamma * rng.standard_normal();
        (z[0] + e) / 2.0 + gamma
    }

    /// `E_Z[Var(Y | Z)]`, the infimum of the IV objective over all
    /// predictors, by quadrature.
    ///
    /// Given `Z`, `X ~ N(Z₁/2, s²)` with `s² = σ_e²/4 + σ_γ²` and
    /// `E[e | X, Z] = c (X - Z₁/2)` with `c = σ_e²/(2 s²)`, so
    /// `Var(f(X) + e | Z) = E f² + 2c E[f(X)(X - μ)] + σ_e² - (E f)²`.
    pub fn noise_floor(&self) -> f64 {
        let s2 = self.noise.e_var / 4.0 + self.noise.gamma_var;
        let conditional_var = |z1: f64| -> f64 {
            let mu = z1 / 2.0;
            if s2 == 0.0 {
                return 0.0;
            }
            let s = s2.sqrt();
            let c = self.noise.e_var / (2.0 * s2);
            let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
            // integrate over t = (X - μ)/s, split at the kink X = 0
            let kink = (-mu / s).clamp(-12.0, 12.0);
            let moments = |g: &dyn Fn(f64) -> f64| -> f64 {
                simpson(|t| g(t) * density(t), -12.0, kink, 2000)
                    + simpson(|t| g(t) * density(t), kink, 12.0, 2000)
            };
            let f = |t: f64| self.truth.eval(mu + s * t);
            let ef = moments(&f);
            let ef2 = moments(&|t| f(t) * f(t));
            let efx = moments(&|t| f(t) * s * t);
            ef2 + 2.0 * c * efx + self.noise.e_var - ef * ef
        };
        let width = 2.0 * INSTRUMENT_HALF_WIDTH;
        simpson(
            conditional_var,
            -INSTRUMENT_HALF_WIDTH,
            INSTRUMENT_HALF_WIDTH,
            400,
        ) / width
            + self.noise.delta_var
    }
}

/// IV regression as a squared-loss problem: `u = Y`, `g = net(x; X)` with
/// inner law `X | Z`.
#[derive(Debug, Clone)]
pub struct IvProblem {
    pub process: IvDataProcess,
    pub net: Mlp,
}

impl IvProblem {
    pub fn new(process: IvDataProcess, net: Mlp) -> Self {
        Self { process, net }
    }
}

impl NestedSampler for IvProblem {
    type Outer = IvOuter;
    type Inner = f64;

    fn sample_outer(&self, rng: &mut RngStream) -> IvOuter {
        let s = self.process.iv_sample(rng);
        IvOuter { y: s.y, z: s.z }
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &IvOuter) -> f64 {
        self.process.sample_x_given_z(&outer.z, rng)
    }
}

impl SquaredLossModel for IvProblem {
    fn param_dim(&self) -> usize {
        self.net.param_count()
    }

    fn u_eval(&self, outer: &IvOuter) -> f64 {
        outer.y
    }

    fn g_value(&self, x: &[f64], _outer: &IvOuter, inner: &f64) -> f64 {
        self.net.forward_unchecked(x, *inner)
    }

    fn g_value_and_grad(&self, x: &[f64], _outer: &IvOuter, inner: &f64, grad: &mut [f64]) -> f64 {
        self.net.backward_unchecked(x, *inner, grad)
    }
}
