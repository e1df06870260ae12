use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{sample_inner, CsoProblem, InnerBatch, NestedSampler};
use crate::rng::RngStream;

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + e^-t)` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Outer draw `ξ = (a, b)`: feature vector and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticOuter {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Invariant logistic regression.
///
/// `a ~ N(0, σ_ξ² I_d)`, `b = 1` if `aᵀx* > 0` else `-1`, and the inner
/// observation is `η | ξ ~ N(a, σ_η² I_d)`. The problem uses `g = ηᵀx`
/// and `f(v) = log(1 + exp(-b v))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticInvariantModel {
    sigma_xi: f64,
    sigma_eta: f64,
    x_star: Vec<f64>,
}

impl LogisticInvariantModel {
    pub fn new(sigma_xi2: f64, sigma_eta2: f64, x_star: Vec<f64>) -> Result<Self> {
        for (name, v) in [("sigma_xi2", sigma_xi2), ("sigma_eta2", sigma_eta2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if x_star.is_empty() || x_star.iter().all(|&c| c == 0.0) {
            return Err(Error::InvalidArgument("x* must be non-zero".into()));
        }
        if x_star.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("x* must be finite".into()));
        }
        Ok(Self {
            sigma_xi: sigma_xi2.sqrt(),
            sigma_eta: sigma_eta2.sqrt(),
            x_star,
        })
    }

    /// Unit variances and `x* = (1, 2, ..., d)`.
    pub fn with_dim(d: usize) -> Result<Self> {
        Self::new(1.0, 1.0, (1..=d).map(|i| i as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    /// Label rule; the measure-zero tie `aᵀx* = 0` gets `-1`.
    pub fn label(&self, a: &[f64]) -> f64 {
        let margin: f64 = a.iter().zip(&self.x_star).map(|(ai, si)| ai * si).sum();
        if margin > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn logistic_outer(&self, rng: &mut RngStream) -> LogisticOuter {
        let a: Vec<f64> = (0..self.dim())
            .map(|_| self.sigma_xi * rng.standard_normal())
            .collect();
        let b = self.label(&a);
        LogisticOuter { a, b }
    }

    pub fn logistic_inner(
        &self,
        outer: &LogisticOuter,
        m: usize,
        rng: &mut RngStream,
    ) -> Result<InnerBatch<LogisticOuter, Vec<f64>>> {
        sample_inner(self, rng, outer, m)
    }
}

impl Default for LogisticInvariantModel {
    fn default() -> Self {
        Self::with_dim(10).expect("default model is valid")
    }
}

impl NestedSampler for LogisticInvariantModel {
    type Outer = LogisticOuter;
    type Inner = Vec<f64>;

    fn sample_outer(&self, rng: &mut RngStream) -> LogisticOuter {
        self.logistic_outer(rng)
    }

    fn sample_inner_one(&self, rng: &mut RngStream, outer: &LogisticOuter) -> Vec<f64> {
        outer
            .a
            .iter()
            .map(|ai| ai + self.sigma_eta * rng.standard_normal())
            .collect()
    }
}

impl CsoProblem for LogisticInvariantModel {
    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn value_dim(&self) -> usize {
        1
    }

    fn g_into(&self, x: &[f64], _outer: &LogisticOuter, inner: &Vec<f64>, out: &mut [f64]) {
        out[0] = inner.iter().zip(x).map(|(e, xi)| e * xi).sum();
    }

    fn g_jacobian_into(
        &self,
        _x: &[f64],
        _outer: &LogisticOuter,
        inner: &Vec<f64>,
        jac: &mut [f64],
    ) {
        jac.copy_from_slice(inner);
    }

    fn f_value(&self, outer: &LogisticOuter, v: &[f64]) -> f64 {
        softplus(-outer.b * v[0])
    }

    fn f_grad_into(&self, outer: &LogisticOuter, v: &[f64], out: &mut [f64]) {
        out[0] = -outer.b * sigmoid(-outer.b * v[0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{f_eval, f_grad, g_eval, g_grad};
    use crate::rng::StreamKey;

    #[test]
    fn softplus_is_stable_and_accurate() {
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        for t in [-20.0, -1.0, 0.5, 3.0, 30.0] {
            let naive = (1.0 + f64::exp(t)).ln();
            assert!((softplus(t) - naive).abs() <= 1e-14 * naive.max(1.0));
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) == 1.0);
    }

    #[test]
    fn outer_draw_shape_and_label() {
        let m = LogisticInvariantModel::default();
        let mut rng = StreamKey::new(1).derive();
        let o = m.logistic_outer(&mut rng);
        assert_eq!(o.a.len(), 10);
        assert!(o.b == 1.0 || o.b == -1.0);
        let margin: f64 = o.a.iter().zip(m.x_star()).map(|(a, s)| a * s).sum();
        assert_eq!(o.b, if margin > 0.0 { 1.0 } else { -1.0 });
    }

    #[test]
    fn label_ignores_orthogonal_component() {
        let m = LogisticInvariantModel::with_dim(3).unwrap();
        // (2, -1, 0) is orthogonal to x* = (1, 2, 3)
        let a = [0.3, 0.1, 0.2];
        let shifted: Vec<f64> = a
            .iter()
            .zip([2.0, -1.0, 0.0])
            .map(|(ai, oi)| ai + 5.0 * oi)
            .collect();
        assert_eq!(m.label(&a), m.label(&shifted));
        assert_eq!(m.label(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(m.label(&[-1.0, 0.0, 0.0]), -1.0);
        assert_eq!(m.label(&[0.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn labels_are_balanced() {
        let m = LogisticInvariantModel::default();
        let mut rng = StreamKey::new(2).derive();
        let n = 1_000_000;
        let pos = (0..n)
            .filter(|_| m.logistic_outer(&mut rng).b > 0.0)
            .count();
        let f = pos as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.002, "{f}");
    }

    #[test]
    fn inner_mean_is_outer_feature() {
        let m = LogisticInvariantModel::default();
        let mut rng = StreamKey::new(3).derive();
        let o = m.logistic_outer(&mut rng);
        let batch = m.logistic_inner(&o, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.samples.iter().all(|e| e.len() == 10));
        let n = 1_000_000;
        let mut sums = [0.0; 10];
        for _ in 0..n {
            let e = m.sample_inner_one(&mut rng, &o);
            for (s, v) in sums.iter_mut().zip(&e) {
                *s += v;
            }
        }
        for (s, a) in sums.iter().zip(&o.a) {
            assert!((s / n as f64 - a).abs() < 4.0 / (n as f64).sqrt());
        }
        assert!(m.logistic_inner(&o, 0, &mut rng).is_err());
    }

    #[test]
    fn vanishing_inner_noise_collapses_onto_feature() {
        let m = LogisticInvariantModel::new(1.0, 1e-30, vec![1.0, 2.0]).unwrap();
        let mut rng = StreamKey::new(4).derive();
        let o = m.logistic_outer(&mut rng);
        let e = m.sample_inner_one(&mut rng, &o);
        for (ei, ai) in e.iter().zip(&o.a) {
            assert!((ei - ai).abs() < 1e-12);
        }
    }

    #[test]
    fn maps_at_known_points() {
        let m = LogisticInvariantModel::with_dim(2).unwrap();
        let o = LogisticOuter {
            a: vec![0.0, 0.0],
            b: 1.0,
        };
        let eta = vec![1.5, -2.0];
        assert_eq!(g_eval(&m, &[2.0, 1.0], &o, &eta).unwrap(), vec![1.0]);
        assert_eq!(g_grad(&m, &[2.0, 1.0], &o, &eta).unwrap().data, eta);
        assert_eq!(f_eval(&m, &o, &[0.0]).unwrap(), std::f64::consts::LN_2);
        assert_eq!(f_grad(&m, &o, &[0.0]).unwrap(), vec![-0.5]);
        let neg = LogisticOuter { b: -1.0, ..o };
        assert_eq!(f_grad(&m, &neg, &[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(LogisticInvariantModel::new(0.0, 1.0, vec![1.0]).is_err());
        assert!(LogisticInvariantModel::new(1.0, -1.0, vec![1.0]).is_err());
        assert!(LogisticInvariantModel::new(1.0, 1.0, vec![0.0, 0.0]).is_err());
        assert!(LogisticInvariantModel::new(1.0, 1.0, vec![]).is_err());
    }
}
