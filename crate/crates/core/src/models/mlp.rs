use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::ParamVector;
use crate::rng::RngStream;

/// Scalar-in, scalar-out feed-forward network with rectifier activations
/// between hidden layers and a linear output.
///
/// Parameters are flattened layer by layer: the `n_out × n_in` weight
/// matrix in row-major order, then the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    /// `1 → hidden[0] → ... → 1`.
    pub fn new(hidden: &[usize]) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden layer widths must be positive".into(),
            ));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(1);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, n_in, n_out)
        self.sizes.windows(2).scan(0usize, |offset, w| {
            let start = *offset;
            *offset += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    /// Pre-activations of every layer, the last being the output.
    fn preactivations(&self, params: &[f64], input: f64) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut act = vec![input];
        let mut zs = Vec::with_capacity(n_layers);
        for (l, (offset, n_in, n_out)) in self.layers().enumerate() {
            let (w, b) = params[offset..offset + n_in * n_out + n_out].split_at(n_in * n_out);
            let z: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bi)| bi + row.iter().zip(&act).map(|(wij, aj)| wij * aj).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                act = z.iter().map(|&zi| zi.max(0.0)).collect();
            }
            zs.push(z);
        }
        zs
    }

    pub fn forward(&self, params: &[f64], input: f64) -> Result<f64> {
        check_dim("network parameters", self.param_count(), params.len())?;
        Ok(self.forward_unchecked(params, input))
    }

    pub(crate) fn forward_unchecked(&self, params: &[f64], input: f64) -> f64 {
        self.preactivations(params, input)
            .last()
            .expect("at least one layer")[0]
    }

    /// Output and its gradient with respect to all parameters. The
    /// rectifier derivative at 0 is taken as 0.
    pub fn backward(&self, params: &[f64], input: f64, grad: &mut [f64]) -> Result<f64> {
        check_dim("network parameters", self.param_count(), params.len())?;
        check_dim("gradient buffer", self.param_count(), grad.len())?;
        Ok(self.backward_unchecked(params, input, grad))
    }

    pub(crate) fn backward_unchecked(&self, params: &[f64], input: f64, grad: &mut [f64]) -> f64 {
        let zs = self.preactivations(params, input);
        let layers: Vec<_> = self.layers().collect();
        let mut delta = vec![1.0];
        for l in (0..layers.len()).rev() {
            let (offset, n_in, n_out) = layers[l];
            let prev: Vec<f64> = if l == 0 {
                vec![input]
            } else {
                zs[l - 1].iter().map(|&z| z.max(0.0)).collect()
            };
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (i, di) in delta.iter().enumerate() {
                for (j, aj) in prev.iter().enumerate() {
                    gw[i * n_in + j] = di * aj;
                }
                gb[i] = *di;
            }
            if l > 0 {
                let w = &params[offset..offset + n_in * n_out];
                delta = (0..n_in)
                    .map(|j| {
                        if zs[l - 1][j] > 0.0 {
                            delta
                                .iter()
                                .enumerate()
                                .map(|(i, di)| w[i * n_in + j] * di)
                                .sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        zs.last().expect("at least one layer")[0]
    }

    /// Distance of the nearest hidden pre-activation from the rectifier
    /// kink; `+∞` when there are no hidden layers.
    pub fn kink_distance(&self, params: &[f64], input: f64) -> Result<f64> {
        check_dim("network parameters", self.param_count(), params.len())?;
        let zs = self.preactivations(params, input);
        Ok(zs[..zs.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    /// Gaussian weights with fan-in scaling (gain √2 into rectifier layers,
    /// 1 into the linear output) and zero biases.
    pub fn init(&self, rng: &mut RngStream) -> ParamVector {
        let n_layers = self.sizes.len() - 1;
        let mut params = vec![0.0; self.param_count()];
        for (l, (offset, n_in, n_out)) in self.layers().enumerate() {
            let gain = if l + 1 < n_layers { 2.0 } else { 1.0 };
            let sd = (gain / n_in as f64).sqrt();
            for w in &mut params[offset..offset + n_in * n_out] {
                *w = sd * rng.standard_normal();
            }
        }
        ParamVector::new(params).expect("finite initialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn parameter_count() {
        assert_eq!(Mlp::new(&[50, 50]).unwrap().param_count(), 100 + 2550 + 51);
        assert_eq!(Mlp::new(&[16, 16]).unwrap().param_count(), 32 + 272 + 17);
        assert_eq!(Mlp::new(&[]).unwrap().param_count(), 2);
        assert!(Mlp::new(&[4, 0]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Mlp::new(&[8, 8]).unwrap();
        let params = vec![0.0; net.param_count()];
        assert_eq!(net.forward(&params, 1.7).unwrap(), 0.0);
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&params, 1.7, &mut grad).unwrap();
        // only the output bias sees a live path
        let last = grad.len() - 1;
        assert_eq!(grad[last], 1.0);
        assert!(grad[..last].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn no_hidden_layer_is_affine() {
        let net = Mlp::new(&[]).unwrap();
        assert_eq!(net.forward(&[2.5, -1.0], 3.0).unwrap(), 6.5);
        let mut grad = [0.0; 2];
        assert_eq!(net.backward(&[2.5, -1.0], 3.0, &mut grad).unwrap(), 6.5);
        assert_eq!(grad, [3.0, 1.0]);
    }

    #[test]
    fn zero_input_kills_first_layer_weight_gradient() {
        let net = Mlp::new(&[5, 4]).unwrap();
        let mut rng = StreamKey::new(3).derive();
        let params = net.init(&mut rng);
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&params, 0.0, &mut grad).unwrap();
        assert!(grad[..5].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let net = Mlp::new(&[3]).unwrap();
        assert!(net.forward(&[0.0; 5], 1.0).is_err());
        let mut grad = vec![0.0; 3];
        assert!(net
            .backward(&vec![0.0; net.param_count()], 1.0, &mut grad)
            .is_err());
    }

    #[test]
    fn identity_network() {
        // x = relu(x) - relu(-x)
        let net = Mlp::new(&[2, 2]).unwrap();
        #[rustfmt::skip]
        let params = [
            1.0, -1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0,
            1.0, -1.0, 0.0,
        ];
        for x in [-2.5, -0.1, 0.0, 0.4, 3.0] {
            assert_eq!(net.forward(&params, x).unwrap(), x);
        }
    }
}
