//! The two experiment problems: invariant logistic regression and
//! instrumental-variable regression with a small feed-forward network.

mod iv;
mod logistic;
mod mlp;

pub use iv::{IvDataProcess, IvNoise, IvOuter, IvProblem, IvSample, Truth};
pub use logistic::{sigmoid, softplus, LogisticInvariantModel, LogisticOuter};
pub use mlp::Mlp;
