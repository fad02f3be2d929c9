//! Proposal (noise) distributions `q`.
//!
//! Three shapes are supported: marginal proposals `q(x)` for ML-IS, RNCE and
//! the CIS kernel; conditional proposals `q(x₁ | x₀)` for the CNCE family;
//! and sequential proposals `q(x_d | x_{1:d-1})` for SMC.

mod ar;
mod discrete;
mod gaussian;

use rand::RngCore;

pub use ar::{ARCondProposal, DiscreteARProposal};
pub use discrete::{DiscreteCondProposal, DiscreteProposal, SoftmaxProposal, Unconditioned};
pub use gaussian::{GaussianCondProposal, GaussianDiagProposal};

use crate::error::{require, Error, Result};
use crate::estimators::WeightSet;
use crate::models::Sample;

/// A normalised marginal proposal `q(x)`.
pub trait MarginalProposal: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, rng: &mut dyn RngCore) -> Sample;

    /// Normalised `log q(x)`.
    fn log_density(&self, x: &[f64]) -> Result<f64>;
}

/// A normalised conditional proposal `q(x₁ | x₀)`.
pub trait ConditionalProposal: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_cond(&self, given: &[f64], rng: &mut dyn RngCore) -> Sample;

    /// Normalised `log q(x | given)`.
    fn log_density_cond(&self, x: &[f64], given: &[f64]) -> Result<f64>;
}

/// A proposal factorised over features, `q(x) = Π_d q(x_d | x_{1:d-1})`.
///
/// `coord` is zero-based and `prefix` holds the first `coord` features.
pub trait SequentialProposal: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_coord(&self, coord: usize, prefix: &[f64], rng: &mut dyn RngCore) -> f64;

    fn log_density_coord(&self, coord: usize, prefix: &[f64], value: f64) -> f64;

    /// `(value, probability)` pairs for finite conditionals; `None` for continuous ones.
    fn coord_support(&self, _coord: usize, _prefix: &[f64]) -> Option<Vec<(f64, f64)>> {
        None
    }
}

/// A proposal usable both marginally and sequentially.
pub trait ArProposal: MarginalProposal + SequentialProposal {}

impl<T: MarginalProposal + SequentialProposal> ArProposal for T {}

/// A marginal proposal with trainable parameters φ.
pub trait AdaptiveProposal: MarginalProposal {
    fn params(&self) -> &[f64];

    fn set_params(&mut self, phi: Vec<f64>) -> Result<()>;

    /// Analytic `∇_φ log q_φ(x)`.
    fn grad_params_log_density(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Draw `x_{1:J}` i.i.d. from `q`.
pub fn sample_batch(
    q: &dyn MarginalProposal,
    j: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sample>> {
    require(j >= 1, "need at least one proposal sample")?;
    Ok((0..j).map(|_| q.sample(rng)).collect())
}

/// Cross-entropy surrogate gradient `-Σ_j w̄_j ∇_φ log q_φ(x_j)` over `x_{0:J}`.
pub fn proposal_loss_gradient(
    q: &dyn AdaptiveProposal,
    weights: &WeightSet,
    samples: &[Sample],
) -> Result<Vec<f64>> {
    if weights.norm.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.norm.len(),
            got: samples.len(),
        });
    }
    let mut g = vec![0.0; q.params().len()];
    for (w, x) in weights.norm.iter().zip(samples) {
        let gx = q.grad_params_log_density(x)?;
        for (a, b) in g.iter_mut().zip(gx) {
            *a -= w * b;
        }
    }
    Ok(g)
}

/// One SGD step `φ ← φ - lr ∇_φ L̂(φ)` on the cross-entropy surrogate.
pub fn adapt_step(
    q: &mut dyn AdaptiveProposal,
    weights: &WeightSet,
    samples: &[Sample],
    lr: f64,
) -> Result<()> {
    let g = proposal_loss_gradient(q, weights, samples)?;
    let phi: Vec<f64> = q.params().iter().zip(&g).map(|(p, g)| p - lr * g).collect();
    q.set_params(phi)
}
