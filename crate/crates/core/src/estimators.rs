//! Weight machinery and the per-datum losses and gradients: ML-IS, RNCE,
//! CNCE and MH-CNCE.
//!
//! Weights are always combined in log space. Linear-space forms are kept only
//! where they serve as an independent route for cross-checks.

use crate::error::{require, Error, Result};
use crate::models::{Sample, UnnormalizedModel};
use crate::numerics::{add_scaled, log_sum_exp, normalize_log_weights, sigmoid, softplus};
use crate::proposals::{ConditionalProposal, MarginalProposal};

/// Unnormalised log-weights `log w̃_j` with their normalised counterparts `w̄_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub log_unnorm: Vec<f64>,
    pub norm: Vec<f64>,
    /// `log Σ_j w̃_j`.
    pub log_normaliser: f64,
}

impl WeightSet {
    pub fn from_log(log_unnorm: Vec<f64>) -> Result<Self> {
        require(!log_unnorm.is_empty(), "empty weight set")?;
        if log_unnorm.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("log-weight".into()));
        }
        let (norm, log_normaliser) = normalize_log_weights(&log_unnorm);
        if log_normaliser == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights("all weights are zero"));
        }
        Ok(Self {
            log_unnorm,
            norm,
            log_normaliser,
        })
    }

    pub fn len(&self) -> usize {
        self.norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm.is_empty()
    }

    pub fn unnorm(&self) -> Vec<f64> {
        self.log_unnorm.iter().map(|v| v.exp()).collect()
    }

    /// `1 / Σ w̄_j²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.norm.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Optional per-evaluation diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    /// Mean Barker acceptance `w̄_{j|0}` over the conditional pairs.
    pub cnce_acceptance: Option<f64>,
    /// Mean Metropolis acceptance `min(1, r)` over the same pairs.
    pub mh_acceptance: Option<f64>,
    pub ess: Option<f64>,
}

/// A loss value with its θ-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl GradientEstimate {
    pub fn new(loss: f64, grad: Vec<f64>) -> Self {
        Self {
            loss,
            grad,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// `log w̃(x) = log p̃_θ(x) - log q(x)`.
pub fn log_weight(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x: &[f64],
) -> Result<f64> {
    let lq = q.log_density(x)?;
    if lq == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights(
            "proposal density is zero at a sample",
        ));
    }
    Ok(model.log_unnorm(theta, x)? - lq)
}

/// Importance weights for any list of samples.
pub fn is_weights(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    samples: &[Sample],
) -> Result<WeightSet> {
    let log_w = samples
        .iter()
        .map(|x| log_weight(model, theta, q, x))
        .collect::<Result<Vec<_>>>()?;
    WeightSet::from_log(log_w)
}

/// `x_{0:J}` as one list with the conditioning point first.
pub fn with_conditioning(x0: &[f64], noise: &[Sample]) -> Vec<Sample> {
    std::iter::once(x0.to_vec())
        .chain(noise.iter().cloned())
        .collect()
}

/// `Ẑ^IS = (1/J) Σ_{j=1}^J w̃_j`.
pub fn is_partition_estimate(weights: &[f64]) -> Result<f64> {
    require(!weights.is_empty(), "need at least one weight")?;
    Ok(weights.iter().sum::<f64>() / weights.len() as f64)
}

/// `Ẑ^CIS = (1/(J+1)) Σ_{j=0}^J w̃_j`, where `weights[0]` belongs to the conditioning point.
pub fn cis_partition_estimate(weights: &[f64]) -> Result<f64> {
    require(
        weights.len() >= 2,
        "need the conditioning weight and at least one more",
    )?;
    Ok(weights.iter().sum::<f64>() / weights.len() as f64)
}

/// `log((1/n) Σ exp(v_i))`.
pub fn log_mean_exp(log_w: &[f64]) -> f64 {
    log_sum_exp(log_w) - (log_w.len() as f64).ln()
}

fn gradients(model: &dyn UnnormalizedModel, theta: &[f64], xs: &[Sample]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| model.grad_log_unnorm(theta, x)).collect()
}

fn weighted_sum(grads: &[Vec<f64>], w: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (wj, gj) in w.iter().zip(grads) {
        add_scaled(&mut out, *wj, gj);
    }
    out
}

/// `∇_θ log Ẑ^IS`: the self-normalised average over `x_{1:J}` only.
pub fn grad_log_is_partition(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    noise: &[Sample],
) -> Result<Vec<f64>> {
    let w = is_weights(model, theta, q, noise)?;
    let g = gradients(model, theta, noise)?;
    Ok(weighted_sum(&g, &w.norm, model.param_count()))
}

/// `∇_θ log Ẑ^CIS = Σ_j w̃_j ∇log p̃(x_j) / Σ_j w̃_j`, evaluated in linear space
/// as `∇Ẑ / Ẑ`.
///
/// Deliberately shares no weight code with [`rnce_gradient`] so the two can
/// be compared.
pub fn grad_log_cis_partition(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<Vec<f64>> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    let xs = with_conditioning(x0, noise);
    let n = xs.len() as f64;
    let mut z_hat = 0.0;
    let mut dz_hat = vec![0.0; model.param_count()];
    for x in &xs {
        let w = (model.log_unnorm(theta, x)? - q.log_density(x)?).exp();
        z_hat += w / n;
        let g = model.grad_log_unnorm(theta, x)?;
        for (a, b) in dz_hat.iter_mut().zip(g) {
            *a += w * b / n;
        }
    }
    if z_hat == 0.0 {
        return Err(Error::DegenerateWeights("all weights are zero"));
    }
    Ok(dz_hat.into_iter().map(|v| v / z_hat).collect())
}

/// ML-IS: `-∇log p̃(x₀) + Σ_{j≥1} (w̃_j / Σ_{ℓ≥1} w̃_ℓ) ∇log p̃(x_j)`.
///
/// Loss `-log p̃(x₀) + log Ẑ^IS`. The normalisation excludes `x₀`.
pub fn mlis_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<GradientEstimate> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    let w = is_weights(model, theta, q, noise)?;
    let g = gradients(model, theta, noise)?;
    let mut grad = weighted_sum(&g, &w.norm, model.param_count());
    add_scaled(&mut grad, -1.0, &model.grad_log_unnorm(theta, x0)?);
    let loss = -model.log_unnorm(theta, x0)? + w.log_normaliser - (noise.len() as f64).ln();
    Ok(GradientEstimate {
        loss,
        grad,
        diagnostics: Diagnostics {
            ess: Some(w.ess()),
            ..Default::default()
        },
    })
}

/// Ranking-NCE loss `-log w̃₀ + log Σ_{j=0}^J w̃_j`.
pub fn rnce_loss(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<f64> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    let w = is_weights(model, theta, q, &with_conditioning(x0, noise))?;
    if w.log_unnorm[0] == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights("conditioning weight is zero"));
    }
    Ok(w.log_normaliser - w.log_unnorm[0])
}

/// Ranking-NCE gradient `-∇log p̃(x₀) + Σ_{j=0}^J w̄_j ∇log p̃(x_j)`.
pub fn rnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<GradientEstimate> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    let xs = with_conditioning(x0, noise);
    let w = is_weights(model, theta, q, &xs)?;
    if w.log_unnorm[0] == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights("conditioning weight is zero"));
    }
    let g = gradients(model, theta, &xs)?;
    let mut grad = weighted_sum(&g, &w.norm, model.param_count());
    add_scaled(&mut grad, -1.0, &g[0]);
    Ok(GradientEstimate {
        loss: w.log_normaliser - w.log_unnorm[0],
        grad,
        diagnostics: Diagnostics {
            ess: Some(w.ess()),
            ..Default::default()
        },
    })
}

/// Pairwise conditional weights for one noise sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnceWeights {
    /// `log w̃(x_j | x₀) = log p̃(x_j) - log q(x_j | x₀)`.
    pub log_forward: f64,
    /// `log w̃(x₀ | x_j) = log p̃(x₀) - log q(x₀ | x_j)`.
    pub log_backward: f64,
    /// `w̄_{j|0} = w̃(x_j|x₀) / (w̃(x_j|x₀) + w̃(x₀|x_j))`.
    pub posterior: f64,
}

impl CnceWeights {
    pub fn log_ratio(&self) -> f64 {
        self.log_forward - self.log_backward
    }

    /// `min(1, w̃(x_j|x₀) / w̃(x₀|x_j))`.
    pub fn mh_acceptance(&self) -> f64 {
        self.log_ratio().min(0.0).exp()
    }
}

pub fn cnce_weights(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    xj: &[f64],
) -> Result<CnceWeights> {
    let log_forward = model.log_unnorm(theta, xj)? - q.log_density_cond(xj, x0)?;
    let log_backward = model.log_unnorm(theta, x0)? - q.log_density_cond(x0, xj)?;
    if log_forward == f64::NEG_INFINITY && log_backward == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights(
            "both conditional weights are zero",
        ));
    }
    if log_forward.is_nan() || log_backward.is_nan() {
        return Err(Error::NonFinite("conditional weight".into()));
    }
    Ok(CnceWeights {
        log_forward,
        log_backward,
        posterior: sigmoid(log_forward - log_backward),
    })
}

fn all_cnce_weights(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<Vec<CnceWeights>> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    noise
        .iter()
        .map(|xj| cnce_weights(model, theta, q, x0, xj))
        .collect()
}

/// Conditional-NCE loss `(1/J) Σ_j log(1 + w̃(x_j|x₀)/w̃(x₀|x_j))`.
pub fn cnce_loss(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<f64> {
    let w = all_cnce_weights(model, theta, q, x0, noise)?;
    Ok(w.iter().map(|c| softplus(c.log_ratio())).sum::<f64>() / w.len() as f64)
}

/// `-∇log p̃(x₀) + (1/J) Σ_j [(1-a_j) ∇log p̃(x₀) + a_j ∇log p̃(x_j)]`.
pub fn two_point_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    x0: &[f64],
    noise: &[Sample],
    accept: &[f64],
) -> Result<Vec<f64>> {
    let g0 = model.grad_log_unnorm(theta, x0)?;
    let inv_j = 1.0 / noise.len() as f64;
    let mut grad: Vec<f64> = g0.iter().map(|v| -v).collect();
    for (xj, &a) in noise.iter().zip(accept) {
        let gj = model.grad_log_unnorm(theta, xj)?;
        let mut term = vec![0.0; grad.len()];
        add_scaled(&mut term, 1.0 - a, &g0);
        add_scaled(&mut term, a, &gj);
        add_scaled(&mut grad, inv_j, &term);
    }
    Ok(grad)
}

fn conditional_estimate(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    noise: &[Sample],
    metropolis: bool,
) -> Result<GradientEstimate> {
    let w = all_cnce_weights(model, theta, q, x0, noise)?;
    let barker: Vec<f64> = w.iter().map(|c| c.posterior).collect();
    let mh: Vec<f64> = w.iter().map(CnceWeights::mh_acceptance).collect();
    let accept = if metropolis { &mh } else { &barker };
    let grad = two_point_gradient(model, theta, x0, noise, accept)?;
    let n = w.len() as f64;
    Ok(GradientEstimate {
        loss: w.iter().map(|c| softplus(c.log_ratio())).sum::<f64>() * (1.0 / n),
        grad,
        diagnostics: Diagnostics {
            cnce_acceptance: Some(barker.iter().sum::<f64>() / n),
            mh_acceptance: Some(mh.iter().sum::<f64>() / n),
            ess: None,
        },
    })
}

/// Conditional-NCE gradient with Barker weights `w̄_{j|0}`.
pub fn cnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<GradientEstimate> {
    conditional_estimate(model, theta, q, x0, noise, false)
}

/// The CNCE gradient with `w̄_{j|0}` replaced by the Metropolis acceptance.
/// The reported loss is the CNCE loss.
pub fn mh_cnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<GradientEstimate> {
    conditional_estimate(model, theta, q, x0, noise, true)
}
