use rand::RngCore;

use super::{AdaptiveProposal, MarginalProposal, SequentialProposal};
use crate::error::{check_dim, check_params, require, Error, Result};
use crate::models::{LinearGaussianARModel, Sample};
use crate::numerics::normal_log_density;
use crate::rng::{categorical, standard_normal};

/// Lower bound applied to every conditional std.
pub const MIN_STD: f64 = 1e-3;

/// Autoregressive Gaussian proposal
/// `q(x_d | x_{1:d-1}) = N(w_dᵀ x_{1:d-1} + c_d, σ_d²)`.
///
/// Parameters use the same block layout as [`LinearGaussianARModel`] with the
/// log-precision replaced by the std: `[w_d (d entries), c_d, σ_d]`. Stds are
/// clamped below at [`MIN_STD`] on use.
#[derive(Debug, Clone, PartialEq)]
pub struct ARCondProposal {
    dim: usize,
    phi: Vec<f64>,
}

impl ARCondProposal {
    pub fn new(dim: usize, phi: Vec<f64>) -> Result<Self> {
        require(dim > 0, "dimension must be positive")?;
        check_params(LinearGaussianARModel::block_offset(dim), &phi)?;
        require(
            phi.iter().all(|v| v.is_finite()),
            "parameters must be finite",
        )?;
        Ok(Self { dim, phi })
    }

    /// Independent features `N(mean_d, std_d²)`.
    pub fn independent(mean: &[f64], std: &[f64]) -> Result<Self> {
        require(mean.len() == std.len(), "mean/std length mismatch")?;
        let blocks: Vec<_> = (0..mean.len())
            .map(|d| (vec![0.0; d], mean[d], std[d]))
            .collect();
        Self::new(mean.len(), LinearGaussianARModel::params(&blocks))
    }

    /// Independent features moment-matched to the per-feature mean and std of `data`.
    pub fn fit_independent(data: &[Sample]) -> Result<Self> {
        require(data.len() >= 2, "need at least two samples")?;
        let dim = data[0].len();
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for d in 0..dim {
            let col: Vec<f64> = data.iter().map(|x| x[d]).collect();
            mean.push(crate::numerics::mean(&col));
            std.push(crate::numerics::sample_std(&col));
        }
        Self::independent(&mean, &std)
    }

    /// The model's own normalised conditionals, so every step weight equals
    /// the conditional normaliser.
    pub fn matching(model: &LinearGaussianARModel, theta: &[f64]) -> Self {
        use crate::models::UnnormalizedModel;
        let dim = model.dim();
        let mut phi = theta.to_vec();
        for d in 0..dim {
            let off = LinearGaussianARModel::block_offset(d) + d + 1;
            phi[off] = (-0.5 * theta[off]).exp();
        }
        Self { dim, phi }
    }

    fn block(&self, d: usize) -> (&[f64], f64, f64) {
        let off = LinearGaussianARModel::block_offset(d);
        (
            &self.phi[off..off + d],
            self.phi[off + d],
            self.phi[off + d + 1].abs().max(MIN_STD),
        )
    }

    fn cond_mean(&self, d: usize, prefix: &[f64]) -> (f64, f64) {
        let (w, c, s) = self.block(d);
        (w.iter().zip(prefix).map(|(a, b)| a * b).sum::<f64>() + c, s)
    }
}

impl SequentialProposal for ARCondProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_coord(&self, coord: usize, prefix: &[f64], rng: &mut dyn RngCore) -> f64 {
        let (m, s) = self.cond_mean(coord, prefix);
        m + s * standard_normal(rng)
    }

    fn log_density_coord(&self, coord: usize, prefix: &[f64], value: f64) -> f64 {
        let (m, s) = self.cond_mean(coord, prefix);
        normal_log_density(value, m, s)
    }
}

impl MarginalProposal for ARCondProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        let mut x = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            let v = self.sample_coord(d, &x, rng);
            x.push(v);
        }
        x
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        Ok((0..self.dim)
            .map(|d| self.log_density_coord(d, &x[..d], x[d]))
            .sum())
    }
}

impl AdaptiveProposal for ARCondProposal {
    fn params(&self) -> &[f64] {
        &self.phi
    }

    fn set_params(&mut self, phi: Vec<f64>) -> Result<()> {
        check_params(self.phi.len(), &phi)?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("proposal parameters".into()));
        }
        self.phi = phi;
        Ok(())
    }

    fn grad_params_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        let mut g = vec![0.0; self.phi.len()];
        for d in 0..self.dim {
            let off = LinearGaussianARModel::block_offset(d);
            let (m, s) = self.cond_mean(d, &x[..d]);
            let r = x[d] - m;
            let inv = 1.0 / (s * s);
            for i in 0..d {
                g[off + i] = r * x[i] * inv;
            }
            g[off + d] = r * inv;
            let raw = self.phi[off + d + 1];
            if raw.abs() > MIN_STD {
                // s = |raw|, so ds/draw = sign(raw)
                g[off + d + 1] = (r * r * inv / s - 1.0 / s) * raw.signum();
            }
        }
        Ok(g)
    }
}

/// Finite-grid autoregressive proposal with per-feature categorical
/// marginals that ignore the prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteARProposal {
    values: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

impl DiscreteARProposal {
    pub fn new(values: Vec<f64>, probs: Vec<Vec<f64>>) -> Result<Self> {
        require(!values.is_empty() && !probs.is_empty(), "empty proposal")?;
        for p in &probs {
            require(p.len() == values.len(), "one probability per value")?;
            require(p.iter().all(|v| *v > 0.0), "probabilities must be positive")?;
            require(
                (p.iter().sum::<f64>() - 1.0).abs() < 1e-12,
                "rows must sum to one",
            )?;
        }
        Ok(Self { values, probs })
    }

    fn index(&self, v: f64) -> Option<usize> {
        self.values.iter().position(|&x| x == v)
    }
}

impl SequentialProposal for DiscreteARProposal {
    fn dim(&self) -> usize {
        self.probs.len()
    }

    fn sample_coord(&self, coord: usize, _prefix: &[f64], rng: &mut dyn RngCore) -> f64 {
        self.values[categorical(&self.probs[coord], rng)]
    }

    fn log_density_coord(&self, coord: usize, _prefix: &[f64], value: f64) -> f64 {
        self.index(value)
            .map_or(f64::NEG_INFINITY, |k| self.probs[coord][k].ln())
    }

    fn coord_support(&self, coord: usize, _prefix: &[f64]) -> Option<Vec<(f64, f64)>> {
        Some(
            self.values
                .iter()
                .copied()
                .zip(self.probs[coord].iter().copied())
                .collect(),
        )
    }
}

impl MarginalProposal for DiscreteARProposal {
    fn dim(&self) -> usize {
        self.probs.len()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        (0..self.probs.len())
            .map(|d| self.sample_coord(d, &[], rng))
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.probs.len(), x)?;
        let v: f64 = (0..x.len())
            .map(|d| self.log_density_coord(d, &x[..d], x[d]))
            .sum();
        if v == f64::NEG_INFINITY {
            return Err(Error::OutOfSupport);
        }
        Ok(v)
    }
}
