use rand::RngCore;

use super::{AdaptiveProposal, ConditionalProposal, MarginalProposal};
use crate::error::{check_dim, check_params, require, Error, Result};
use crate::models::Sample;
use crate::numerics::{normal_log_density, HALF_LN_2PI};
use crate::rng::standard_normal;

/// Diagonal Gaussian `N(m, diag(s²))` with φ = `[m (D), s (D)]`.
///
/// Same layout as the diagonal Gaussian model. The scale is stored raw and
/// squared on use, so any non-zero value is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiagProposal {
    dim: usize,
    phi: Vec<f64>,
}

impl GaussianDiagProposal {
    pub fn new(dim: usize, phi: Vec<f64>) -> Result<Self> {
        require(dim > 0, "dimension must be positive")?;
        check_params(2 * dim, &phi)?;
        validate(&phi[dim..])?;
        Ok(Self { dim, phi })
    }

    pub fn isotropic(mean: &[f64], std: f64) -> Result<Self> {
        let mut phi = mean.to_vec();
        phi.extend(std::iter::repeat_n(std, mean.len()));
        Self::new(mean.len(), phi)
    }

    pub fn mean(&self) -> &[f64] {
        &self.phi[..self.dim]
    }

    pub fn scale(&self) -> &[f64] {
        &self.phi[self.dim..]
    }
}

fn validate(scale: &[f64]) -> Result<()> {
    if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "scales must be finite and non-zero".into(),
        ));
    }
    Ok(())
}

impl MarginalProposal for GaussianDiagProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        self.mean()
            .iter()
            .zip(self.scale())
            .map(|(m, s)| m + s.abs() * standard_normal(rng))
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        Ok(x.iter()
            .zip(self.mean())
            .zip(self.scale())
            .map(|((x, m), s)| normal_log_density(*x, *m, s.abs()))
            .sum())
    }
}

impl AdaptiveProposal for GaussianDiagProposal {
    fn params(&self) -> &[f64] {
        &self.phi
    }

    fn set_params(&mut self, phi: Vec<f64>) -> Result<()> {
        check_params(2 * self.dim, &phi)?;
        validate(&phi[self.dim..])?;
        self.phi = phi;
        Ok(())
    }

    fn grad_params_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        let mut g = vec![0.0; 2 * self.dim];
        for d in 0..self.dim {
            let s = self.phi[self.dim + d];
            let r = x[d] - self.phi[d];
            g[d] = r / (s * s);
            g[self.dim + d] = r * r / (s * s * s) - 1.0 / s;
        }
        Ok(g)
    }
}

/// Isotropic Gaussian random-walk proposal `q(x₁ | x₀) = N(x₁; x₀, ε² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCondProposal {
    dim: usize,
    eps: f64,
}

impl GaussianCondProposal {
    pub fn new(dim: usize, eps: f64) -> Result<Self> {
        require(dim > 0, "dimension must be positive")?;
        require(eps > 0.0 && eps.is_finite(), "eps must be positive")?;
        Ok(Self { dim, eps })
    }

    /// ε set to the mean over features of the per-feature sample std of `data`.
    pub fn from_data(data: &[Sample]) -> Result<Self> {
        require(
            data.len() >= 2,
            "need at least two samples to estimate a scale",
        )?;
        let dim = data[0].len();
        let eps = (0..dim)
            .map(|d| {
                let col: Vec<f64> = data.iter().map(|x| x[d]).collect();
                crate::numerics::sample_std(&col)
            })
            .sum::<f64>()
            / dim as f64;
        Self::new(dim, eps)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl ConditionalProposal for GaussianCondProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_cond(&self, given: &[f64], rng: &mut dyn RngCore) -> Sample {
        given
            .iter()
            .map(|g| g + self.eps * standard_normal(rng))
            .collect()
    }

    fn log_density_cond(&self, x: &[f64], given: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        check_dim(self.dim, given)?;
        let sq: f64 = x.iter().zip(given).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = self.dim as f64;
        Ok(-0.5 * sq / (self.eps * self.eps) - d * (self.eps.ln() + HALF_LN_2PI))
    }
}
