use rand::RngCore;

use super::{AutoregressiveModel, Sample, Segment, UnnormalizedModel};
use crate::error::{check_dim, check_params, Result};
use crate::numerics::HALF_LN_2PI;
use crate::proposals::{GaussianDiagProposal, MarginalProposal};
use crate::rng::standard_normal;

/// Diagonal Gaussian with `θ = (mean, scale)`.
///
/// `log p̃_θ(x) = -½ Σ_d ((x_d - μ_d) / s_d)²`. The scale is stored
/// unconstrained and squared on use, so the variance is `s_d²`.
#[derive(Debug, Clone)]
pub struct GaussianDiagModel {
    dim: usize,
}

impl GaussianDiagModel {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }

    /// Pack `(mean, scale)` into a parameter vector.
    pub fn params(mean: &[f64], scale: &[f64]) -> Vec<f64> {
        assert_eq!(mean.len(), scale.len());
        mean.iter().chain(scale).copied().collect()
    }

    pub fn mean<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[..self.dim]
    }

    pub fn scale<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.dim..]
    }
}

impl UnnormalizedModel for GaussianDiagModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        2 * self.dim
    }

    fn layout(&self) -> Vec<Segment> {
        vec![
            Segment::new("mean", 0, self.dim),
            Segment::new("scale", self.dim, self.dim),
        ]
    }

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        let (mu, s) = theta.split_at(self.dim);
        Ok(x.iter()
            .zip(mu)
            .zip(s)
            .map(|((x, m), s)| {
                let z = (x - m) / s;
                -0.5 * z * z
            })
            .sum())
    }

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        let mut g = vec![0.0; 2 * self.dim];
        for d in 0..self.dim {
            let (m, s) = (theta[d], theta[self.dim + d]);
            let r = x[d] - m;
            g[d] = r / (s * s);
            g[self.dim + d] = r * r / (s * s * s);
        }
        Ok(g)
    }

    fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        check_params(self.param_count(), theta)?;
        Ok(self
            .scale(theta)
            .iter()
            .map(|s| HALF_LN_2PI + s.abs().ln())
            .sum())
    }

    fn sample_exact(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Sample> {
        check_params(self.param_count(), theta)?;
        let (mu, s) = theta.split_at(self.dim);
        Ok(mu
            .iter()
            .zip(s)
            .map(|(m, s)| m + s.abs() * standard_normal(rng))
            .collect())
    }

    fn as_autoregressive(&self) -> Option<&dyn AutoregressiveModel> {
        Some(self)
    }

    fn matched_proposal(&self, theta: &[f64]) -> Option<Box<dyn MarginalProposal>> {
        GaussianDiagProposal::new(self.dim, theta.to_vec())
            .ok()
            .map(|q| Box::new(q) as Box<dyn MarginalProposal>)
    }
}

impl AutoregressiveModel for GaussianDiagModel {
    fn log_unnorm_cond(&self, theta: &[f64], coord: usize, _prefix: &[f64], value: f64) -> f64 {
        let z = (value - theta[coord]) / theta[self.dim + coord];
        -0.5 * z * z
    }

    fn grad_log_unnorm_cond(
        &self,
        theta: &[f64],
        coord: usize,
        _prefix: &[f64],
        value: f64,
    ) -> Vec<f64> {
        let mut g = vec![0.0; 2 * self.dim];
        let (m, s) = (theta[coord], theta[self.dim + coord]);
        let r = value - m;
        g[coord] = r / (s * s);
        g[self.dim + coord] = r * r / (s * s * s);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_quadratic_form_at_mean() {
        let m = GaussianDiagModel::new(1);
        assert_eq!(m.log_unnorm(&[0.0, 1.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn unit_gaussian_normaliser() {
        let m = GaussianDiagModel::new(1);
        let lz = m.log_partition(&[0.3, 1.0]).unwrap();
        assert!((lz - (2.0 * std::f64::consts::PI).sqrt().ln()).abs() < 1e-15);
        // sign of the stored scale is irrelevant
        assert_eq!(
            m.log_partition(&[0.0, -2.0]).unwrap(),
            m.log_partition(&[0.0, 2.0]).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = GaussianDiagModel::new(2);
        assert!(m.log_unnorm(&[0.0, 0.0, 1.0, 1.0], &[1.0]).is_err());
        assert!(m.grad_log_unnorm(&[0.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let m = GaussianDiagModel::new(1);
        let mut rng = seeded(5);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| m.sample_exact(&[0.0, 1.0], &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn conditionals_sum_to_joint() {
        let m = GaussianDiagModel::new(3);
        let theta = GaussianDiagModel::params(&[0.1, -0.2, 0.3], &[1.1, 0.7, -1.3]);
        let x = [0.4, 0.5, -0.6];
        let sum: f64 = (0..3)
            .map(|d| m.log_unnorm_cond(&theta, d, &x[..d], x[d]))
            .sum();
        assert!((sum - m.log_unnorm(&theta, &x).unwrap()).abs() < 1e-14);
    }
}
