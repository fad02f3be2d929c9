use rand::RngCore;

use super::{AutoregressiveModel, Sample, Segment, UnnormalizedModel};
use crate::error::{check_dim, check_params, Result};
use crate::numerics::HALF_LN_2PI;
use crate::proposals::{ARCondProposal, MarginalProposal};
use crate::rng::standard_normal;

/// Linear-Gaussian autoregressive model.
///
/// Conditional `d` has log-energy `-½ exp(λ_d) (x_d - a_dᵀ x_{1:d-1} - b_d)²`.
/// Parameters are stored block-wise per feature as `[a_d (d entries), b_d, λ_d]`.
/// Each conditional integrates to `√(2π) exp(-λ_d / 2)` regardless of the
/// prefix, so `log Z_θ` is a sum of per-feature normalisers.
#[derive(Debug, Clone)]
pub struct LinearGaussianARModel {
    dim: usize,
}

impl LinearGaussianARModel {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    /// Offset of feature `d`'s block.
    pub fn block_offset(d: usize) -> usize {
        d * (d - usize::from(d > 0)) / 2 + 2 * d
    }

    /// Pack per-feature `(weights, bias, log_precision)` triples.
    pub fn params(blocks: &[(Vec<f64>, f64, f64)]) -> Vec<f64> {
        let mut out = Vec::new();
        for (d, (a, b, lp)) in blocks.iter().enumerate() {
            assert_eq!(a.len(), d, "feature {d} needs {d} weights");
            out.extend_from_slice(a);
            out.push(*b);
            out.push(*lp);
        }
        out
    }

    /// `(weights, bias, log_precision)` of feature `d`.
    pub fn block<'a>(&self, theta: &'a [f64], d: usize) -> (&'a [f64], f64, f64) {
        let off = Self::block_offset(d);
        (&theta[off..off + d], theta[off + d], theta[off + d + 1])
    }

    fn residual(&self, theta: &[f64], d: usize, prefix: &[f64], value: f64) -> f64 {
        let (a, b, _) = self.block(theta, d);
        value - a.iter().zip(prefix).map(|(a, x)| a * x).sum::<f64>() - b
    }
}

impl UnnormalizedModel for LinearGaussianARModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        Self::block_offset(self.dim)
    }

    fn layout(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(3 * self.dim);
        for d in 0..self.dim {
            let off = Self::block_offset(d);
            out.push(Segment::new(format!("weights_{d}"), off, d));
            out.push(Segment::new(format!("bias_{d}"), off + d, 1));
            out.push(Segment::new(format!("log_precision_{d}"), off + d + 1, 1));
        }
        out
    }

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        Ok((0..self.dim)
            .map(|d| self.log_unnorm_cond(theta, d, &x[..d], x[d]))
            .sum())
    }

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        let mut g = vec![0.0; self.param_count()];
        for d in 0..self.dim {
            self.write_cond_grad(theta, d, &x[..d], x[d], &mut g);
        }
        Ok(g)
    }

    fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        check_params(self.param_count(), theta)?;
        Ok((0..self.dim)
            .map(|d| HALF_LN_2PI - 0.5 * self.block(theta, d).2)
            .sum())
    }

    fn sample_exact(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Sample> {
        check_params(self.param_count(), theta)?;
        let mut x = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            let (a, b, lp) = self.block(theta, d);
            let mean = a.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() + b;
            x.push(mean + (-0.5 * lp).exp() * standard_normal(rng));
        }
        Ok(x)
    }

    fn as_autoregressive(&self) -> Option<&dyn AutoregressiveModel> {
        Some(self)
    }

    fn matched_proposal(&self, theta: &[f64]) -> Option<Box<dyn MarginalProposal>> {
        Some(Box::new(ARCondProposal::matching(self, theta)))
    }
}

impl LinearGaussianARModel {
    fn write_cond_grad(&self, theta: &[f64], d: usize, prefix: &[f64], value: f64, g: &mut [f64]) {
        let off = Self::block_offset(d);
        let lp = theta[off + d + 1];
        let tau = lp.exp();
        let r = self.residual(theta, d, prefix, value);
        for (i, p) in prefix.iter().enumerate() {
            g[off + i] += tau * r * p;
        }
        g[off + d] += tau * r;
        g[off + d + 1] += -0.5 * tau * r * r;
    }
}

impl AutoregressiveModel for LinearGaussianARModel {
    fn log_unnorm_cond(&self, theta: &[f64], coord: usize, prefix: &[f64], value: f64) -> f64 {
        let lp = self.block(theta, coord).2;
        let r = self.residual(theta, coord, prefix, value);
        -0.5 * lp.exp() * r * r
    }

    fn grad_log_unnorm_cond(
        &self,
        theta: &[f64],
        coord: usize,
        prefix: &[f64],
        value: f64,
    ) -> Vec<f64> {
        let mut g = vec![0.0; self.param_count()];
        self.write_cond_grad(theta, coord, prefix, value, &mut g);
        g
    }
}
