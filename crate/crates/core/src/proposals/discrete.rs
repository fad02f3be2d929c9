use rand::RngCore;

use super::{AdaptiveProposal, ConditionalProposal, MarginalProposal};
use crate::error::{check_dim, check_params, require, Error, Result};
use crate::models::Sample;
use crate::numerics::normalize_log_weights;
use crate::rng::categorical;

fn index_in(support: &[Sample], x: &[f64]) -> Result<usize> {
    support
        .iter()
        .position(|s| s.as_slice() == x)
        .ok_or(Error::OutOfSupport)
}

fn check_support(support: &[Sample]) -> Result<usize> {
    require(!support.is_empty(), "support must be non-empty")?;
    let dim = support[0].len();
    require(support.iter().all(|s| s.len() == dim), "ragged support")?;
    Ok(dim)
}

fn check_probs(p: &[f64], k: usize) -> Result<()> {
    require(p.len() == k, "one probability per support point")?;
    require(
        p.iter().all(|v| *v > 0.0 && v.is_finite()),
        "probabilities must be positive",
    )?;
    let s: f64 = p.iter().sum();
    require((s - 1.0).abs() < 1e-12, format!("probabilities sum to {s}"))
}

/// Fixed categorical proposal over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProposal {
    support: Vec<Sample>,
    probs: Vec<f64>,
    dim: usize,
}

impl DiscreteProposal {
    pub fn new(support: Vec<Sample>, probs: Vec<f64>) -> Result<Self> {
        let dim = check_support(&support)?;
        check_probs(&probs, support.len())?;
        Ok(Self {
            support,
            probs,
            dim,
        })
    }

    /// Renormalises non-negative masses.
    pub fn from_masses(support: Vec<Sample>, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        require(total > 0.0, "masses must have positive total")?;
        Self::new(support, masses.iter().map(|m| m / total).collect())
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

impl MarginalProposal for DiscreteProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        self.support[categorical(&self.probs, rng)].clone()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        Ok(self.probs[index_in(&self.support, x)?].ln())
    }
}

/// Categorical proposal with softmax logits φ, one per support point.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProposal {
    support: Vec<Sample>,
    logits: Vec<f64>,
    dim: usize,
}

impl SoftmaxProposal {
    pub fn new(support: Vec<Sample>, logits: Vec<f64>) -> Result<Self> {
        let dim = check_support(&support)?;
        require(logits.len() == support.len(), "one logit per support point")?;
        require(
            logits.iter().all(|v| v.is_finite()),
            "logits must be finite",
        )?;
        Ok(Self {
            support,
            logits,
            dim,
        })
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn probabilities(&self) -> Vec<f64> {
        normalize_log_weights(&self.logits).0
    }
}

impl MarginalProposal for SoftmaxProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        self.support[categorical(&self.probabilities(), rng)].clone()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        let i = index_in(&self.support, x)?;
        let (_, lse) = normalize_log_weights(&self.logits);
        Ok(self.logits[i] - lse)
    }
}

impl AdaptiveProposal for SoftmaxProposal {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn set_params(&mut self, phi: Vec<f64>) -> Result<()> {
        check_params(self.logits.len(), &phi)?;
        self.logits = phi;
        Ok(())
    }

    fn grad_params_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        let i = index_in(&self.support, x)?;
        let mut g: Vec<f64> = self.probabilities().iter().map(|p| -p).collect();
        g[i] += 1.0;
        Ok(g)
    }
}

/// Conditional proposal given by a row-stochastic table: `table[from][to] = q(to | from)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCondProposal {
    support: Vec<Sample>,
    table: Vec<Vec<f64>>,
    dim: usize,
}

impl DiscreteCondProposal {
    pub fn new(support: Vec<Sample>, table: Vec<Vec<f64>>) -> Result<Self> {
        let dim = check_support(&support)?;
        require(table.len() == support.len(), "one row per support point")?;
        for row in &table {
            check_probs(row, support.len())?;
        }
        Ok(Self {
            support,
            table,
            dim,
        })
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    /// `q(to | from)` by support index.
    pub fn prob(&self, to: usize, from: usize) -> f64 {
        self.table[from][to]
    }
}

impl ConditionalProposal for DiscreteCondProposal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_cond(&self, given: &[f64], rng: &mut dyn RngCore) -> Sample {
        let from = index_in(&self.support, given).expect("conditioning point outside support");
        self.support[categorical(&self.table[from], rng)].clone()
    }

    fn log_density_cond(&self, x: &[f64], given: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        check_dim(self.dim, given)?;
        let to = index_in(&self.support, x)?;
        let from = index_in(&self.support, given)?;
        Ok(self.table[from][to].ln())
    }
}

/// Uses a marginal proposal as a conditional one that ignores the conditioning point.
#[derive(Debug, Clone)]
pub struct Unconditioned<Q>(pub Q);

impl<Q: MarginalProposal> ConditionalProposal for Unconditioned<Q> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample_cond(&self, _given: &[f64], rng: &mut dyn RngCore) -> Sample {
        self.0.sample(rng)
    }

    fn log_density_cond(&self, x: &[f64], _given: &[f64]) -> Result<f64> {
        self.0.log_density(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support() -> Vec<Sample> {
        vec![vec![0.0], vec![1.0], vec![2.0]]
    }

    #[test]
    fn probabilities_must_normalise() {
        assert!(DiscreteProposal::new(support(), vec![0.5, 0.5, 0.5]).is_err());
        assert!(DiscreteProposal::new(support(), vec![0.5, 0.5, 0.0]).is_err());
        let q = DiscreteProposal::from_masses(support(), &[1.0, 1.0, 2.0]).unwrap();
        assert!((q.log_density(&[2.0]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(q.log_density(&[3.0]), Err(Error::OutOfSupport));
    }

    #[test]
    fn softmax_sums_to_one() {
        let q = SoftmaxProposal::new(support(), vec![0.3, -1.0, 2.0]).unwrap();
        let total: f64 = support()
            .iter()
            .map(|x| q.log_density(x).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-15);
        let g = q.grad_params_log_density(&[1.0]).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn table_rows_checked() {
        let bad = vec![vec![0.5, 0.5, 0.0]; 3];
        assert!(DiscreteCondProposal::new(support(), bad).is_err());
        let t = vec![vec![0.2, 0.3, 0.5]; 3];
        let q = DiscreteCondProposal::new(support(), t).unwrap();
        assert!((q.log_density_cond(&[1.0], &[2.0]).unwrap() - 0.3f64.ln()).abs() < 1e-15);
    }
}
