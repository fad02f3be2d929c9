//! Shared fixtures for the benchmarks.

use contrastive_core::models::{LinearGaussianARModel, RingModel, Sample};
use contrastive_core::proposals::{ARCondProposal, GaussianCondProposal, MarginalProposal};
use contrastive_core::rng::{seeded, standard_normal, DefaultRng};
use contrastive_core::UnnormalizedModel;

/// A linear-Gaussian AR model with moderate couplings, its true parameter,
/// an independent proposal fitted to data, and one data point.
pub struct ArFixture {
    pub model: LinearGaussianARModel,
    pub theta: Vec<f64>,
    pub proposal: ARCondProposal,
    pub x0: Sample,
}

impl ArFixture {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let blocks: Vec<_> = (0..dim)
            .map(|d| {
                let w = (0..d)
                    .map(|_| 0.5 * standard_normal(&mut rng) / (d as f64).sqrt())
                    .collect();
                (w, standard_normal(&mut rng), 0.0)
            })
            .collect();
        let model = LinearGaussianARModel::new(dim);
        let theta = LinearGaussianARModel::params(&blocks);
        let data: Vec<Sample> = (0..200)
            .map(|_| model.sample_exact(&theta, &mut rng).expect("exact sampler"))
            .collect();
        let proposal = ARCondProposal::fit_independent(&data).expect("fit");
        Self {
            x0: data[0].clone(),
            model,
            theta,
            proposal,
        }
    }

    pub fn noise(&self, j: usize, rng: &mut DefaultRng) -> Vec<Sample> {
        (0..j).map(|_| self.proposal.sample(rng)).collect()
    }
}

/// The 5-D ring model at precision 1 with a data-scaled conditional proposal.
pub struct RingFixture {
    pub model: RingModel,
    pub theta: Vec<f64>,
    pub proposal: GaussianCondProposal,
    pub x0: Sample,
}

impl RingFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let data = contrastive_core::models::sample_ring_data(0.0, 7.0, 5, 100, &mut rng)
            .expect("ring data");
        Self {
            model: RingModel::new(7.0),
            theta: vec![0.0],
            proposal: GaussianCondProposal::from_data(&data).expect("scale"),
            x0: data[0].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        let ar = ArFixture::new(8, 1);
        assert_eq!(ar.theta.len(), ar.model.param_count());
        assert!(ar.model.log_unnorm(&ar.theta, &ar.x0).unwrap().is_finite());
        let ring = RingFixture::new(1);
        assert!(ring
            .model
            .log_unnorm(&ring.theta, &ring.x0)
            .unwrap()
            .is_finite());
    }
}
