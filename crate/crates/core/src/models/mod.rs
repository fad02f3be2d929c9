//! Unnormalised models `p̃_θ` and the analytic toy families built on them.
//!
//! All models expose `log p̃_θ(x)`. The normalised log-density is always
//! `log p̃ - log Z`; it is never stored separately.

mod ar;
mod discrete;
mod gaussian;
mod ring;

use std::ops::{Deref, DerefMut};

use rand::RngCore;

pub use ar::LinearGaussianARModel;
pub use discrete::{DiscreteARModel, DiscreteToyModel};
pub use gaussian::GaussianDiagModel;
pub use ring::{sample_ring_data, RingModel};

use crate::error::{Error, Result};
use crate::proposals::MarginalProposal;

/// A point in feature space.
pub type Sample = Vec<f64>;

/// Named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, offset: usize, len: usize) -> Self {
        Self {
            name: name.into(),
            offset,
            len,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter vector (θ for models, φ for proposals).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Slice of the segment called `name` in `layout`.
    pub fn segment<'a>(&'a self, layout: &[Segment], name: &str) -> Option<&'a [f64]> {
        layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.0[s.range()])
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// An unnormalised density `p̃_θ(x)` with analytic `∇_θ log p̃_θ(x)`.
pub trait UnnormalizedModel: Send + Sync {
    /// Feature dimension `D`.
    fn dim(&self) -> usize;

    fn param_count(&self) -> usize;

    fn layout(&self) -> Vec<Segment>;

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64>;

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>>;

    /// Exact `log Z_θ`, where available.
    fn log_partition(&self, _theta: &[f64]) -> Result<f64> {
        Err(Error::Unsupported("exact normalisation"))
    }

    /// An i.i.d. draw from the normalised `p_θ`, where available.
    fn sample_exact(&self, _theta: &[f64], _rng: &mut dyn RngCore) -> Result<Sample> {
        Err(Error::Unsupported("exact sampling"))
    }

    fn as_autoregressive(&self) -> Option<&dyn AutoregressiveModel> {
        None
    }

    /// A normalised proposal equal to the current `p_θ`, for families where one exists.
    fn matched_proposal(&self, _theta: &[f64]) -> Option<Box<dyn MarginalProposal>> {
        None
    }
}

/// A model whose unnormalised density factorises over features:
/// `p̃_θ(x) = Π_d p̃_θ(x_d | x_{1:d-1})`.
///
/// `coord` is zero-based and `prefix` holds `x_{1:coord}`.
pub trait AutoregressiveModel: UnnormalizedModel {
    fn log_unnorm_cond(&self, theta: &[f64], coord: usize, prefix: &[f64], value: f64) -> f64;

    /// Gradient of `log p̃_θ(x_d | prefix)` over the full parameter vector.
    fn grad_log_unnorm_cond(
        &self,
        theta: &[f64],
        coord: usize,
        prefix: &[f64],
        value: f64,
    ) -> Vec<f64>;
}

/// `-log p_θ(x)` for models with exact normalisation.
pub fn exact_nll(model: &dyn UnnormalizedModel, theta: &[f64], x: &[f64]) -> Result<f64> {
    Ok(model.log_partition(theta)? - model.log_unnorm(theta, x)?)
}
