//! Estimators for unnormalised probabilistic models.
//!
//! The crate covers maximum likelihood with importance sampling (ML-IS),
//! ranking and conditional noise-contrastive estimation (RNCE, CNCE), their
//! Metropolis and persistent variants, multi-step contrastive divergence and
//! SMC-based ranking NCE, together with exact oracles that check them.

pub mod checks;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod models;
pub mod numerics;
pub mod oracles;
pub mod proposals;
pub mod rng;
pub mod smc;
pub mod trainer;

pub use error::{Error, Result};
pub use estimators::{Diagnostics, GradientEstimate, WeightSet};
pub use models::{ParameterVector, Sample, UnnormalizedModel};
