//! Sequential Monte Carlo over autoregressive factorisations: unconditional
//! SMC, conditional SMC (particle 0 pinned to a reference path), adaptive
//! resampling and the SMC-RNCE gradient.
//!
//! All random choices go through a [`ChoiceSource`], so a sweep can be
//! recorded and replayed with common random numbers, or enumerated exactly.

use std::collections::VecDeque;

use rand::RngCore;

use crate::error::{require, Error, Result};
use crate::estimators::{Diagnostics, GradientEstimate};
use crate::models::{AutoregressiveModel, Sample, UnnormalizedModel};
use crate::numerics::{add_scaled, normalize_log_weights};
use crate::proposals::SequentialProposal;
use crate::rng::categorical;

/// `1 / Σ_j w̄_j²`.
pub fn ess(norm_w: &[f64]) -> f64 {
    1.0 / norm_w.iter().map(|w| w * w).sum::<f64>()
}

/// Resample iff `ESS < (J+1)/2`; ties keep the particles.
pub fn adaptive_resample_decision(norm_w: &[f64], j: usize) -> bool {
    ess(norm_w) < (j as f64 + 1.0) / 2.0
}

/// When to resample before steps `d ≥ 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResamplePolicy {
    /// ESS-triggered.
    Adaptive,
    Always,
    Never,
    /// `flags[d]` decides the zero-based step `d`; `flags[0]` is ignored.
    Fixed(Vec<bool>),
}

/// Source of the discrete and continuous random choices of a sweep.
pub trait ChoiceSource {
    /// Ancestor index drawn from the normalised weights.
    fn ancestor(&mut self, norm_w: &[f64]) -> usize;

    /// A proposed value `x_d ~ q(· | prefix)`.
    fn propose(&mut self, prop: &dyn SequentialProposal, coord: usize, prefix: &[f64]) -> f64;
}

/// Draws every choice from an RNG.
pub struct RngChoices<'a>(pub &'a mut dyn RngCore);

impl ChoiceSource for RngChoices<'_> {
    fn ancestor(&mut self, norm_w: &[f64]) -> usize {
        categorical(norm_w, self.0)
    }

    fn propose(&mut self, prop: &dyn SequentialProposal, coord: usize, prefix: &[f64]) -> f64 {
        prop.sample_coord(coord, prefix, self.0)
    }
}

/// Wraps a source and records what it returned.
pub struct Recording<S> {
    pub inner: S,
    pub ancestors: Vec<usize>,
    pub values: Vec<f64>,
}

impl<S> Recording<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            ancestors: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn into_replay(self) -> Replay {
        Replay {
            ancestors: self.ancestors.into(),
            values: self.values.into(),
        }
    }
}

impl<S: ChoiceSource> ChoiceSource for Recording<S> {
    fn ancestor(&mut self, norm_w: &[f64]) -> usize {
        let a = self.inner.ancestor(norm_w);
        self.ancestors.push(a);
        a
    }

    fn propose(&mut self, prop: &dyn SequentialProposal, coord: usize, prefix: &[f64]) -> f64 {
        let v = self.inner.propose(prop, coord, prefix);
        self.values.push(v);
        v
    }
}

/// Replays recorded choices in order. Panics if the sweep asks for more than
/// was recorded, which would mean the two sweeps diverged.
#[derive(Debug, Clone)]
pub struct Replay {
    ancestors: VecDeque<usize>,
    values: VecDeque<f64>,
}

impl ChoiceSource for Replay {
    fn ancestor(&mut self, _norm_w: &[f64]) -> usize {
        self.ancestors
            .pop_front()
            .expect("replay ran out of ancestors")
    }

    fn propose(&mut self, _prop: &dyn SequentialProposal, _coord: usize, _prefix: &[f64]) -> f64 {
        self.values
            .pop_front()
            .expect("replay ran out of proposals")
    }
}

/// State of a (conditional) SMC sweep over `J+1` particles.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    /// Partial paths `x^{(j)}_{1:d}`.
    pub paths: Vec<Sample>,
    /// Per completed step: the weights `log w_{j,d}` used in `Ẑ`, adjusted when resampling was skipped.
    pub log_w: Vec<Vec<f64>>,
    /// Per completed step: `w̄_{j,d}`.
    pub norm_w: Vec<Vec<f64>>,
    /// Per completed step: whether ancestors were redrawn before it.
    pub resampled: Vec<bool>,
    /// Per completed step: the ancestor of each particle (identity if not resampled).
    pub ancestors: Vec<Vec<usize>>,
    /// `Σ_d log((1/(J+1)) Σ_j w_{j,d})`.
    pub log_z: f64,
    conditioning: Option<Sample>,
    grad: Option<GradState>,
}

#[derive(Debug, Clone)]
struct GradState {
    /// `∇_θ log w_{j,d}` for the current step.
    per_particle: Vec<Vec<f64>>,
    /// Running `∇_θ log Ẑ`.
    log_z: Vec<f64>,
}

impl ParticleSystem {
    /// A fresh system. With `conditioning`, particle 0 follows that path.
    pub fn new(
        j: usize,
        conditioning: Option<&[f64]>,
        track_gradient: Option<usize>,
    ) -> Result<Self> {
        require(j >= 1, "need at least one free particle")?;
        Ok(Self {
            paths: vec![Vec::new(); j + 1],
            log_w: Vec::new(),
            norm_w: Vec::new(),
            resampled: Vec::new(),
            ancestors: Vec::new(),
            log_z: 0.0,
            conditioning: conditioning.map(<[f64]>::to_vec),
            grad: track_gradient.map(|p| GradState {
                per_particle: vec![vec![0.0; p]; j + 1],
                log_z: vec![0.0; p],
            }),
        })
    }

    pub fn particles(&self) -> usize {
        self.paths.len()
    }

    pub fn steps_done(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_conditional(&self) -> bool {
        self.conditioning.is_some()
    }

    /// `log Ẑ` accumulated so far.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// `∇_θ log Ẑ` with ancestors and resampling decisions held fixed, if tracked.
    pub fn grad_log_z(&self) -> Option<&[f64]> {
        self.grad.as_ref().map(|g| g.log_z.as_slice())
    }

    pub fn ess_trace(&self) -> Vec<f64> {
        self.norm_w.iter().map(|w| ess(w)).collect()
    }

    /// Final selection `z ~ Cat(w̄_D)`; returns the chosen path.
    pub fn select(&self, choices: &mut dyn ChoiceSource) -> (usize, Sample) {
        let z = choices.ancestor(self.norm_w.last().expect("sweep not started"));
        (z, self.paths[z].clone())
    }
}

/// One step `d` (zero-based) of (conditional) SMC.
///
/// Before steps `d ≥ 1` the policy decides whether free particles draw
/// ancestors from `Cat(w̄_{d-1})`. Particle 0 of a conditional system never
/// resamples. When resampling is skipped the weights become
/// `(J+1) w̄_{j,d-1} p̃/q`.
#[allow(clippy::too_many_arguments)]
pub fn csmc_step(
    system: &mut ParticleSystem,
    model: &dyn AutoregressiveModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    d: usize,
    policy: &ResamplePolicy,
    choices: &mut dyn ChoiceSource,
) -> Result<()> {
    require(d == system.steps_done(), "steps must run in order")?;
    require(d < model.dim(), "step beyond the model dimension")?;
    let n = system.particles();
    let first_free = usize::from(system.is_conditional());

    let (resample, ancestors) = if d == 0 {
        (false, (0..n).collect::<Vec<_>>())
    } else {
        let prev = &system.norm_w[d - 1];
        let resample = match policy {
            ResamplePolicy::Adaptive => adaptive_resample_decision(prev, n - 1),
            ResamplePolicy::Always => true,
            ResamplePolicy::Never => false,
            ResamplePolicy::Fixed(flags) => flags.get(d).copied().unwrap_or(false),
        };
        let mut anc: Vec<usize> = (0..n).collect();
        if resample {
            for a in anc.iter_mut().skip(first_free) {
                *a = choices.ancestor(prev);
            }
        }
        (resample, anc)
    };

    if resample {
        let old = system.paths.clone();
        for (j, &a) in ancestors.iter().enumerate() {
            system.paths[j].clone_from(&old[a]);
        }
    }

    let mut log_r = Vec::with_capacity(n);
    for j in 0..n {
        let value = match (&system.conditioning, j) {
            (Some(x0), 0) => x0[d],
            _ => choices.propose(prop, d, &system.paths[j]),
        };
        let prefix = &system.paths[j];
        let lq = prop.log_density_coord(d, prefix, value);
        if lq == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights(
                "proposal density is zero at a particle",
            ));
        }
        log_r.push(model.log_unnorm_cond(theta, d, prefix, value) - lq);
        system.paths[j].push(value);
    }

    let log_w: Vec<f64> = if d == 0 || resample {
        log_r.clone()
    } else {
        let prev = &system.norm_w[d - 1];
        let ln_n = (n as f64).ln();
        log_r
            .iter()
            .zip(prev)
            .map(|(r, w)| ln_n + w.ln() + r)
            .collect()
    };
    let (norm, lse) = normalize_log_weights(&log_w);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(Error::DegenerateWeights("all particle weights are zero"));
    }

    if let Some(g) = system.grad.as_mut() {
        let prev_mean = if d == 0 || resample {
            None
        } else {
            let mut m = vec![0.0; g.log_z.len()];
            for (w, gj) in system.norm_w[d - 1].iter().zip(&g.per_particle) {
                add_scaled(&mut m, *w, gj);
            }
            Some(m)
        };
        for j in 0..n {
            let path = &system.paths[j];
            let grad_r = model.grad_log_unnorm_cond(theta, d, &path[..d], path[d]);
            let gj = &mut g.per_particle[j];
            match &prev_mean {
                None => gj.clone_from(&grad_r),
                Some(m) => {
                    for ((x, r), mm) in gj.iter_mut().zip(&grad_r).zip(m) {
                        *x += r - mm;
                    }
                }
            }
        }
        for (w, gj) in norm.iter().zip(&g.per_particle) {
            add_scaled(&mut g.log_z, *w, gj);
        }
    }

    system.log_z += lse - (n as f64).ln();
    system.log_w.push(log_w);
    system.norm_w.push(norm);
    system.resampled.push(resample);
    system.ancestors.push(ancestors);
    Ok(())
}

fn autoregressive(model: &dyn UnnormalizedModel) -> Result<&dyn AutoregressiveModel> {
    model
        .as_autoregressive()
        .ok_or(Error::Unsupported("SMC on a non-autoregressive model"))
}

/// A full sweep over all `D` features.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    conditioning: Option<&[f64]>,
    j: usize,
    policy: &ResamplePolicy,
    track_gradient: bool,
    choices: &mut dyn ChoiceSource,
) -> Result<ParticleSystem> {
    let ar = autoregressive(model)?;
    if let Some(x0) = conditioning {
        crate::error::check_dim(model.dim(), x0)?;
    }
    require(
        prop.dim() == model.dim(),
        "proposal dimension differs from the model",
    )?;
    let mut system =
        ParticleSystem::new(j, conditioning, track_gradient.then(|| model.param_count()))?;
    for d in 0..model.dim() {
        csmc_step(&mut system, ar, theta, prop, d, policy, choices)?;
    }
    Ok(system)
}

/// Conditional SMC sweep with particle 0 fixed to `x0`.
pub fn csmc_sweep(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    x0: &[f64],
    j: usize,
    policy: &ResamplePolicy,
    rng: &mut dyn RngCore,
) -> Result<ParticleSystem> {
    sweep(
        model,
        theta,
        prop,
        Some(x0),
        j,
        policy,
        false,
        &mut RngChoices(rng),
    )
}

/// Unconditional SMC sweep with all `J+1` particles free.
pub fn smc_sweep(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    j: usize,
    policy: &ResamplePolicy,
    rng: &mut dyn RngCore,
) -> Result<ParticleSystem> {
    sweep(
        model,
        theta,
        prop,
        None,
        j,
        policy,
        false,
        &mut RngChoices(rng),
    )
}

/// `log Ẑ^CSMC` of a completed sweep.
pub fn csmc_z_estimate(system: &ParticleSystem) -> f64 {
    system.log_z()
}

/// `log Ẑ` from a fresh unconditional sweep with adaptive resampling.
pub fn smc_z_estimate(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    j: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    Ok(smc_sweep(model, theta, prop, j, &ResamplePolicy::Adaptive, rng)?.log_z())
}

/// SMC-RNCE: `-∇log p̃(x₀) + ∇_θ log Ẑ^CSMC`, with ancestor indices and
/// resampling decisions treated as constants.
///
/// The loss is `-log p̃(x₀) + log q(x₀) + log Ẑ^CSMC + log(J+1)`, which for
/// `D = 1` is exactly the ranking-NCE loss; the `q` and `J` terms do not
/// depend on θ.
#[allow(clippy::too_many_arguments)]
pub fn smc_rnce_gradient_with(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    x0: &[f64],
    j: usize,
    policy: &ResamplePolicy,
    choices: &mut dyn ChoiceSource,
) -> Result<(GradientEstimate, ParticleSystem)> {
    let system = sweep(model, theta, prop, Some(x0), j, policy, true, choices)?;
    let mut grad = system.grad_log_z().expect("gradient tracked").to_vec();
    add_scaled(&mut grad, -1.0, &model.grad_log_unnorm(theta, x0)?);
    let log_q0: f64 = (0..x0.len())
        .map(|d| prop.log_density_coord(d, &x0[..d], x0[d]))
        .sum();
    let loss = -model.log_unnorm(theta, x0)? + log_q0 + system.log_z() + ((j + 1) as f64).ln();
    let trace = system.ess_trace();
    let estimate = GradientEstimate {
        loss,
        grad,
        diagnostics: Diagnostics {
            ess: Some(trace.iter().sum::<f64>() / trace.len() as f64),
            ..Default::default()
        },
    };
    Ok((estimate, system))
}

pub fn smc_rnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    x0: &[f64],
    j: usize,
    policy: &ResamplePolicy,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    Ok(smc_rnce_gradient_with(model, theta, prop, x0, j, policy, &mut RngChoices(rng))?.0)
}

/// One CSMC kernel step: a conditional sweep from `x₀`, then `z ~ Cat(w̄_D)`.
pub fn csmc_kernel_step(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    x0: &[f64],
    j: usize,
    policy: &ResamplePolicy,
    rng: &mut dyn RngCore,
) -> Result<Sample> {
    let mut choices = RngChoices(rng);
    let system = sweep(model, theta, prop, Some(x0), j, policy, false, &mut choices)?;
    Ok(system.select(&mut choices).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearGaussianARModel;
    use crate::proposals::ARCondProposal;
    use crate::rng::seeded;

    fn ar3() -> (LinearGaussianARModel, Vec<f64>) {
        let theta = LinearGaussianARModel::params(&[
            (vec![], 0.5, 0.3),
            (vec![0.8], -0.2, -0.1),
            (vec![0.3, -0.6], 0.1, 0.4),
        ]);
        (LinearGaussianARModel::new(3), theta)
    }

    #[test]
    fn ess_values() {
        assert!((ess(&[0.2; 5]) - 5.0).abs() < 1e-12);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]), 2.0);
        assert!(!adaptive_resample_decision(&[0.25; 4], 3));
        assert!(adaptive_resample_decision(&[1.0, 0.0, 0.0, 0.0], 3));
        assert!(!adaptive_resample_decision(&[0.5, 0.5, 0.0, 0.0], 3));
    }

    #[test]
    fn conditioning_path_survives() {
        let (m, theta) = ar3();
        let q = ARCondProposal::independent(&[3.0, -3.0, 3.0], &[0.5, 0.5, 0.5]).unwrap();
        let x0 = [0.1, 0.2, 0.3];
        let s = csmc_sweep(
            &m,
            &theta,
            &q,
            &x0,
            6,
            &ResamplePolicy::Always,
            &mut seeded(4),
        )
        .unwrap();
        assert_eq!(s.paths[0], x0.to_vec());
        assert!(s.ancestors.iter().all(|a| a[0] == 0));
    }

    #[test]
    fn exact_proposal_gives_exact_log_z() {
        let (m, theta) = ar3();
        let q = ARCondProposal::matching(&m, &theta);
        let z = m.log_partition(&theta).unwrap();
        let s = smc_sweep(&m, &theta, &q, 5, &ResamplePolicy::Adaptive, &mut seeded(1)).unwrap();
        assert!((s.log_z() - z).abs() < 1e-10);
        let s = csmc_sweep(
            &m,
            &theta,
            &q,
            &[0.0, 1.0, 2.0],
            5,
            &ResamplePolicy::Adaptive,
            &mut seeded(1),
        )
        .unwrap();
        assert!((s.log_z() - z).abs() < 1e-10);
        assert!(s.resampled.iter().all(|r| !r));
    }

    #[test]
    fn skipped_resampling_uses_adjusted_weights() {
        let (m, theta) = ar3();
        let q = ARCondProposal::independent(&[0.0; 3], &[2.0; 3]).unwrap();
        let s = smc_sweep(&m, &theta, &q, 4, &ResamplePolicy::Never, &mut seeded(2)).unwrap();
        let ar = m.as_autoregressive().unwrap();
        for j in 0..5 {
            let p = &s.paths[j];
            let r = ar.log_unnorm_cond(&theta, 1, &p[..1], p[1])
                - q.log_density_coord(1, &p[..1], p[1]);
            let want = 5f64.ln() + s.norm_w[0][j].ln() + r;
            assert!((s.log_w[1][j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_sweep() {
        let (m, theta) = ar3();
        let q = ARCondProposal::independent(&[0.0; 3], &[1.5; 3]).unwrap();
        let mut rng = seeded(6);
        let mut rec = Recording::new(RngChoices(&mut rng));
        let (a, _) = smc_rnce_gradient_with(
            &m,
            &theta,
            &q,
            &[0.1, 0.2, 0.3],
            4,
            &ResamplePolicy::Adaptive,
            &mut rec,
        )
        .unwrap();
        let mut replay = rec.into_replay();
        let (b, _) = smc_rnce_gradient_with(
            &m,
            &theta,
            &q,
            &[0.1, 0.2, 0.3],
            4,
            &ResamplePolicy::Adaptive,
            &mut replay,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_autoregressive_rejected() {
        let m = crate::models::RingModel::new(5.0);
        let q = ARCondProposal::independent(&[0.0; 5], &[1.0; 5]).unwrap();
        let r = smc_z_estimate(&m, &[0.0], &q, 3, &mut seeded(0));
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }
}
