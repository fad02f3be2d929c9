//! Mini-batch SGD over any criterion, with optional proposal adaptation and
//! persistent chains.
//!
//! Randomness is split per datum: the stream for data index `i` at iteration
//! `t` is seeded from `(seed, t, i)`, so results do not depend on evaluation
//! order. Epoch shuffles use their own stream.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{require, Error, Result};
use crate::estimators::{
    cnce_gradient, is_weights, mh_cnce_gradient, mlis_gradient, rnce_gradient, with_conditioning,
    GradientEstimate, WeightSet,
};
use crate::kernels::{
    cdk_pairwise_outcomes, cdk_rnce_outcomes, gradient_from_outcomes, persistent_pairwise_gradient,
    AcceptanceRule, ChainStore, KernelOutcome,
};
use crate::models::{Sample, UnnormalizedModel};
use crate::numerics::add_scaled;
use crate::proposals::{
    proposal_loss_gradient, sample_batch, AdaptiveProposal, ArProposal, ConditionalProposal,
    MarginalProposal,
};
use crate::rng::{derive_seed, permutation, seeded, DefaultRng};
use crate::smc::{smc_rnce_gradient, ResamplePolicy};

/// Training criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    MlIs,
    Rnce,
    Cnce,
    MhCnce,
    PRnce,
    PCnce,
    PMhCnce,
    CdkRnce,
    CdkCnce,
    SmcRnce,
}

impl Criterion {
    pub const ALL: [Criterion; 10] = [
        Self::MlIs,
        Self::Rnce,
        Self::Cnce,
        Self::MhCnce,
        Self::PRnce,
        Self::PCnce,
        Self::PMhCnce,
        Self::CdkRnce,
        Self::CdkCnce,
        Self::SmcRnce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MlIs => "ml-is",
            Self::Rnce => "rnce",
            Self::Cnce => "cnce",
            Self::MhCnce => "mh-cnce",
            Self::PRnce => "p-rnce",
            Self::PCnce => "p-cnce",
            Self::PMhCnce => "p-mh-cnce",
            Self::CdkRnce => "cdk-rnce",
            Self::CdkCnce => "cdk-cnce",
            Self::SmcRnce => "smc-rnce",
        }
    }

    /// Whether the criterion needs a conditional proposal `q(·|x₀)`.
    pub fn is_conditional(self) -> bool {
        matches!(
            self,
            Self::Cnce | Self::MhCnce | Self::PCnce | Self::PMhCnce | Self::CdkCnce
        )
    }

    pub fn is_persistent(self) -> bool {
        matches!(self, Self::PRnce | Self::PCnce | Self::PMhCnce)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion `{s}`")))
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear interpolation from the base rate to `end`.
    LinearDecay {
        end: f64,
    },
    /// Cosine annealing from the base rate down to `floor`.
    Cosine {
        floor: f64,
    },
}

/// Learning rate at `iteration` out of `total` (both counted from zero).
pub fn lr_schedule(kind: LrSchedule, base: f64, iteration: usize, total: usize) -> f64 {
    let progress = if total == 0 {
        0.0
    } else {
        (iteration.min(total) as f64) / total as f64
    };
    match kind {
        LrSchedule::Constant => base,
        LrSchedule::LinearDecay { end } => base + (end - base) * progress,
        LrSchedule::Cosine { floor } => {
            floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Length of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duration {
    Epochs(usize),
    Iterations(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub criterion: Criterion,
    pub j: usize,
    /// Kernel steps for the CD-k criteria.
    pub k: usize,
    pub batch_size: usize,
    pub duration: Duration,
    pub schedule: LrSchedule,
    pub lr: f64,
    /// Learning rate for an adaptive proposal; `None` reuses the model's schedule.
    pub proposal_lr: Option<f64>,
    pub seed: u64,
    pub resample: ResamplePolicy,
    /// Record metrics every this many iterations (and always at the end).
    pub log_every: usize,
    /// Restart every persistent chain at its data point each iteration.
    pub reset_persistence: bool,
}

impl TrainConfig {
    pub fn new(
        criterion: Criterion,
        j: usize,
        batch_size: usize,
        duration: Duration,
        lr: f64,
    ) -> Self {
        Self {
            criterion,
            j,
            k: 1,
            batch_size,
            duration,
            schedule: LrSchedule::Constant,
            lr,
            proposal_lr: None,
            seed: 0,
            resample: ResamplePolicy::Adaptive,
            log_every: 1,
            reset_persistence: false,
        }
    }

    fn validate(&self) -> Result<()> {
        require(self.j >= 1, "J must be at least 1")?;
        require(self.k >= 1, "k must be at least 1")?;
        require(self.batch_size >= 1, "batch size must be at least 1")?;
        require(
            self.lr >= 0.0 && self.lr.is_finite(),
            "learning rate must be non-negative",
        )?;
        require(self.log_every >= 1, "log interval must be at least 1")?;
        if let Some(l) = self.proposal_lr {
            require(
                l >= 0.0 && l.is_finite(),
                "proposal learning rate must be non-negative",
            )?;
        }
        Ok(())
    }
}

/// Where the trainer gets its proposal from.
pub enum ProposalSetup {
    /// Fixed marginal `q`.
    Fixed(Box<dyn MarginalProposal>),
    /// Fixed autoregressive `q`, usable marginally and by SMC.
    Autoregressive(Box<dyn ArProposal>),
    /// Fixed conditional `q(·|x₀)`.
    Conditional(Box<dyn ConditionalProposal>),
    /// Marginal `q_φ` trained alongside θ on the cross-entropy surrogate.
    Adaptive(Box<dyn AdaptiveProposal>),
    /// `q = p_θ`, rebuilt from the current θ before every batch.
    ModelMatched,
}

impl ProposalSetup {
    fn name(&self) -> &'static str {
        match self {
            Self::Fixed(_) => "fixed marginal",
            Self::Autoregressive(_) => "autoregressive",
            Self::Conditional(_) => "conditional",
            Self::Adaptive(_) => "adaptive marginal",
            Self::ModelMatched => "model-matched",
        }
    }

    pub fn params(&self) -> Option<Vec<f64>> {
        match self {
            Self::Adaptive(q) => Some(q.params().to_vec()),
            _ => None,
        }
    }
}

/// One logged point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// Completed SGD iterations.
    pub iteration: usize,
    /// Mean batch loss of the last iteration; `None` before training.
    pub loss: Option<f64>,
    pub lr: f64,
    pub params: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

pub type MetricTrace = Vec<MetricRecord>;

/// Extra metrics computed from `(θ, φ)` at each record.
pub type Evaluator<'a> = dyn Fn(&[f64], Option<&[f64]>) -> BTreeMap<String, f64> + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub phi: Option<Vec<f64>>,
    pub trace: MetricTrace,
}

fn check_pairing(criterion: Criterion, setup: &ProposalSetup) -> Result<()> {
    let ok = match setup {
        ProposalSetup::Conditional(_) => criterion.is_conditional(),
        ProposalSetup::Autoregressive(_) => !criterion.is_conditional(),
        ProposalSetup::Fixed(_) | ProposalSetup::Adaptive(_) | ProposalSetup::ModelMatched => {
            !criterion.is_conditional() && criterion != Criterion::SmcRnce
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "criterion {criterion} cannot use a {} proposal",
            setup.name()
        )))
    }
}

fn total_iterations(duration: Duration, n: usize, b: usize) -> usize {
    match duration {
        Duration::Iterations(t) => t,
        Duration::Epochs(e) => e * n.div_ceil(b),
    }
}

/// Per-datum result: the estimate plus the CIS material used to adapt `q_φ`.
struct DatumResult {
    estimate: GradientEstimate,
    adaptation: Option<(WeightSet, Vec<Sample>)>,
}

#[allow(clippy::too_many_arguments)]
fn datum_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    setup: &ProposalSetup,
    marginal: Option<&dyn MarginalProposal>,
    store: &mut ChainStore,
    index: usize,
    x0: &[f64],
    cfg: &TrainConfig,
    rng: &mut DefaultRng,
) -> Result<DatumResult> {
    let adaptive = matches!(setup, ProposalSetup::Adaptive(_));
    let from_outcome = |o: &KernelOutcome| (o.weights.clone(), o.candidates.clone());
    let conditional = || match setup {
        ProposalSetup::Conditional(q) => q.as_ref(),
        _ => unreachable!("pairing checked"),
    };
    let j = cfg.j;
    let (estimate, adaptation) = match cfg.criterion {
        Criterion::MlIs | Criterion::Rnce => {
            let q = marginal.expect("marginal proposal");
            let noise = sample_batch(q, j, rng)?;
            let est = if cfg.criterion == Criterion::MlIs {
                mlis_gradient(model, theta, q, x0, &noise)?
            } else {
                rnce_gradient(model, theta, q, x0, &noise)?
            };
            let adapt = if adaptive {
                let xs = with_conditioning(x0, &noise);
                Some((is_weights(model, theta, q, &xs)?, xs))
            } else {
                None
            };
            (est, adapt)
        }
        Criterion::CdkRnce => {
            let q = marginal.expect("marginal proposal");
            let outs = cdk_rnce_outcomes(model, theta, q, x0, j, cfg.k, rng)?;
            let refs: Vec<&KernelOutcome> = outs.iter().collect();
            let est = gradient_from_outcomes(model, theta, x0, &refs)?;
            (est, adaptive.then(|| from_outcome(&outs[0])))
        }
        Criterion::PRnce => {
            let q = marginal.expect("marginal proposal");
            let slot = store.states_or_init(index, x0, 1)?;
            let outs = cdk_rnce_outcomes(model, theta, q, &slot[0].clone(), j, 1, rng)?;
            slot[0].clone_from(&outs[0].next);
            let est = gradient_from_outcomes(model, theta, x0, &[&outs[0]])?;
            (est, adaptive.then(|| from_outcome(&outs[0])))
        }
        Criterion::Cnce | Criterion::MhCnce => {
            let q = conditional();
            let noise: Vec<Sample> = (0..j).map(|_| q.sample_cond(x0, rng)).collect();
            let est = if cfg.criterion == Criterion::Cnce {
                cnce_gradient(model, theta, q, x0, &noise)?
            } else {
                mh_cnce_gradient(model, theta, q, x0, &noise)?
            };
            (est, None)
        }
        Criterion::CdkCnce => {
            let chains = cdk_pairwise_outcomes(
                model,
                theta,
                conditional(),
                x0,
                j,
                cfg.k,
                AcceptanceRule::Barker,
                rng,
            )?;
            let refs: Vec<&KernelOutcome> = chains.iter().flatten().collect();
            (gradient_from_outcomes(model, theta, x0, &refs)?, None)
        }
        Criterion::PCnce | Criterion::PMhCnce => {
            let rule = if cfg.criterion == Criterion::PCnce {
                AcceptanceRule::Barker
            } else {
                AcceptanceRule::Metropolis
            };
            let est = persistent_pairwise_gradient(
                model,
                theta,
                conditional(),
                store,
                index,
                x0,
                j,
                rule,
                rng,
            )?;
            (est, None)
        }
        Criterion::SmcRnce => {
            let ProposalSetup::Autoregressive(q) = setup else {
                unreachable!("pairing checked")
            };
            let est = smc_rnce_gradient(model, theta, q.as_ref(), x0, j, &cfg.resample, rng)?;
            (est, None)
        }
    };
    Ok(DatumResult {
        estimate,
        adaptation,
    })
}

fn diagnostics_metrics(estimates: &[GradientEstimate]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, f: &dyn Fn(&GradientEstimate) -> Option<f64>| {
        let vals: Vec<f64> = estimates.iter().filter_map(f).collect();
        if !vals.is_empty() {
            out.insert(
                name.to_string(),
                vals.iter().sum::<f64>() / vals.len() as f64,
            );
        }
    };
    put("cnce_acceptance", &|e| e.diagnostics.cnce_acceptance);
    put("mh_acceptance", &|e| e.diagnostics.mh_acceptance);
    put("ess", &|e| e.diagnostics.ess);
    out
}

/// Train `θ` from `theta0` on `data`.
///
/// Each iteration averages the per-datum gradients of one batch and takes
/// `θ ← θ - κ_t ḡ`; an adaptive proposal takes one step on the same batch.
/// A non-finite gradient aborts the run.
pub fn train(
    model: &dyn UnnormalizedModel,
    setup: &mut ProposalSetup,
    data: &[Sample],
    theta0: Vec<f64>,
    cfg: &TrainConfig,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    require(!data.is_empty(), "training data must be non-empty")?;
    crate::error::check_params(model.param_count(), &theta0)?;
    for x in data {
        crate::error::check_dim(model.dim(), x)?;
    }
    check_pairing(cfg.criterion, setup)?;
    if cfg.criterion == Criterion::SmcRnce && model.as_autoregressive().is_none() {
        return Err(Error::Unsupported("SMC-RNCE on a non-autoregressive model"));
    }

    let n = data.len();
    let total = total_iterations(cfg.duration, n, cfg.batch_size);
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut theta = theta0;
    let mut store = ChainStore::new();
    let mut trace = Vec::new();
    let mut order: Vec<usize> = Vec::new();

    let record = |iteration: usize,
                  loss: Option<f64>,
                  lr: f64,
                  theta: &[f64],
                  setup: &ProposalSetup,
                  mut metrics: BTreeMap<String, f64>| {
        if let Some(eval) = evaluator {
            let phi = setup.params();
            metrics.extend(eval(theta, phi.as_deref()));
        }
        MetricRecord {
            iteration,
            loss,
            lr,
            params: theta.to_vec(),
            metrics,
        }
    };
    trace.push(record(
        0,
        None,
        lr_schedule(cfg.schedule, cfg.lr, 0, total.saturating_sub(1)),
        &theta,
        setup,
        BTreeMap::new(),
    ));

    for t in 0..total {
        let epoch = t / batches_per_epoch;
        let slot = t % batches_per_epoch;
        if slot == 0 {
            let mut shuffle = seeded(derive_seed(cfg.seed, &[u64::MAX, epoch as u64]));
            order = permutation(n, &mut shuffle);
        }
        let batch = &order[slot * cfg.batch_size..((slot + 1) * cfg.batch_size).min(n)];
        let lr = lr_schedule(cfg.schedule, cfg.lr, t, total.saturating_sub(1));
        if cfg.reset_persistence {
            store.reset();
        }

        let matched = match setup {
            ProposalSetup::ModelMatched => Some(
                model
                    .matched_proposal(&theta)
                    .ok_or(Error::Unsupported("model-matched proposal for this model"))?,
            ),
            _ => None,
        };
        let shared: &ProposalSetup = setup;
        let marginal: Option<&dyn MarginalProposal> = match shared {
            ProposalSetup::Fixed(q) => Some(q.as_ref()),
            ProposalSetup::Autoregressive(q) => Some(q.as_ref() as &dyn MarginalProposal),
            ProposalSetup::Adaptive(q) => Some(q.as_ref() as &dyn MarginalProposal),
            ProposalSetup::ModelMatched => matched.as_deref(),
            ProposalSetup::Conditional(_) => None,
        };

        let mut estimates = Vec::with_capacity(batch.len());
        let mut phi_grad: Option<Vec<f64>> = None;
        for &i in batch {
            let mut rng = seeded(derive_seed(cfg.seed, &[t as u64, i as u64]));
            let r = datum_gradient(
                model, &theta, shared, marginal, &mut store, i, &data[i], cfg, &mut rng,
            )?;
            if !r.estimate.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} gradient at iteration {t}, datum {i}",
                    cfg.criterion
                )));
            }
            if let (Some((w, xs)), ProposalSetup::Adaptive(q)) = (&r.adaptation, shared) {
                let g = proposal_loss_gradient(q.as_ref(), w, xs)?;
                match phi_grad.as_mut() {
                    Some(acc) => add_scaled(acc, 1.0, &g),
                    None => phi_grad = Some(g),
                }
            }
            estimates.push(r.estimate);
        }

        let inv_b = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; theta.len()];
        for e in &estimates {
            add_scaled(&mut grad, inv_b, &e.grad);
        }
        let loss = estimates.iter().map(|e| e.loss).sum::<f64>() * inv_b;
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= lr * g;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after iteration {t}")));
        }
        if let (Some(g), ProposalSetup::Adaptive(q)) = (phi_grad, &mut *setup) {
            let plr = cfg.proposal_lr.map_or(lr, |base| {
                lr_schedule(cfg.schedule, base, t, total.saturating_sub(1))
            });
            let phi: Vec<f64> = q
                .params()
                .iter()
                .zip(&g)
                .map(|(p, g)| p - plr * g * inv_b)
                .collect();
            q.set_params(phi)?;
        }

        let done = t + 1;
        if done % cfg.log_every == 0 || done == total {
            trace.push(record(
                done,
                Some(loss),
                lr,
                &theta,
                setup,
                diagnostics_metrics(&estimates),
            ));
        }
    }

    Ok(TrainOutcome {
        phi: setup.params(),
        theta,
        trace,
    })
}

/// Mean of per-datum gradients, exposed for batch-level checks.
pub fn batch_mean(grads: &[Vec<f64>]) -> Vec<f64> {
    let inv = 1.0 / grads.len() as f64;
    let mut out = vec![0.0; grads.first().map_or(0, Vec::len)];
    for g in grads {
        add_scaled(&mut out, inv, g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianDiagModel;
    use crate::proposals::{GaussianCondProposal, GaussianDiagProposal};

    fn data(n: usize) -> Vec<Sample> {
        let m = GaussianDiagModel::new(2);
        let theta = GaussianDiagModel::params(&[0.0, 0.0], &[1.0, 1.0]);
        let mut rng = seeded(99);
        (0..n)
            .map(|_| m.sample_exact(&theta, &mut rng).unwrap())
            .collect()
    }

    fn theta0() -> Vec<f64> {
        GaussianDiagModel::params(&[1.0, 1.0], &[1.5, 1.5])
    }

    #[test]
    fn schedules() {
        let lin = LrSchedule::LinearDecay { end: 0.001 };
        assert!((lr_schedule(lin, 0.01, 50, 100) - 0.0055).abs() < 1e-15);
        assert_eq!(lr_schedule(LrSchedule::Constant, 0.3, 7, 10), 0.3);
        let cos = LrSchedule::Cosine { floor: 0.1 };
        assert!((lr_schedule(cos, 1.0, 10, 10) - 0.1).abs() < 1e-15);
        assert_eq!(lr_schedule(cos, 1.0, 0, 10), 1.0);
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert!("nce".parse::<Criterion>().is_err());
    }

    #[test]
    fn zero_lr_keeps_theta() {
        let m = GaussianDiagModel::new(2);
        let mut setup = ProposalSetup::Fixed(Box::new(
            GaussianDiagProposal::isotropic(&[0.0, 0.0], 2.0).unwrap(),
        ));
        let cfg = TrainConfig::new(Criterion::Rnce, 3, 4, Duration::Iterations(5), 0.0);
        let out = train(&m, &mut setup, &data(10), theta0(), &cfg, None).unwrap();
        assert_eq!(out.theta, theta0());
        assert_eq!(out.trace.len(), 6);
    }

    #[test]
    fn rejects_bad_pairing() {
        let m = GaussianDiagModel::new(2);
        let mut setup =
            ProposalSetup::Conditional(Box::new(GaussianCondProposal::new(2, 1.0).unwrap()));
        let cfg = TrainConfig::new(Criterion::Rnce, 3, 4, Duration::Iterations(1), 0.1);
        assert!(train(&m, &mut setup, &data(10), theta0(), &cfg, None).is_err());
        let mut setup = ProposalSetup::ModelMatched;
        let cfg = TrainConfig::new(Criterion::SmcRnce, 3, 4, Duration::Iterations(1), 0.1);
        assert!(train(&m, &mut setup, &data(10), theta0(), &cfg, None).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let m = GaussianDiagModel::new(2);
        let run = || {
            let mut setup = ProposalSetup::Adaptive(Box::new(
                GaussianDiagProposal::isotropic(&[0.0, 0.0], 2.0).unwrap(),
            ));
            let cfg = TrainConfig::new(Criterion::Rnce, 3, 4, Duration::Epochs(2), 0.05);
            train(&m, &mut setup, &data(10), theta0(), &cfg, None).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn persistent_with_reset_matches_plain() {
        let m = GaussianDiagModel::new(2);
        let q = GaussianCondProposal::new(2, 0.7).unwrap();
        let run = |c: Criterion, reset: bool| {
            let mut setup = ProposalSetup::Conditional(Box::new(q));
            let mut cfg = TrainConfig::new(c, 3, 4, Duration::Epochs(3), 0.05);
            cfg.reset_persistence = reset;
            train(&m, &mut setup, &data(10), theta0(), &cfg, None).unwrap()
        };
        assert_eq!(run(Criterion::PCnce, true), run(Criterion::Cnce, false));
        assert_eq!(run(Criterion::PMhCnce, true), run(Criterion::MhCnce, false));
        assert_ne!(run(Criterion::PCnce, false), run(Criterion::Cnce, false));
    }
}
