//! The oracle suite: every exact identity, enumeration property and
//! gradient check as a named, self-contained check with a pinned tolerance.
//!
//! Checks are grouped by acceptance criterion (1 to 8). Each returns the worst
//! discrepancy seen over its instances; most pass when that is at most the
//! tolerance, the bias witness passes when it exceeds it.

use std::f64::consts::LN_2;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{
    cis_partition_estimate, cnce_gradient, cnce_loss, grad_log_cis_partition,
    grad_log_is_partition, is_weights, log_mean_exp, mlis_gradient, rnce_gradient, rnce_loss,
    with_conditioning,
};
use crate::kernels::{
    cd1_rnce_gradient, cdk_cnce_gradient, exact_transition_matrix, AcceptanceRule, KernelSpec,
};
use crate::models::{
    DiscreteARModel, DiscreteToyModel, GaussianDiagModel, LinearGaussianARModel, RingModel, Sample,
    UnnormalizedModel,
};
use crate::numerics::sigmoid;
use crate::oracles::{
    enumerate_expectation, enumerate_smc_expectation, finite_difference_gradient, relative_error,
    ConditioningLaw, EnumProposal, EnumerationInstance, Outcome, FD_STEP,
};
use crate::proposals::{
    proposal_loss_gradient, sample_batch, ARCondProposal, AdaptiveProposal, DiscreteARProposal,
    DiscreteCondProposal, DiscreteProposal, GaussianCondProposal, GaussianDiagProposal,
    MarginalProposal, SoftmaxProposal,
};
use crate::rng::{derive_seed, seeded, standard_normal, DefaultRng};
use crate::smc::{
    csmc_sweep, smc_rnce_gradient_with, smc_sweep, sweep, Recording, ResamplePolicy, RngChoices,
};
use crate::trainer::{train, Criterion, Duration, ProposalSetup, TrainConfig};

/// Identity tolerance for closed-form rearrangements.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Tolerance for exact enumeration oracles.
pub const ENUMERATION_TOL: f64 = 1e-10;
/// Required gap between the IS gradient and the truth on the asymmetric instance.
pub const BIAS_WITNESS_GAP: f64 = 1e-3;
/// Stationarity residual of the exact CIS transition matrix.
pub const INVARIANCE_TOL: f64 = 1e-10;
/// Entrywise detailed-balance residual of the two-point kernels.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;
/// Relative error accepted between analytic and central-difference gradients.
pub const FD_TOL: f64 = 1e-5;
/// `log Ẑ` error with proposals equal to the model conditionals.
pub const EXACT_LOG_Z_TOL: f64 = 1e-8;

/// How a check compares its worst value with the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// Pass when `worst ≤ tolerance`.
    AtMost,
    /// Pass when `worst > tolerance`.
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    /// Acceptance criterion the check belongs to.
    pub criterion: u8,
    pub id: &'static str,
    pub statement: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub instances: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        match self.comparison {
            Comparison::AtMost => self.worst <= self.tolerance,
            Comparison::Above => self.worst > self.tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::Above => ">",
        };
        write!(
            f,
            "{} [{}] {}: worst {:.3e} {op} {:.0e} over {} instances ({})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.criterion,
            self.id,
            self.worst,
            self.tolerance,
            self.instances,
            self.statement
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random instances per model family for the identity checks.
    pub instances: usize,
    /// Random points per gradient in the finite-difference checks.
    pub fd_points: usize,
    /// Replace the Barker acceptance with a mis-normalised one. The
    /// detailed-balance check must then fail.
    pub corrupt_acceptance: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            instances: 100,
            fd_points: 100,
            corrupt_acceptance: false,
        }
    }
}

/// `r / (r + 2)` instead of `r / (r + 1)`: the test hook for the mutation check.
pub fn corrupted_barker(log_ratio: f64) -> f64 {
    sigmoid(log_ratio - LN_2)
}

/// Running maximum of a discrepancy.
#[derive(Default)]
struct Worst {
    value: f64,
    count: usize,
}

impl Worst {
    fn push(&mut self, v: f64) {
        self.value = if v.is_nan() {
            f64::INFINITY
        } else {
            self.value.max(v)
        };
        self.count += 1;
    }

    fn result(
        self,
        criterion: u8,
        id: &'static str,
        statement: &'static str,
        tolerance: f64,
    ) -> CheckResult {
        CheckResult {
            criterion,
            id,
            statement,
            worst: self.value,
            tolerance,
            comparison: Comparison::AtMost,
            instances: self.count,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn normals(rng: &mut DefaultRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * standard_normal(rng)).collect()
}

fn uniforms(rng: &mut DefaultRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_probs(rng: &mut DefaultRng, k: usize) -> Vec<f64> {
    let raw = uniforms(rng, k, 0.1, 1.0);
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Toy model on `{0, …, K-1}` with random features, and a random θ.
fn random_toy(rng: &mut DefaultRng, k: usize) -> (DiscreteToyModel, Vec<f64>) {
    let p = rng.random_range(1..=3);
    let support: Vec<Sample> = (0..k).map(|i| vec![i as f64]).collect();
    let features = (0..k).map(|_| normals(rng, p, 1.0)).collect();
    let model = DiscreteToyModel::new(support, features).expect("valid toy model");
    let theta = normals(rng, p, 0.8);
    (model, theta)
}

fn random_marginal(rng: &mut DefaultRng, model: &DiscreteToyModel) -> DiscreteProposal {
    let k = model.size();
    DiscreteProposal::new(model.support().to_vec(), random_probs(rng, k)).expect("valid proposal")
}

fn random_conditional(rng: &mut DefaultRng, model: &DiscreteToyModel) -> DiscreteCondProposal {
    let k = model.size();
    let table = (0..k).map(|_| random_probs(rng, k)).collect();
    DiscreteCondProposal::new(model.support().to_vec(), table).expect("valid proposal")
}

fn random_ar_theta(rng: &mut DefaultRng, dim: usize) -> Vec<f64> {
    let blocks: Vec<_> = (0..dim)
        .map(|d| {
            (
                normals(rng, d, 0.5),
                standard_normal(rng),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    LinearGaussianARModel::params(&blocks)
}

fn random_ar_proposal(rng: &mut DefaultRng, dim: usize) -> ARCondProposal {
    let blocks: Vec<_> = (0..dim)
        .map(|d| {
            (
                normals(rng, d, 0.3),
                standard_normal(rng),
                rng.random_range(0.8..2.0),
            )
        })
        .collect();
    ARCondProposal::new(dim, LinearGaussianARModel::params(&blocks)).expect("valid proposal")
}

fn random_discrete_ar(
    rng: &mut DefaultRng,
    dim: usize,
    k: usize,
) -> (DiscreteARModel, Vec<f64>, DiscreteARProposal) {
    let values: Vec<f64> = (0..k).map(|i| i as f64 - 0.5 * (k as f64 - 1.0)).collect();
    let model = DiscreteARModel::new(dim, values.clone()).expect("valid model");
    let theta = normals(rng, model.param_count(), 0.7);
    let probs = (0..dim).map(|_| random_probs(rng, k)).collect();
    let prop = DiscreteARProposal::new(values, probs).expect("valid proposal");
    (model, theta, prop)
}

/// One randomly drawn instance of a model family with a matching marginal proposal.
struct FamilyInstance {
    model: Box<dyn UnnormalizedModel>,
    theta: Vec<f64>,
    q: Box<dyn MarginalProposal>,
}

const FAMILIES: [&str; 5] = [
    "gaussian",
    "ring",
    "linear-ar",
    "discrete-toy",
    "discrete-ar",
];

fn family_instance(family: &str, rng: &mut DefaultRng) -> FamilyInstance {
    match family {
        "gaussian" => {
            let d = rng.random_range(1..=4);
            let theta =
                GaussianDiagModel::params(&normals(rng, d, 1.0), &uniforms(rng, d, 0.5, 2.0));
            let q = GaussianDiagProposal::new(
                d,
                [normals(rng, d, 0.5), uniforms(rng, d, 1.0, 2.5)].concat(),
            )
            .expect("valid proposal");
            FamilyInstance {
                model: Box::new(GaussianDiagModel::new(d)),
                theta,
                q: Box::new(q),
            }
        }
        "ring" => {
            let d = rng.random_range(2..=5);
            let mu = rng.random_range(1.0..3.0);
            FamilyInstance {
                model: Box::new(RingModel::with_dim(mu, d)),
                theta: vec![rng.random_range(-1.0..1.5)],
                q: Box::new(
                    GaussianDiagProposal::isotropic(&vec![0.0; d], mu).expect("valid proposal"),
                ),
            }
        }
        "linear-ar" => {
            let d = rng.random_range(1..=4);
            FamilyInstance {
                model: Box::new(LinearGaussianARModel::new(d)),
                theta: random_ar_theta(rng, d),
                q: Box::new(random_ar_proposal(rng, d)),
            }
        }
        "discrete-toy" => {
            let k = rng.random_range(2..=6);
            let (model, theta) = random_toy(rng, k);
            let q = random_marginal(rng, &model);
            FamilyInstance {
                model: Box::new(model),
                theta,
                q: Box::new(q),
            }
        }
        "discrete-ar" => {
            let d = rng.random_range(1..=3);
            let k = rng.random_range(2..=3);
            let (model, theta, q) = random_discrete_ar(rng, d, k);
            FamilyInstance {
                model: Box::new(model),
                theta,
                q: Box::new(q),
            }
        }
        other => unreachable!("unknown family {other}"),
    }
}

/// A data-like point: a proposal draw, so it lies in every support used here.
fn conditioning_point(inst: &FamilyInstance, rng: &mut DefaultRng) -> Sample {
    inst.q.sample(rng)
}

// ---------------------------------------------------------------- criterion 1

/// Ranking NCE is ML with the CIS estimate: `∇L_R = -∇log p̃(x₀) + ∇log Ẑ^CIS`.
pub fn ranking_nce_equals_cis_ml(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (f, family) in FAMILIES.iter().enumerate() {
        for i in 0..opts.instances {
            let mut rng = seeded(derive_seed(opts.seed, &[1, f as u64, i as u64]));
            let inst = family_instance(family, &mut rng);
            let x0 = conditioning_point(&inst, &mut rng);
            let j = rng.random_range(1..=6);
            let noise = sample_batch(inst.q.as_ref(), j, &mut rng)?;
            let est = rnce_gradient(
                inst.model.as_ref(),
                &inst.theta,
                inst.q.as_ref(),
                &x0,
                &noise,
            )?;
            let mut reference = grad_log_cis_partition(
                inst.model.as_ref(),
                &inst.theta,
                inst.q.as_ref(),
                &x0,
                &noise,
            )?;
            let g0 = inst.model.grad_log_unnorm(&inst.theta, &x0)?;
            reference.iter_mut().zip(&g0).for_each(|(r, g)| *r -= g);
            worst.push(relative_error(&est.grad, &reference));
        }
    }
    Ok(worst.result(
        1,
        "ranking-nce-equals-cis-ml",
        "ranking-NCE gradient equals the ML gradient with the CIS normaliser estimate",
        IDENTITY_TOL,
    ))
}

// ---------------------------------------------------------------- criterion 2

fn enumeration_instances(
    opts: &SuiteOptions,
    tag: u64,
) -> impl Iterator<Item = (DefaultRng, usize, usize)> + '_ {
    (2..=4usize).flat_map(move |k| {
        (1..=2usize).flat_map(move |j| {
            (0..4u64).map(move |r| {
                (
                    seeded(derive_seed(opts.seed, &[tag, k as u64, j as u64, r])),
                    k,
                    j,
                )
            })
        })
    })
}

fn toy_weights(
    model: &DiscreteToyModel,
    theta: &[f64],
    q: &DiscreteProposal,
    samples: &[Sample],
) -> Result<Vec<f64>> {
    Ok(is_weights(model, theta, q, samples)?.unnorm())
}

/// `E[∇log Ẑ^CIS] = ∇log Z` for `x₀ ~ p_θ`, any fixed `q`.
pub fn cis_log_partition_gradient_unbiased(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (mut rng, k, j) in enumeration_instances(opts, 2) {
        let (model, theta) = random_toy(&mut rng, k);
        let q = random_marginal(&mut rng, &model);
        let truth = model.grad_log_partition(&theta);
        let inst = EnumerationInstance {
            model: model.clone(),
            theta: theta.clone(),
            proposal: EnumProposal::Marginal(q.clone()),
            j,
            law: ConditioningLaw::Model,
        };
        let stat = |o: &Outcome<'_>| {
            grad_log_cis_partition(&model, &theta, &q, &o.samples[0], &o.samples[1..])
        };
        worst.push(max_abs_diff(&enumerate_expectation(&inst, &stat)?, &truth));
    }
    Ok(worst.result(
        2,
        "cis-log-partition-gradient-unbiased",
        "expected CIS log-normaliser gradient equals the exact one when x0 follows the model",
        ENUMERATION_TOL,
    ))
}

/// Under the CIS joint law, `E[f(x_i) / Ẑ^CIS] = E_q[f] / Z` for every fixed `i`.
pub fn general_cis_identity(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (mut rng, k, j) in enumeration_instances(opts, 3) {
        let (model, theta) = random_toy(&mut rng, k);
        let q = random_marginal(&mut rng, &model);
        let f_values: Vec<f64> = normals(&mut rng, k, 1.0);
        let z = model.log_partition(&theta)?.exp();
        let eq_f: f64 = q
            .probabilities()
            .iter()
            .zip(&f_values)
            .map(|(p, f)| p * f)
            .sum();
        let inst = EnumerationInstance {
            model: model.clone(),
            theta: theta.clone(),
            proposal: EnumProposal::Marginal(q.clone()),
            j,
            law: ConditioningLaw::CisJoint,
        };
        let stat = |o: &Outcome<'_>| {
            let z_hat = cis_partition_estimate(&toy_weights(&model, &theta, &q, o.samples)?)?;
            Ok(o.indices.iter().map(|&i| f_values[i] / z_hat).collect())
        };
        let got = enumerate_expectation(&inst, &stat)?;
        for v in got {
            worst.push((v - eq_f / z).abs() * z.max(1.0));
        }
    }
    Ok(worst.result(
        2,
        "general-cis-identity",
        "under the CIS joint law E[f(x_i)/Z_cis] equals E_q[f]/Z for every index",
        ENUMERATION_TOL,
    ))
}

/// The instance on which the self-normalised IS gradient is visibly biased.
pub fn bias_witness_instance() -> (DiscreteToyModel, Vec<f64>, DiscreteProposal) {
    let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0]).expect("valid model");
    let theta = vec![0.0, 2f64.ln(), 0.25f64.ln()];
    let q = DiscreteProposal::new(model.support().to_vec(), vec![0.1, 0.2, 0.7])
        .expect("valid proposal");
    (model, theta, q)
}

/// `E[∇log Ẑ^IS]` over `x_{1:J} ~ q` misses `∇log Z` on an asymmetric instance.
pub fn is_gradient_bias_witness(_opts: &SuiteOptions) -> Result<CheckResult> {
    let (model, theta, q) = bias_witness_instance();
    let truth = model.grad_log_partition(&theta);
    let mut gap = f64::INFINITY;
    let mut count = 0;
    for j in 1..=2 {
        // x₀ is ignored by the statistic; fixing it leaves x_{1:J} ~ q.
        let inst = EnumerationInstance {
            model: model.clone(),
            theta: theta.clone(),
            proposal: EnumProposal::Marginal(q.clone()),
            j,
            law: ConditioningLaw::Fixed(0),
        };
        let stat = |o: &Outcome<'_>| grad_log_is_partition(&model, &theta, &q, &o.samples[1..]);
        gap = gap.min(max_abs_diff(&enumerate_expectation(&inst, &stat)?, &truth));
        count += 1;
    }
    Ok(CheckResult {
        criterion: 2,
        id: "is-gradient-bias-witness",
        statement:
            "the self-normalised IS log-normaliser gradient is biased on an asymmetric instance",
        worst: gap,
        tolerance: BIAS_WITNESS_GAP,
        comparison: Comparison::Above,
        instances: count,
    })
}

// ---------------------------------------------------------------- criterion 3

/// CD-1 with the CIS kernel and `z` marginalised is the ranking-NCE gradient.
pub fn cd1_cis_kernel_equals_ranking_nce(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (f, family) in FAMILIES.iter().enumerate() {
        for i in 0..opts.instances {
            let mut rng = seeded(derive_seed(opts.seed, &[4, f as u64, i as u64]));
            let inst = family_instance(family, &mut rng);
            let x0 = conditioning_point(&inst, &mut rng);
            let j = rng.random_range(1..=6);
            let stream = rng.random::<u64>();
            let cd = cd1_rnce_gradient(
                inst.model.as_ref(),
                &inst.theta,
                inst.q.as_ref(),
                &x0,
                j,
                &mut seeded(stream),
            )?;
            let noise = sample_batch(inst.q.as_ref(), j, &mut seeded(stream))?;
            let r = rnce_gradient(
                inst.model.as_ref(),
                &inst.theta,
                inst.q.as_ref(),
                &x0,
                &noise,
            )?;
            worst.push(max_abs_diff(&cd.grad, &r.grad).max((cd.loss - r.loss).abs()));
        }
    }
    Ok(worst.result(
        3,
        "cd1-cis-kernel-equals-ranking-nce",
        "one CIS-kernel contrastive-divergence step reproduces the ranking-NCE gradient on shared samples",
        IDENTITY_TOL,
    ))
}

/// CD-1 with `J` two-point Barker chains is the CNCE gradient.
pub fn cd1_pairwise_kernel_equals_cnce(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for i in 0..opts.instances {
        let mut rng = seeded(derive_seed(opts.seed, &[5, i as u64]));
        let stream = rng.random::<u64>();
        let j = rng.random_range(1..=6);
        let check = |model: &dyn UnnormalizedModel,
                     theta: &[f64],
                     q: &dyn crate::proposals::ConditionalProposal,
                     x0: &[f64]|
         -> Result<f64> {
            let cd = cdk_cnce_gradient(
                model,
                theta,
                q,
                x0,
                j,
                1,
                AcceptanceRule::Barker,
                &mut seeded(stream),
            )?;
            let mut r = seeded(stream);
            let noise: Vec<Sample> = (0..j).map(|_| q.sample_cond(x0, &mut r)).collect();
            let c = cnce_gradient(model, theta, q, x0, &noise)?;
            Ok(max_abs_diff(&cd.grad, &c.grad).max((cd.loss - c.loss).abs()))
        };
        let d = rng.random_range(1..=4);
        let gm = GaussianDiagModel::new(d);
        let gt =
            GaussianDiagModel::params(&normals(&mut rng, d, 1.0), &uniforms(&mut rng, d, 0.5, 2.0));
        let gq = GaussianCondProposal::new(d, rng.random_range(0.2..1.5))?;
        let x0 = normals(&mut rng, d, 1.0);
        worst.push(check(&gm, &gt, &gq, &x0)?);

        let (tm, tt) = {
            let k = rng.random_range(2..=6);
            random_toy(&mut rng, k)
        };
        let tq = random_conditional(&mut rng, &tm);
        let x0 = tm.support()[rng.random_range(0..tm.size())].clone();
        worst.push(check(&tm, &tt, &tq, &x0)?);
    }
    Ok(worst.result(
        3,
        "cd1-pairwise-kernel-equals-cnce",
        "one step of the two-point Barker kernel per chain reproduces the CNCE gradient on shared samples",
        IDENTITY_TOL,
    ))
}

/// Swapping an estimator for its kernel form leaves whole training runs unchanged.
pub fn training_trace_equivalence(opts: &SuiteOptions) -> Result<CheckResult> {
    let model = GaussianDiagModel::new(3);
    let truth = GaussianDiagModel::params(&[0.5, -0.5, 1.0], &[1.0, 0.7, 1.3]);
    let mut rng = seeded(derive_seed(opts.seed, &[6]));
    let data: Vec<Sample> = (0..40)
        .map(|_| model.sample_exact(&truth, &mut rng))
        .collect::<Result<_>>()?;
    let theta0 = GaussianDiagModel::params(&[2.0, 2.0, 2.0], &[1.5, 1.5, 1.5]);
    let marginal =
        || GaussianDiagProposal::isotropic(&[0.0, 0.0, 0.0], 2.0).expect("valid proposal");
    let conditional = || GaussianCondProposal::new(3, 0.6).expect("valid proposal");
    let run = |criterion: Criterion, k: usize, reset: bool, cond: bool| -> Result<_> {
        let mut setup = if cond {
            ProposalSetup::Conditional(Box::new(conditional()))
        } else {
            ProposalSetup::Fixed(Box::new(marginal()))
        };
        let mut cfg = TrainConfig::new(criterion, 4, 8, Duration::Epochs(3), 0.05);
        cfg.k = k;
        cfg.seed = opts.seed;
        cfg.reset_persistence = reset;
        Ok(train(&model, &mut setup, &data, theta0.clone(), &cfg, None)?.trace)
    };
    let pairs = [
        (
            run(Criterion::Rnce, 1, false, false)?,
            run(Criterion::CdkRnce, 1, false, false)?,
        ),
        (
            run(Criterion::Cnce, 1, false, true)?,
            run(Criterion::CdkCnce, 1, false, true)?,
        ),
        (
            run(Criterion::Cnce, 1, false, true)?,
            run(Criterion::PCnce, 1, true, true)?,
        ),
        (
            run(Criterion::MhCnce, 1, false, true)?,
            run(Criterion::PMhCnce, 1, true, true)?,
        ),
    ];
    let mut worst = Worst::default();
    for (a, b) in &pairs {
        let mismatch = a.len() != b.len()
            || a.iter()
                .zip(b)
                .any(|(x, y)| x.params != y.params || x.loss != y.loss);
        worst.push(if mismatch { 1.0 } else { 0.0 });
    }
    Ok(worst.result(
        3,
        "training-trace-equivalence",
        "estimator and kernel forms, and persistent runs with per-iteration reset, give identical training traces",
        0.0,
    ))
}

// ---------------------------------------------------------------- criterion 4

/// With `q = p_θ`: `E[∇L_R] = (J/(J+1)) ∇(-log p_θ(x₀))` and `E[∇L_C] = ½ ∇(-log p_θ(x₀))`.
pub fn model_proposal_scaled_gradients(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut ranking = Worst::default();
    let mut conditional = Worst::default();
    for j in 1..=3usize {
        for r in 0..4u64 {
            let mut rng = seeded(derive_seed(opts.seed, &[7, j as u64, r]));
            let k = rng.random_range(2..=4);
            let (model, theta) = random_toy(&mut rng, k);
            let p = model.probabilities(&theta);
            let q = DiscreteProposal::new(model.support().to_vec(), p.clone())?;
            let qc = DiscreteCondProposal::new(model.support().to_vec(), vec![p.clone(); k])?;
            let dlogz = model.grad_log_partition(&theta);
            for i in 0..k {
                let x0 = &model.support()[i];
                let nll_grad: Vec<f64> = model
                    .grad_log_unnorm(&theta, x0)?
                    .iter()
                    .zip(&dlogz)
                    .map(|(g, z)| z - g)
                    .collect();
                let law = ConditioningLaw::Fixed(i);
                let inst = EnumerationInstance {
                    model: model.clone(),
                    theta: theta.clone(),
                    proposal: EnumProposal::Marginal(q.clone()),
                    j,
                    law: law.clone(),
                };
                let stat = |o: &Outcome<'_>| {
                    Ok(rnce_gradient(&model, &theta, &q, x0, &o.samples[1..])?.grad)
                };
                let got = enumerate_expectation(&inst, &stat)?;
                let scale = j as f64 / (j as f64 + 1.0);
                let want: Vec<f64> = nll_grad.iter().map(|v| scale * v).collect();
                ranking.push(max_abs_diff(&got, &want));

                let inst = EnumerationInstance {
                    proposal: EnumProposal::Conditional(qc.clone()),
                    ..inst
                };
                let stat = |o: &Outcome<'_>| {
                    Ok(cnce_gradient(&model, &theta, &qc, x0, &o.samples[1..])?.grad)
                };
                let got = enumerate_expectation(&inst, &stat)?;
                let want: Vec<f64> = nll_grad.iter().map(|v| 0.5 * v).collect();
                conditional.push(max_abs_diff(&got, &want));
            }
        }
    }
    Ok(vec![
        ranking.result(
            4,
            "model-proposal-ranking-nce-scaled-gradient",
            "with the model as proposal the expected ranking-NCE gradient is J/(J+1) times the NLL gradient",
            ENUMERATION_TOL,
        ),
        conditional.result(
            4,
            "model-proposal-cnce-half-gradient",
            "with the model as conditional proposal the expected CNCE gradient is half the NLL gradient",
            ENUMERATION_TOL,
        ),
    ])
}

// ---------------------------------------------------------------- criterion 5

/// Exact kernel matrices: CIS leaves `p_θ` invariant, the two-point kernels
/// satisfy detailed balance entrywise.
pub fn kernel_validity(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let barker = if opts.corrupt_acceptance {
        AcceptanceRule::Custom(corrupted_barker)
    } else {
        AcceptanceRule::Barker
    };
    let mut cis = Worst::default();
    let mut cnce = Worst::default();
    let mut mh = Worst::default();
    for k in 2..=crate::kernels::MAX_EXACT_SUPPORT {
        for r in 0..4u64 {
            let mut rng = seeded(derive_seed(opts.seed, &[8, k as u64, r]));
            let (model, theta) = random_toy(&mut rng, k);
            let pi = model.probabilities(&theta);
            let q = random_marginal(&mut rng, &model);
            for j in 1..=crate::kernels::MAX_EXACT_CIS_J {
                let m = exact_transition_matrix(&model, &theta, KernelSpec::Cis { q: &q, j })?;
                cis.push(m.stationary_residual(&pi).max(m.row_sum_error()));
            }
            let qc = random_conditional(&mut rng, &model);
            let m = exact_transition_matrix(
                &model,
                &theta,
                KernelSpec::Pairwise {
                    q: &qc,
                    rule: barker,
                },
            )?;
            cnce.push(m.detailed_balance_residual(&pi).max(m.row_sum_error()));
            let m = exact_transition_matrix(
                &model,
                &theta,
                KernelSpec::Pairwise {
                    q: &qc,
                    rule: AcceptanceRule::Metropolis,
                },
            )?;
            mh.push(m.detailed_balance_residual(&pi).max(m.row_sum_error()));
        }
    }
    Ok(vec![
        cis.result(
            5,
            "cis-kernel-invariance",
            "the exact CIS transition matrix leaves the model distribution invariant",
            INVARIANCE_TOL,
        ),
        cnce.result(
            5,
            "cnce-kernel-detailed-balance",
            "the two-point Barker kernel satisfies detailed balance entrywise",
            DETAILED_BALANCE_TOL,
        ),
        mh.result(
            5,
            "mh-kernel-detailed-balance",
            "the two-point Metropolis kernel satisfies detailed balance entrywise",
            DETAILED_BALANCE_TOL,
        ),
    ])
}

// ---------------------------------------------------------------- criterion 6

/// `E[∇_φ L̂(φ)]` with `x₀ ~ p_θ`, `x_{1:J} ~ q_φ` equals `∇_φ E_{p_θ}[-log q_φ]`.
pub fn adaptive_proposal_gradient_unbiased(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (mut rng, k, j) in enumeration_instances(opts, 9) {
        let (model, theta) = random_toy(&mut rng, k);
        let soft = SoftmaxProposal::new(model.support().to_vec(), normals(&mut rng, k, 1.0))?;
        let q = DiscreteProposal::new(model.support().to_vec(), soft.probabilities())?;
        let p = model.probabilities(&theta);
        let mut want = vec![0.0; soft.params().len()];
        for (x, px) in model.support().iter().zip(&p) {
            let g = soft.grad_params_log_density(x)?;
            want.iter_mut().zip(g).for_each(|(w, g)| *w -= px * g);
        }
        let inst = EnumerationInstance {
            model: model.clone(),
            theta: theta.clone(),
            proposal: EnumProposal::Marginal(q),
            j,
            law: ConditioningLaw::Model,
        };
        let stat = |o: &Outcome<'_>| {
            let w = is_weights(&model, &theta, &soft, o.samples)?;
            proposal_loss_gradient(&soft, &w, o.samples)
        };
        worst.push(max_abs_diff(&enumerate_expectation(&inst, &stat)?, &want));
    }
    Ok(worst.result(
        6,
        "adaptive-proposal-gradient-unbiased",
        "the CIS estimate of the proposal cross-entropy gradient is unbiased when x0 follows the model",
        ENUMERATION_TOL,
    ))
}

// ---------------------------------------------------------------- criterion 7

fn fd_check(
    worst: &mut Worst,
    f: &dyn Fn(&[f64]) -> Result<f64>,
    analytic: &[f64],
    at: &[f64],
) -> Result<()> {
    let fd = finite_difference_gradient(f, at, FD_STEP)?;
    worst.push(relative_error(analytic, &fd));
    Ok(())
}

/// Model gradients `∇_θ log p̃_θ(x)`, autoregressive conditionals and the
/// exact discrete log-normaliser gradient.
pub fn model_gradients_match_finite_differences(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (f, family) in FAMILIES.iter().enumerate() {
        for i in 0..opts.fd_points {
            let mut rng = seeded(derive_seed(opts.seed, &[10, f as u64, i as u64]));
            let inst = family_instance(family, &mut rng);
            let x = conditioning_point(&inst, &mut rng);
            let m = inst.model.as_ref();
            fd_check(
                &mut worst,
                &|t| m.log_unnorm(t, &x),
                &m.grad_log_unnorm(&inst.theta, &x)?,
                &inst.theta,
            )?;
            if let Some(ar) = m.as_autoregressive() {
                let d = rng.random_range(0..m.dim());
                let (prefix, v) = (&x[..d], x[d]);
                fd_check(
                    &mut worst,
                    &|t| Ok(ar.log_unnorm_cond(t, d, prefix, v)),
                    &ar.grad_log_unnorm_cond(&inst.theta, d, prefix, v),
                    &inst.theta,
                )?;
            }
        }
    }
    for i in 0..opts.fd_points {
        let mut rng = seeded(derive_seed(opts.seed, &[11, i as u64]));
        let (model, theta) = {
            let k = rng.random_range(2..=6);
            random_toy(&mut rng, k)
        };
        fd_check(
            &mut worst,
            &|t| model.log_partition(t),
            &model.grad_log_partition(&theta),
            &theta,
        )?;
    }
    Ok(worst.result(
        7,
        "model-gradients-match-finite-differences",
        "analytic model gradients agree with central differences",
        FD_TOL,
    ))
}

/// Proposal score functions `∇_φ log q_φ(x)`.
pub fn proposal_gradients_match_finite_differences(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for i in 0..opts.fd_points {
        let mut rng = seeded(derive_seed(opts.seed, &[12, i as u64]));
        let d = rng.random_range(1..=4);
        let phi = [normals(&mut rng, d, 1.0), uniforms(&mut rng, d, 0.5, 2.0)].concat();
        let q = GaussianDiagProposal::new(d, phi.clone())?;
        let x = q.sample(&mut rng);
        fd_check(
            &mut worst,
            &|p| GaussianDiagProposal::new(d, p.to_vec())?.log_density(&x),
            &q.grad_params_log_density(&x)?,
            &phi,
        )?;

        let k = rng.random_range(2..=6);
        let support: Vec<Sample> = (0..k).map(|v| vec![v as f64]).collect();
        let logits = normals(&mut rng, k, 1.0);
        let q = SoftmaxProposal::new(support.clone(), logits.clone())?;
        let x = q.sample(&mut rng);
        fd_check(
            &mut worst,
            &|p| SoftmaxProposal::new(support.clone(), p.to_vec())?.log_density(&x),
            &q.grad_params_log_density(&x)?,
            &logits,
        )?;

        let q = random_ar_proposal(&mut rng, d);
        let phi = q.params().to_vec();
        let x = q.sample(&mut rng);
        fd_check(
            &mut worst,
            &|p| ARCondProposal::new(d, p.to_vec())?.log_density(&x),
            &q.grad_params_log_density(&x)?,
            &phi,
        )?;
    }
    Ok(worst.result(
        7,
        "proposal-gradients-match-finite-differences",
        "analytic proposal score functions agree with central differences",
        FD_TOL,
    ))
}

/// Losses with frozen samples: ML-IS, ranking NCE, CNCE, SMC-RNCE with
/// frozen random choices, and the proposal surrogate with frozen weights.
pub fn loss_gradients_match_finite_differences(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for (f, family) in FAMILIES.iter().enumerate() {
        for i in 0..opts.fd_points {
            let mut rng = seeded(derive_seed(opts.seed, &[13, f as u64, i as u64]));
            let inst = family_instance(family, &mut rng);
            let (m, q, theta) = (inst.model.as_ref(), inst.q.as_ref(), &inst.theta);
            let x0 = conditioning_point(&inst, &mut rng);
            let noise = sample_batch(q, rng.random_range(1..=5), &mut rng)?;
            let g = rnce_gradient(m, theta, q, &x0, &noise)?.grad;
            fd_check(&mut worst, &|t| rnce_loss(m, t, q, &x0, &noise), &g, theta)?;
            let g = mlis_gradient(m, theta, q, &x0, &noise)?.grad;
            fd_check(
                &mut worst,
                &|t| Ok(mlis_gradient(m, t, q, &x0, &noise)?.loss),
                &g,
                theta,
            )?;
        }
    }
    for i in 0..opts.fd_points {
        let mut rng = seeded(derive_seed(opts.seed, &[14, i as u64]));
        let d = rng.random_range(1..=4);
        let m = GaussianDiagModel::new(d);
        let theta =
            GaussianDiagModel::params(&normals(&mut rng, d, 1.0), &uniforms(&mut rng, d, 0.5, 2.0));
        let q = GaussianCondProposal::new(d, rng.random_range(0.2..1.5))?;
        let x0 = normals(&mut rng, d, 1.0);
        use crate::proposals::ConditionalProposal;
        let noise: Vec<Sample> = (0..rng.random_range(1..=5))
            .map(|_| q.sample_cond(&x0, &mut rng))
            .collect();
        let g = cnce_gradient(&m, &theta, &q, &x0, &noise)?.grad;
        fd_check(
            &mut worst,
            &|t| cnce_loss(&m, t, &q, &x0, &noise),
            &g,
            &theta,
        )?;

        let (tm, tt) = {
            let k = rng.random_range(2..=6);
            random_toy(&mut rng, k)
        };
        let tq = random_conditional(&mut rng, &tm);
        let x0 = tm.support()[rng.random_range(0..tm.size())].clone();
        let noise: Vec<Sample> = (0..rng.random_range(1..=5))
            .map(|_| tq.sample_cond(&x0, &mut rng))
            .collect();
        let g = cnce_gradient(&tm, &tt, &tq, &x0, &noise)?.grad;
        fd_check(
            &mut worst,
            &|t| cnce_loss(&tm, t, &tq, &x0, &noise),
            &g,
            &tt,
        )?;

        // SMC-RNCE with ancestors, proposals and resampling decisions frozen.
        let am = LinearGaussianARModel::new(d);
        let at = random_ar_theta(&mut rng, d);
        let aq = random_ar_proposal(&mut rng, d);
        let x0 = am.sample_exact(&at, &mut rng)?;
        let j = rng.random_range(1..=5);
        let mut rec = Recording::new(RngChoices(&mut rng));
        let (_, system) =
            smc_rnce_gradient_with(&am, &at, &aq, &x0, j, &ResamplePolicy::Adaptive, &mut rec)?;
        let replay = rec.into_replay();
        let frozen = ResamplePolicy::Fixed(system.resampled.clone());
        let (est, _) = smc_rnce_gradient_with(&am, &at, &aq, &x0, j, &frozen, &mut replay.clone())?;
        fd_check(
            &mut worst,
            &|t| {
                Ok(
                    smc_rnce_gradient_with(&am, t, &aq, &x0, j, &frozen, &mut replay.clone())?
                        .0
                        .loss,
                )
            },
            &est.grad,
            &at,
        )?;

        // Proposal surrogate: -Σ w̄_j log q_φ(x_j) with the weights held fixed.
        let xs = with_conditioning(&x0, &sample_batch(&aq, j, &mut rng)?);
        let w = is_weights(&am, &at, &aq, &xs)?;
        let g = proposal_loss_gradient(&aq, &w, &xs)?;
        fd_check(
            &mut worst,
            &|p| {
                let qp = ARCondProposal::new(d, p.to_vec())?;
                let mut s = 0.0;
                for (wj, x) in w.norm.iter().zip(&xs) {
                    s -= wj * qp.log_density(x)?;
                }
                Ok(s)
            },
            &g,
            aq.params(),
        )?;
    }
    Ok(worst.result(
        7,
        "loss-gradients-match-finite-differences",
        "every criterion gradient agrees with central differences of its loss on frozen samples",
        FD_TOL,
    ))
}

// ---------------------------------------------------------------- criterion 8

fn policies() -> [ResamplePolicy; 3] {
    [
        ResamplePolicy::Adaptive,
        ResamplePolicy::Always,
        ResamplePolicy::Never,
    ]
}

/// Proposals equal to the model conditionals make every `Ẑ` exact.
pub fn smc_exact_log_partition(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    for i in 0..opts.instances {
        let mut rng = seeded(derive_seed(opts.seed, &[15, i as u64]));
        let d = rng.random_range(1..=6);
        let model = LinearGaussianARModel::new(d);
        let theta = random_ar_theta(&mut rng, d);
        let q = ARCondProposal::matching(&model, &theta);
        let log_z = model.log_partition(&theta)?;
        let x0 = model.sample_exact(&theta, &mut rng)?;
        let j = rng.random_range(1..=8);
        for policy in &policies() {
            worst.push((smc_sweep(&model, &theta, &q, j, policy, &mut rng)?.log_z() - log_z).abs());
            worst.push(
                (csmc_sweep(&model, &theta, &q, &x0, j, policy, &mut rng)?.log_z() - log_z).abs(),
            );
        }
    }
    Ok(worst.result(
        8,
        "smc-exact-log-partition",
        "SMC and conditional SMC recover log Z exactly with the model conditionals as proposals",
        EXACT_LOG_Z_TOL,
    ))
}

/// `E[Ẑ^SMC] = Z`, by enumerating every proposal and ancestor choice.
pub fn smc_partition_unbiased(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    let shapes = [(1usize, 3usize, 2usize), (2, 2, 2), (3, 2, 1), (2, 3, 1)];
    for (s, &(dim, k, j)) in shapes.iter().enumerate() {
        for r in 0..3u64 {
            let mut rng = seeded(derive_seed(opts.seed, &[16, s as u64, r]));
            let (model, theta, q) = random_discrete_ar(&mut rng, dim, k);
            let z = model.log_partition(&theta)?.exp();
            let mut flags = vec![false; dim];
            flags.iter_mut().for_each(|f| *f = rng.random());
            let mut all = policies().to_vec();
            all.push(ResamplePolicy::Fixed(flags));
            for policy in &all {
                let e = enumerate_smc_expectation(&model, &theta, &q, None, j, policy, &|sys| {
                    sys.log_z().exp()
                })?;
                worst.push((e - z).abs() / z.max(1.0));
            }
        }
    }
    Ok(worst.result(
        8,
        "smc-partition-unbiased",
        "the SMC normaliser estimate is unbiased, by exhaustive enumeration on a discrete autoregressive model",
        ENUMERATION_TOL,
    ))
}

/// With one feature, conditional SMC is CIS and SMC is IS on the same samples.
pub fn smc_one_dimension_reductions(opts: &SuiteOptions) -> Result<CheckResult> {
    let mut worst = Worst::default();
    let model = LinearGaussianARModel::new(1);
    for i in 0..opts.instances {
        let mut rng = seeded(derive_seed(opts.seed, &[17, i as u64]));
        let theta = random_ar_theta(&mut rng, 1);
        let q = random_ar_proposal(&mut rng, 1);
        let x0 = model.sample_exact(&theta, &mut rng)?;
        let j = rng.random_range(1..=8);
        let policy = &ResamplePolicy::Adaptive;

        let mut rec = Recording::new(RngChoices(&mut rng));
        let (est, system) = smc_rnce_gradient_with(&model, &theta, &q, &x0, j, policy, &mut rec)?;
        let noise: Vec<Sample> = rec.values.iter().map(|&v| vec![v]).collect();
        let r = rnce_gradient(&model, &theta, &q, &x0, &noise)?;
        let cis = log_mean_exp(
            &is_weights(&model, &theta, &q, &with_conditioning(&x0, &noise))?.log_unnorm,
        );
        worst.push((system.log_z() - cis).abs());
        worst.push(max_abs_diff(&est.grad, &r.grad));
        worst.push((est.loss - r.loss).abs());

        let mut rec = Recording::new(RngChoices(&mut rng));
        let system = sweep(&model, &theta, &q, None, j, policy, false, &mut rec)?;
        let xs: Vec<Sample> = rec.values.iter().map(|&v| vec![v]).collect();
        let is = log_mean_exp(&is_weights(&model, &theta, &q, &xs)?.log_unnorm);
        worst.push((system.log_z() - is).abs());
    }
    Ok(worst.result(
        8,
        "smc-one-dimension-reductions",
        "for one feature conditional SMC reduces to CIS and SMC to IS",
        IDENTITY_TOL,
    ))
}

/// All checks for one acceptance criterion.
pub fn checks_for(criterion: u8, opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    Ok(match criterion {
        1 => vec![ranking_nce_equals_cis_ml(opts)?],
        2 => vec![
            cis_log_partition_gradient_unbiased(opts)?,
            general_cis_identity(opts)?,
            is_gradient_bias_witness(opts)?,
        ],
        3 => vec![
            cd1_cis_kernel_equals_ranking_nce(opts)?,
            cd1_pairwise_kernel_equals_cnce(opts)?,
            training_trace_equivalence(opts)?,
        ],
        4 => model_proposal_scaled_gradients(opts)?,
        5 => kernel_validity(opts)?,
        6 => vec![adaptive_proposal_gradient_unbiased(opts)?],
        7 => vec![
            model_gradients_match_finite_differences(opts)?,
            proposal_gradients_match_finite_differences(opts)?,
            loss_gradients_match_finite_differences(opts)?,
        ],
        8 => vec![
            smc_exact_log_partition(opts)?,
            smc_partition_unbiased(opts)?,
            smc_one_dimension_reductions(opts)?,
        ],
        other => {
            return Err(Error::InvalidArgument(format!(
                "no oracle checks for criterion {other}"
            )))
        }
    })
}

/// Every check of criteria 1 to 8, in order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for c in 1..=8 {
        out.extend(checks_for(c, opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteOptions {
        SuiteOptions {
            instances: 10,
            fd_points: 10,
            ..SuiteOptions::default()
        }
    }

    #[test]
    fn quick_suite_passes() {
        for r in run_suite(&quick()).unwrap() {
            assert!(r.passed(), "{r}");
            assert!(r.instances > 0, "{r}");
        }
    }

    #[test]
    fn corrupted_acceptance_breaks_detailed_balance() {
        let opts = SuiteOptions {
            corrupt_acceptance: true,
            ..quick()
        };
        let results = kernel_validity(&opts).unwrap();
        let cnce = results
            .iter()
            .find(|r| r.id == "cnce-kernel-detailed-balance")
            .unwrap();
        assert!(!cnce.passed(), "{cnce}");
        assert!(cnce.worst > 1e-3);
        assert!(results
            .iter()
            .filter(|r| r.id != cnce.id)
            .all(CheckResult::passed));
    }

    #[test]
    fn corrupted_rule_is_r_over_r_plus_two() {
        let r: f64 = 3.0;
        assert!((corrupted_barker(r.ln()) - r / (r + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn unknown_criterion_rejected() {
        assert!(checks_for(9, &quick()).is_err());
    }
}
