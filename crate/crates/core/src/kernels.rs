//! p_θ-invariant MCMC kernels built from the contrastive estimators, the
//! contrastive-divergence gradients that use them, persistent chains, and
//! exact transition matrices on finite supports.
//!
//! Every kernel step is split in two: a deterministic [`KernelMove`] holding
//! the candidates and their selection probabilities, and the random choice of
//! `z`. Gradients marginalise `z` through the selection probabilities; the
//! chain moves with the sampled `z`.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::error::{require, Error, Result};
use crate::estimators::{
    cnce_weights, is_weights, with_conditioning, CnceWeights, Diagnostics, GradientEstimate,
    WeightSet,
};
use crate::models::{DiscreteToyModel, Sample, UnnormalizedModel};
use crate::numerics::{add_scaled, log_sum_exp, sigmoid, softplus};
use crate::proposals::{
    sample_batch, ConditionalProposal, DiscreteCondProposal, DiscreteProposal, MarginalProposal,
};
use crate::rng::categorical;

/// Acceptance rule of a two-point kernel, as a function of
/// `log r = log w̃(x₁|x₀) - log w̃(x₀|x₁)`.
#[derive(Debug, Clone, Copy)]
pub enum AcceptanceRule {
    /// `r / (1 + r)`: the CNCE posterior.
    Barker,
    /// `min(1, r)`.
    Metropolis,
    /// Arbitrary rule; used to inject faults into the validity checks.
    Custom(fn(f64) -> f64),
}

impl AcceptanceRule {
    pub fn probability(&self, log_ratio: f64) -> f64 {
        match self {
            Self::Barker => sigmoid(log_ratio),
            Self::Metropolis => log_ratio.min(0.0).exp(),
            Self::Custom(f) => f(log_ratio),
        }
    }
}

/// Candidates of one kernel step and the probability of selecting each.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMove {
    /// `x_{0:J}` for the CIS kernel, `[x₀, x₁]` for two-point kernels.
    pub candidates: Vec<Sample>,
    pub weights: WeightSet,
    /// `P(z = j | candidates)`.
    pub selection: Vec<f64>,
}

impl KernelMove {
    pub fn choose(self, z: usize) -> KernelOutcome {
        KernelOutcome {
            next: self.candidates[z].clone(),
            z,
            candidates: self.candidates,
            weights: self.weights,
            selection: self.selection,
        }
    }

    pub fn draw(self, rng: &mut dyn RngCore) -> KernelOutcome {
        let z = categorical(&self.selection, rng);
        self.choose(z)
    }
}

/// Result of one kernel step. `next == candidates[z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutcome {
    pub next: Sample,
    pub z: usize,
    pub candidates: Vec<Sample>,
    pub weights: WeightSet,
    pub selection: Vec<f64>,
}

/// CIS move on given proposal samples: select among `x_{0:J}` with probabilities `w̄`.
pub fn cis_move(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    noise: &[Sample],
) -> Result<KernelMove> {
    require(!noise.is_empty(), "need at least one proposal sample")?;
    let candidates = with_conditioning(x0, noise);
    let weights = is_weights(model, theta, q, &candidates)?;
    let selection = weights.norm.clone();
    Ok(KernelMove {
        candidates,
        weights,
        selection,
    })
}

/// Two-point move from `x₀` to the proposed `x₁`.
///
/// `weights` holds `[w̃(x₀|x₁), w̃(x₁|x₀)]`, so its normalised form is the
/// Barker pair; `selection` follows `rule`.
pub fn pairwise_move(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    x1: &[f64],
    rule: AcceptanceRule,
) -> Result<KernelMove> {
    let w = cnce_weights(model, theta, q, x0, x1)?;
    let weights = WeightSet::from_log(vec![w.log_backward, w.log_forward])?;
    let a = rule.probability(w.log_ratio());
    Ok(KernelMove {
        candidates: vec![x0.to_vec(), x1.to_vec()],
        weights,
        selection: vec![1.0 - a, a],
    })
}

/// One step of the CIS kernel: draw `x_{1:J} ~ q`, then `z ~ Cat(w̄_{0:J})`.
pub fn cis_kernel_step(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    j: usize,
    rng: &mut dyn RngCore,
) -> Result<KernelOutcome> {
    let noise = sample_batch(q, j, rng)?;
    Ok(cis_move(model, theta, q, x0, &noise)?.draw(rng))
}

/// One step of the CNCE kernel: propose `x₁ ~ q(·|x₀)`, accept with `w̄_{1|0}`.
pub fn cnce_kernel_step(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    rng: &mut dyn RngCore,
) -> Result<KernelOutcome> {
    pairwise_kernel_step(model, theta, q, x0, AcceptanceRule::Barker, rng)
}

/// One Metropolis-Hastings step with proposal `q(·|x₀)`.
pub fn mh_kernel_step(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    rng: &mut dyn RngCore,
) -> Result<KernelOutcome> {
    pairwise_kernel_step(model, theta, q, x0, AcceptanceRule::Metropolis, rng)
}

pub fn pairwise_kernel_step(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    rule: AcceptanceRule,
    rng: &mut dyn RngCore,
) -> Result<KernelOutcome> {
    let x1 = q.sample_cond(x0, rng);
    Ok(pairwise_move(model, theta, q, x0, &x1, rule)?.draw(rng))
}

/// `E_z[∇log p̃(x_z)] = Σ_j P(z=j) ∇log p̃(x_j)` for one step.
pub fn cd_expectation(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    outcome: &KernelOutcome,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.param_count()];
    for (p, x) in outcome.selection.iter().zip(&outcome.candidates) {
        add_scaled(&mut out, *p, &model.grad_log_unnorm(theta, x)?);
    }
    Ok(out)
}

/// `-log w̄_0`; for two-point outcomes written as the CNCE term `softplus(log r)`.
fn step_loss(outcome: &KernelOutcome) -> f64 {
    let w = &outcome.weights;
    if w.len() == 2 {
        softplus(w.log_unnorm[1] - w.log_unnorm[0])
    } else {
        w.log_normaliser - w.log_unnorm[0]
    }
}

fn pair_diagnostics(outcomes: &[&KernelOutcome]) -> Diagnostics {
    let n = outcomes.len() as f64;
    let log_ratio = |o: &KernelOutcome| o.weights.log_unnorm[1] - o.weights.log_unnorm[0];
    Diagnostics {
        cnce_acceptance: Some(outcomes.iter().map(|o| sigmoid(log_ratio(o))).sum::<f64>() / n),
        mh_acceptance: Some(
            outcomes
                .iter()
                .map(|o| AcceptanceRule::Metropolis.probability(log_ratio(o)))
                .sum::<f64>()
                / n,
        ),
        ess: None,
    }
}

/// `-∇log p̃(x₀_data) + mean over outcomes of E_z[∇log p̃(x_z)]`.
///
/// Covers CD-1 (one CIS outcome), CD-k (k chained outcomes), two-point CD-1
/// over J chains, and the persistent variants. The loss is the mean per-step
/// `-log w̄_0`.
pub fn gradient_from_outcomes(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    x0_data: &[f64],
    outcomes: &[&KernelOutcome],
) -> Result<GradientEstimate> {
    require(!outcomes.is_empty(), "need at least one kernel outcome")?;
    let inv = 1.0 / outcomes.len() as f64;
    let mut grad: Vec<f64> = model
        .grad_log_unnorm(theta, x0_data)?
        .into_iter()
        .map(|v| -v)
        .collect();
    for o in outcomes {
        add_scaled(&mut grad, inv, &cd_expectation(model, theta, o)?);
    }
    let loss = outcomes.iter().map(|o| step_loss(o)).sum::<f64>() * inv;
    let diagnostics = if outcomes.iter().all(|o| o.candidates.len() == 2) {
        pair_diagnostics(outcomes)
    } else {
        Diagnostics {
            ess: Some(outcomes.iter().map(|o| o.weights.ess()).sum::<f64>() * inv),
            ..Default::default()
        }
    };
    Ok(GradientEstimate {
        loss,
        grad,
        diagnostics,
    })
}

/// CD-1 with the CIS kernel, `z` marginalised. Equals the RNCE gradient on the same samples.
pub fn cd1_rnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    j: usize,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    let o = cis_kernel_step(model, theta, q, x0, j, rng)?;
    gradient_from_outcomes(model, theta, x0, &[&o])
}

/// `k` chained CIS steps from `x₀`; step ℓ conditions on the sampled `x_z` of step ℓ-1.
pub fn cdk_rnce_outcomes(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    j: usize,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<KernelOutcome>> {
    require(k >= 1, "need at least one kernel step")?;
    let mut state = x0.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let o = cis_kernel_step(model, theta, q, &state, j, rng)?;
        state.clone_from(&o.next);
        out.push(o);
    }
    Ok(out)
}

/// CD-k with the CIS kernel: the second term averages the per-step
/// marginalised estimates, each normalised within its own step.
pub fn cdk_rnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    x0: &[f64],
    j: usize,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    let outcomes = cdk_rnce_outcomes(model, theta, q, x0, j, k, rng)?;
    let refs: Vec<&KernelOutcome> = outcomes.iter().collect();
    gradient_from_outcomes(model, theta, x0, &refs)
}

/// One two-point step on every chain in `states`.
///
/// All proposals are drawn before any acceptance decision, so the proposals
/// match those of the estimator path that draws `x_{1:J} ~ q(·|x₀)` from the
/// same stream.
pub fn pairwise_steps(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    states: &[Sample],
    rule: AcceptanceRule,
    rng: &mut dyn RngCore,
) -> Result<Vec<KernelOutcome>> {
    let proposals: Vec<Sample> = states.iter().map(|s| q.sample_cond(s, rng)).collect();
    let moves = states
        .iter()
        .zip(&proposals)
        .map(|(s, x1)| pairwise_move(model, theta, q, s, x1, rule))
        .collect::<Result<Vec<_>>>()?;
    Ok(moves.into_iter().map(|m| m.draw(rng)).collect())
}

/// `J` two-point chains from `x₀`, each stepped `k` times. Returned as `chains[j][ℓ]`.
#[allow(clippy::too_many_arguments)]
pub fn cdk_pairwise_outcomes(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    j: usize,
    k: usize,
    rule: AcceptanceRule,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<KernelOutcome>>> {
    require(j >= 1, "need at least one chain")?;
    require(k >= 1, "need at least one kernel step")?;
    let mut states = vec![x0.to_vec(); j];
    let mut chains: Vec<Vec<KernelOutcome>> = vec![Vec::with_capacity(k); j];
    for _ in 0..k {
        let step = pairwise_steps(model, theta, q, &states, rule, rng)?;
        for ((state, chain), o) in states.iter_mut().zip(chains.iter_mut()).zip(step) {
            state.clone_from(&o.next);
            chain.push(o);
        }
    }
    Ok(chains)
}

/// CD-k with two-point kernels, averaged over steps and `J` chains. With
/// `k = 1` and the Barker rule this is the CNCE gradient.
#[allow(clippy::too_many_arguments)]
pub fn cdk_cnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    x0: &[f64],
    j: usize,
    k: usize,
    rule: AcceptanceRule,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    let chains = cdk_pairwise_outcomes(model, theta, q, x0, j, k, rule, rng)?;
    let refs: Vec<&KernelOutcome> = chains.iter().flatten().collect();
    gradient_from_outcomes(model, theta, x0, &refs)
}

/// Persistent chain states keyed by data index.
///
/// A slot is created from the data sample on first touch. Persistent RNCE
/// keeps one state per datum, persistent CNCE keeps `J`.
#[derive(Debug, Clone, Default)]
pub struct ChainStore {
    states: BTreeMap<usize, Vec<Sample>>,
}

impl ChainStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current states for `index`, initialised to `count` copies of `data` if absent.
    pub fn states_or_init(
        &mut self,
        index: usize,
        data: &[f64],
        count: usize,
    ) -> Result<&mut Vec<Sample>> {
        let slot = self
            .states
            .entry(index)
            .or_insert_with(|| vec![data.to_vec(); count]);
        if slot.len() != count || slot.iter().any(|s| s.len() != data.len()) {
            return Err(Error::InvalidArgument(format!(
                "chain store slot {index} has {} states, expected {count}",
                slot.len()
            )));
        }
        Ok(slot)
    }

    pub fn states(&self, index: usize) -> Option<&[Sample]> {
        self.states.get(&index).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Forget every chain, so the next touch restarts at the data.
    pub fn reset(&mut self) {
        self.states.clear();
    }
}

/// Persistent RNCE: one CIS step from the stored state; the first term uses the data sample.
#[allow(clippy::too_many_arguments)]
pub fn persistent_rnce_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn MarginalProposal,
    store: &mut ChainStore,
    index: usize,
    x0_data: &[f64],
    j: usize,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    let slot = store.states_or_init(index, x0_data, 1)?;
    let o = cis_kernel_step(model, theta, q, &slot[0], j, rng)?;
    slot[0].clone_from(&o.next);
    gradient_from_outcomes(model, theta, x0_data, &[&o])
}

/// Persistent CNCE / MH-CNCE: one two-point step on each of the `J` stored chains.
#[allow(clippy::too_many_arguments)]
pub fn persistent_pairwise_gradient(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    q: &dyn ConditionalProposal,
    store: &mut ChainStore,
    index: usize,
    x0_data: &[f64],
    j: usize,
    rule: AcceptanceRule,
    rng: &mut dyn RngCore,
) -> Result<GradientEstimate> {
    require(j >= 1, "need at least one chain")?;
    let slot = store.states_or_init(index, x0_data, j)?;
    let outcomes = pairwise_steps(model, theta, q, slot, rule, rng)?;
    for (state, o) in slot.iter_mut().zip(&outcomes) {
        state.clone_from(&o.next);
    }
    let refs: Vec<&KernelOutcome> = outcomes.iter().collect();
    gradient_from_outcomes(model, theta, x0_data, &refs)
}

/// Row-stochastic matrix `K[a][b] = K(b | a)` over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        require(
            k > 0 && rows.iter().all(|r| r.len() == k),
            "matrix must be square",
        )?;
        require(
            rows.iter().flatten().all(|v| *v >= 0.0 && v.is_finite()),
            "entries must be non-negative",
        )?;
        Ok(Self { rows })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `max_a |Σ_b K[a][b] - 1|`.
    pub fn row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `πK`.
    pub fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let k = self.size();
        (0..k)
            .map(|b| (0..k).map(|a| pi[a] * self.rows[a][b]).sum())
            .collect()
    }

    /// `max_b |(πK)_b - π_b|`.
    pub fn stationary_residual(&self, pi: &[f64]) -> f64 {
        self.apply(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max_{a,b} |π_a K(b|a) - π_b K(a|b)|`.
    pub fn detailed_balance_residual(&self, pi: &[f64]) -> f64 {
        let k = self.size();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                worst = worst.max((pi[a] * self.rows[a][b] - pi[b] * self.rows[b][a]).abs());
            }
        }
        worst
    }

    pub fn multiply(&self, other: &Self) -> Self {
        let k = self.size();
        let rows = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| (0..k).map(|c| self.rows[a][c] * other.rows[c][b]).sum())
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn power(&self, n: usize) -> Self {
        let k = self.size();
        let identity = (0..k)
            .map(|a| (0..k).map(|b| f64::from(u8::from(a == b))).collect())
            .collect();
        (0..n).fold(Self { rows: identity }, |acc, _| acc.multiply(self))
    }
}

/// Which kernel to build an exact matrix for.
#[derive(Debug, Clone, Copy)]
pub enum KernelSpec<'a> {
    Cis {
        q: &'a DiscreteProposal,
        j: usize,
    },
    Pairwise {
        q: &'a DiscreteCondProposal,
        rule: AcceptanceRule,
    },
}

/// Largest support accepted by [`exact_transition_matrix`].
pub const MAX_EXACT_SUPPORT: usize = 6;
/// Largest `J` accepted for the exact CIS matrix.
pub const MAX_EXACT_CIS_J: usize = 3;

/// Exact transition matrix by summing over every candidate set and selection.
pub fn exact_transition_matrix(
    model: &DiscreteToyModel,
    theta: &[f64],
    spec: KernelSpec<'_>,
) -> Result<TransitionMatrix> {
    let k = model.size();
    require(
        k <= MAX_EXACT_SUPPORT,
        "support too large for exact matrices",
    )?;
    let log_p: Vec<f64> = (0..k).map(|i| model.log_mass(theta, i)).collect();
    let mut rows = vec![vec![0.0; k]; k];
    match spec {
        KernelSpec::Cis { q, j } => {
            require(
                (1..=MAX_EXACT_CIS_J).contains(&j),
                "J out of range for exact CIS matrix",
            )?;
            require(
                q.support() == model.support(),
                "proposal support must match the model",
            )?;
            let log_q: Vec<f64> = q.probabilities().iter().map(|p| p.ln()).collect();
            let log_w: Vec<f64> = log_p.iter().zip(&log_q).map(|(p, q)| p - q).collect();
            for (a, row) in rows.iter_mut().enumerate() {
                let mut idx = vec![0usize; j];
                loop {
                    let prob: f64 = idx.iter().map(|&i| q.probabilities()[i]).product();
                    let lw: Vec<f64> = std::iter::once(a)
                        .chain(idx.iter().copied())
                        .map(|i| log_w[i])
                        .collect();
                    let lse = log_sum_exp(&lw);
                    row[a] += prob * (lw[0] - lse).exp();
                    for (pos, &i) in idx.iter().enumerate() {
                        row[i] += prob * (lw[pos + 1] - lse).exp();
                    }
                    if !advance(&mut idx, k) {
                        break;
                    }
                }
            }
        }
        KernelSpec::Pairwise { q, rule } => {
            require(
                q.support() == model.support(),
                "proposal support must match the model",
            )?;
            for (a, row) in rows.iter_mut().enumerate() {
                for b in 0..k {
                    let qab = q.prob(b, a);
                    if b == a {
                        row[a] += qab;
                        continue;
                    }
                    let log_ratio = (log_p[b] - q.prob(b, a).ln()) - (log_p[a] - q.prob(a, b).ln());
                    let acc = rule.probability(log_ratio);
                    row[b] += qab * acc;
                    row[a] += qab * (1.0 - acc);
                }
            }
        }
    }
    TransitionMatrix::new(rows)
}

/// Lexicographic odometer over `{0..k}^n`. Returns false after the last tuple.
pub(crate) fn advance(idx: &mut [usize], k: usize) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < k {
            return true;
        }
        idx[i] = 0;
    }
    false
}

/// Pairwise weights for a two-point outcome, recovered from its weight set.
pub fn outcome_cnce_weights(outcome: &KernelOutcome) -> Option<CnceWeights> {
    (outcome.candidates.len() == 2).then(|| CnceWeights {
        log_forward: outcome.weights.log_unnorm[1],
        log_backward: outcome.weights.log_unnorm[0],
        posterior: outcome.weights.norm[1],
    })
}
