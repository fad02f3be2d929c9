//! Independent references: exact enumeration over finite instances, central
//! finite differences, the diagonal-Gaussian KL divergence and golden files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{require, Error, Result};
use crate::kernels::advance;
use crate::models::{DiscreteToyModel, Sample, UnnormalizedModel};
use crate::numerics::KahanSum;
use crate::proposals::{DiscreteCondProposal, DiscreteProposal, SequentialProposal};
use crate::smc::{sweep, ChoiceSource, ParticleSystem, ResamplePolicy};

/// Largest number of outcomes an enumeration may visit.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// How `x₀` is distributed.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditioningLaw {
    /// `x₀ ~ p_θ`.
    Model,
    /// `x₀` drawn from a probability table over the support (e.g. a data distribution).
    Table(Vec<f64>),
    /// `x₀` fixed to the support point with this index.
    Fixed(usize),
    /// The joint law behind the CIS estimator: `z` uniform on `0..=J`,
    /// `x_z ~ p_θ`, every other `x_j ~ q`. Marginal proposals only.
    CisJoint,
}

/// Proposal of an enumeration instance.
#[derive(Debug, Clone, PartialEq)]
pub enum EnumProposal {
    /// `x_{1:J}` i.i.d. from `q`.
    Marginal(DiscreteProposal),
    /// `x_{1:J}` i.i.d. from `q(· | x₀)`.
    Conditional(DiscreteCondProposal),
}

/// A finite instance whose every outcome `(z, x_{0:J})` can be listed.
#[derive(Debug, Clone)]
pub struct EnumerationInstance {
    pub model: DiscreteToyModel,
    pub theta: Vec<f64>,
    pub proposal: EnumProposal,
    pub j: usize,
    pub law: ConditioningLaw,
}

/// One outcome passed to a statistic.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<'a> {
    /// `x_{0:J}`.
    pub samples: &'a [Sample],
    /// Support indices of `x_{0:J}`.
    pub indices: &'a [usize],
    /// Position of the `p_θ` draw under [`ConditioningLaw::CisJoint`].
    pub z: Option<usize>,
    pub probability: f64,
}

impl EnumerationInstance {
    pub fn outcome_count(&self) -> u128 {
        let k = self.model.size() as u128;
        let tuples = k.saturating_pow(self.j as u32 + 1);
        match self.law {
            ConditioningLaw::CisJoint => tuples.saturating_mul(self.j as u128 + 1),
            _ => tuples,
        }
    }

    fn x0_law(&self) -> Result<Vec<f64>> {
        let k = self.model.size();
        Ok(match &self.law {
            ConditioningLaw::Model | ConditioningLaw::CisJoint => {
                self.model.probabilities(&self.theta)
            }
            ConditioningLaw::Table(p) => {
                require(p.len() == k, "conditioning table must cover the support")?;
                require(
                    (p.iter().sum::<f64>() - 1.0).abs() < 1e-12,
                    "conditioning table must sum to one",
                )?;
                p.clone()
            }
            ConditioningLaw::Fixed(i) => {
                require(*i < k, "fixed index outside the support")?;
                (0..k).map(|a| f64::from(u8::from(a == *i))).collect()
            }
        })
    }

    fn q_prob(&self, to: usize, from: usize) -> f64 {
        match &self.proposal {
            EnumProposal::Marginal(q) => q.probabilities()[to],
            EnumProposal::Conditional(q) => q.prob(to, from),
        }
    }
}

/// Exact `E[statistic]` over every outcome, summed in lexicographic order.
pub fn enumerate_expectation(
    instance: &EnumerationInstance,
    statistic: &dyn Fn(&Outcome<'_>) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let count = instance.outcome_count();
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge(count));
    }
    require(instance.j >= 1, "need at least one proposal sample")?;
    let support = instance.model.support();
    match &instance.proposal {
        EnumProposal::Marginal(q) => require(q.support() == support, "proposal support differs")?,
        EnumProposal::Conditional(q) => {
            require(q.support() == support, "proposal support differs")?;
            require(
                instance.law != ConditioningLaw::CisJoint,
                "the CIS joint law needs a marginal proposal",
            )?;
        }
    }
    let k = instance.model.size();
    let n = instance.j + 1;
    let x0_law = instance.x0_law()?;
    let mut acc: Vec<KahanSum> = Vec::new();
    let mut idx = vec![0usize; n];
    let zs: Vec<Option<usize>> = match instance.law {
        ConditioningLaw::CisJoint => (0..n).map(Some).collect(),
        _ => vec![None],
    };
    let mut samples: Vec<Sample> = vec![Vec::new(); n];
    for z in zs {
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let probability = match z {
                Some(z) => {
                    let mut p = x0_law[idx[z]] / n as f64;
                    for (pos, &i) in idx.iter().enumerate() {
                        if pos != z {
                            p *= instance.q_prob(i, 0);
                        }
                    }
                    p
                }
                None => {
                    let mut p = x0_law[idx[0]];
                    for &i in &idx[1..] {
                        p *= instance.q_prob(i, idx[0]);
                    }
                    p
                }
            };
            if probability > 0.0 {
                for (s, &i) in samples.iter_mut().zip(&idx) {
                    s.clone_from(&support[i]);
                }
                let v = statistic(&Outcome {
                    samples: &samples,
                    indices: &idx,
                    z,
                    probability,
                })?;
                if acc.is_empty() {
                    acc = vec![KahanSum::default(); v.len()];
                }
                require(v.len() == acc.len(), "statistic changed length")?;
                for (a, vi) in acc.iter_mut().zip(v) {
                    a.add(probability * vi);
                }
            }
            if !advance(&mut idx, k) {
                break;
            }
        }
    }
    Ok(acc.iter().map(KahanSum::value).collect())
}

/// Enumerates every choice sequence of a sweep by replaying an odometer.
struct Odometer {
    choices: Vec<usize>,
    counts: Vec<usize>,
    pos: usize,
    probability: f64,
}

impl Odometer {
    fn next(&mut self, n: usize) -> usize {
        let c = if self.pos < self.choices.len() {
            self.choices[self.pos]
        } else {
            self.choices.push(0);
            self.counts.push(n);
            0
        };
        self.pos += 1;
        c
    }

    /// Move to the next branch. Returns false when every branch was visited.
    fn advance(&mut self) -> bool {
        self.choices.truncate(self.pos);
        self.counts.truncate(self.pos);
        while let Some(last) = self.choices.last_mut() {
            if *last + 1 < *self.counts.last().unwrap() {
                *last += 1;
                self.pos = 0;
                self.probability = 1.0;
                return true;
            }
            self.choices.pop();
            self.counts.pop();
        }
        false
    }
}

impl ChoiceSource for Odometer {
    fn ancestor(&mut self, norm_w: &[f64]) -> usize {
        let c = self.next(norm_w.len());
        self.probability *= norm_w[c];
        c
    }

    fn propose(&mut self, prop: &dyn SequentialProposal, coord: usize, prefix: &[f64]) -> f64 {
        let support = prop
            .coord_support(coord, prefix)
            .expect("enumeration needs a finite proposal");
        let c = self.next(support.len());
        self.probability *= support[c].1;
        support[c].0
    }
}

/// Exact expectation of `statistic` over every random choice of an SMC or
/// CSMC sweep with a finite proposal.
#[allow(clippy::too_many_arguments)]
pub fn enumerate_smc_expectation(
    model: &dyn UnnormalizedModel,
    theta: &[f64],
    prop: &dyn SequentialProposal,
    conditioning: Option<&[f64]>,
    j: usize,
    policy: &ResamplePolicy,
    statistic: &dyn Fn(&ParticleSystem) -> f64,
) -> Result<f64> {
    let mut odo = Odometer {
        choices: Vec::new(),
        counts: Vec::new(),
        pos: 0,
        probability: 1.0,
    };
    let mut total = KahanSum::default();
    let mut visited: u128 = 0;
    loop {
        let system = sweep(model, theta, prop, conditioning, j, policy, false, &mut odo)?;
        if odo.probability > 0.0 {
            total.add(odo.probability * statistic(&system));
        }
        visited += 1;
        if visited > ENUMERATION_CAP {
            return Err(Error::EnumerationTooLarge(visited));
        }
        if !odo.advance() {
            break;
        }
    }
    Ok(total.value())
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn finite_difference_gradient(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    require(
        step > 0.0 && step.is_finite(),
        "finite-difference step must be positive",
    )?;
    let mut t = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        t[i] = theta[i] + step;
        let hi = f(&t)?;
        t[i] = theta[i] - step;
        let lo = f(&t)?;
        t[i] = theta[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, 1)`.
pub fn relative_error(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(reference)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// `KL(N(μ_p, diag σ_p²) ‖ N(μ_q, diag σ_q²))`.
pub fn gaussian_kl(mean_p: &[f64], std_p: &[f64], mean_q: &[f64], std_q: &[f64]) -> Result<f64> {
    let d = mean_p.len();
    require(
        std_p.len() == d && mean_q.len() == d && std_q.len() == d,
        "KL arguments must share a dimension",
    )?;
    if std_p
        .iter()
        .chain(std_q)
        .any(|s| *s <= 0.0 || !s.is_finite())
    {
        return Err(Error::InvalidArgument("KL needs positive scales".into()));
    }
    Ok((0..d)
        .map(|i| {
            let (sp, sq) = (std_p[i], std_q[i]);
            let dm = mean_p[i] - mean_q[i];
            (sq / sp).ln() + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5
        })
        .sum())
}

/// Write `label value` lines with round-trip precision.
pub fn write_golden(path: &Path, values: &[(String, f64)]) -> std::io::Result<()> {
    let mut s = String::new();
    for (label, v) in values {
        assert!(
            !label.contains(char::is_whitespace),
            "labels must not contain whitespace"
        );
        writeln!(s, "{label} {v:e}").expect("writing to a String");
    }
    std::fs::write(path, s)
}

pub fn read_golden(path: &Path) -> std::io::Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (label, value) = l
                .rsplit_once(' ')
                .ok_or_else(|| std::io::Error::other(format!("malformed line: {l}")))?;
            let v = value
                .parse()
                .map_err(|e| std::io::Error::other(format!("{label}: {e}")))?;
            Ok((label.to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(law: ConditioningLaw, j: usize) -> EnumerationInstance {
        let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0]).unwrap();
        let q = DiscreteProposal::new(model.support().to_vec(), vec![0.5, 0.3, 0.2]).unwrap();
        EnumerationInstance {
            model,
            theta: vec![0.1, -0.4, 0.9],
            proposal: EnumProposal::Marginal(q),
            j,
            law,
        }
    }

    #[test]
    fn constant_statistic_has_unit_mass() {
        for law in [
            ConditioningLaw::Model,
            ConditioningLaw::Fixed(2),
            ConditioningLaw::Table(vec![0.2, 0.2, 0.6]),
            ConditioningLaw::CisJoint,
        ] {
            let v = enumerate_expectation(&instance(law, 2), &|_| Ok(vec![1.0])).unwrap();
            assert!((v[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let q = DiscreteProposal::new(model.support().to_vec(), vec![0.25; 4]).unwrap();
        let inst = EnumerationInstance {
            model,
            theta: vec![0.0; 4],
            proposal: EnumProposal::Marginal(q),
            j: 10,
            law: ConditioningLaw::Model,
        };
        assert!(matches!(
            enumerate_expectation(&inst, &|_| Ok(vec![1.0])),
            Err(Error::EnumerationTooLarge(_))
        ));
    }

    #[test]
    fn finite_differences_exact_on_quadratics() {
        let f = |t: &[f64]| Ok(3.0 * t[0] * t[0] - 2.0 * t[0] * t[1] + t[1]);
        let g = finite_difference_gradient(&f, &[0.7, -1.3], 1e-4).unwrap();
        assert!((g[0] - (6.0 * 0.7 + 2.0 * 1.3)).abs() < 1e-10);
        assert!((g[1] - (-2.0 * 0.7 + 1.0)).abs() < 1e-10);
        assert!(finite_difference_gradient(&f, &[0.0, 0.0], 0.0).is_err());
        let bad = |_: &[f64]| Ok(f64::NAN);
        assert!(finite_difference_gradient(&bad, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[1.0], &[2.0], &[1.0], &[2.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let want = 2f64.ln() + 1.0 / 8.0 - 0.5;
        assert!((gaussian_kl(&[0.0], &[1.0], &[0.0], &[2.0]).unwrap() - want).abs() < 1e-15);
        assert!(gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(gaussian_kl(&[0.0, 0.1], &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap() > 0.0);
    }

    #[test]
    fn golden_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        let vals = vec![("a".to_string(), 0.1 + 0.2), ("b".to_string(), -1e-300)];
        write_golden(&path, &vals).unwrap();
        assert_eq!(read_golden(&path).unwrap(), vals);
    }
}
