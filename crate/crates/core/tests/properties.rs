use contrastive_core::estimators::{
    cnce_gradient, cnce_loss, cnce_weights, is_weights, mh_cnce_gradient, mlis_gradient,
    rnce_gradient, rnce_loss,
};
use contrastive_core::kernels::{
    cis_kernel_step, exact_transition_matrix, AcceptanceRule, KernelSpec,
};
use contrastive_core::models::AutoregressiveModel;
use contrastive_core::models::{
    DiscreteToyModel, GaussianDiagModel, LinearGaussianARModel, RingModel, Segment,
};
use contrastive_core::oracles::{
    enumerate_expectation, gaussian_kl, ConditioningLaw, EnumProposal, EnumerationInstance,
};
use contrastive_core::proposals::{
    ARCondProposal, ConditionalProposal, DiscreteARProposal, DiscreteCondProposal,
    DiscreteProposal, GaussianCondProposal, GaussianDiagProposal, MarginalProposal,
    SequentialProposal, SoftmaxProposal,
};
use contrastive_core::rng::seeded;
use contrastive_core::smc::{smc_sweep, ResamplePolicy};
use contrastive_core::{Result, Sample, UnnormalizedModel};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

/// `p̃` times a θ-independent constant.
struct Shifted<M> {
    inner: M,
    log_c: f64,
}

impl<M: UnnormalizedModel> UnnormalizedModel for Shifted<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
    fn layout(&self) -> Vec<Segment> {
        self.inner.layout()
    }
    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        Ok(self.inner.log_unnorm(theta, x)? + self.log_c)
    }
    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.inner.grad_log_unnorm(theta, x)
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Midpoint rule on `[lo, hi]` with `n` cells.
fn quad_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

fn quad_2d(f: impl Fn(f64, f64) -> f64, lo: [f64; 2], hi: [f64; 2], n: usize) -> f64 {
    quad_1d(|a| quad_1d(|b| f(a, b), lo[1], hi[1], n), lo[0], hi[0], n)
}

fn probs(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: Some(Box::new(FileFailurePersistence::Direct("tests/proptest-regressions.txt"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn discrete_toy_masses_sum_to_one(theta in prop::collection::vec(-3.0..3.0f64, 4)) {
        let m = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0, 5.0]).unwrap();
        let lz = m.log_partition(&theta).unwrap();
        let total: f64 = m.support().iter().map(|x| (m.log_unnorm(&theta, x).unwrap() - lz).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_model_normalises_in_two_dimensions(
        mean in prop::collection::vec(-1.0..1.0f64, 2),
        scale in prop::collection::vec(0.5..1.5f64, 2),
    ) {
        let m = GaussianDiagModel::new(2);
        let theta = GaussianDiagModel::params(&mean, &scale);
        let lz = m.log_partition(&theta).unwrap();
        let total = quad_2d(
            |a, b| (m.log_unnorm(&theta, &[a, b]).unwrap() - lz).exp(),
            [mean[0] - 12.0, mean[1] - 12.0],
            [mean[0] + 12.0, mean[1] + 12.0],
            400,
        );
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn linear_ar_is_sum_of_conditionals(
        x in prop::collection::vec(-2.0..2.0f64, 4),
        raw in prop::collection::vec(-1.0..1.0f64, LinearGaussianARModel::block_offset(4)),
    ) {
        let m = LinearGaussianARModel::new(4);
        let total: f64 = (0..4).map(|d| m.log_unnorm_cond(&raw, d, &x[..d], x[d])).sum();
        prop_assert_eq!(m.log_unnorm(&raw, &x).unwrap(), total);
    }

    #[test]
    fn ring_is_rotation_invariant(
        x in prop::collection::vec(-3.0..3.0f64, 5),
        angles in prop::collection::vec(0.0..std::f64::consts::TAU, 4),
        theta in -1.0..2.0f64,
    ) {
        let m = RingModel::new(2.0);
        let mut y = x.clone();
        // A product of Givens rotations in consecutive planes.
        for (i, a) in angles.iter().enumerate() {
            let (c, s) = (a.cos(), a.sin());
            let (u, v) = (y[i], y[i + 1]);
            y[i] = c * u - s * v;
            y[i + 1] = s * u + c * v;
        }
        let a = m.log_unnorm(&[theta], &x).unwrap();
        let b = m.log_unnorm(&[theta], &y).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn gaussian_proposals_normalise(
        mean in prop::collection::vec(-1.0..1.0f64, 2),
        scale in prop::collection::vec(0.5..1.5f64, 2),
        eps in 0.3..1.5f64,
        given in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let q = GaussianDiagProposal::new(2, [mean.clone(), scale.clone()].concat()).unwrap();
        let total = quad_2d(|a, b| q.log_density(&[a, b]).unwrap().exp(), [-13.0; 2], [13.0; 2], 400);
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");

        let c = GaussianCondProposal::new(2, eps).unwrap();
        let total = quad_2d(|a, b| c.log_density_cond(&[a, b], &given).unwrap().exp(), [-13.0; 2], [13.0; 2], 400);
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");

        let ar = ARCondProposal::new(2, vec![mean[0], scale[0], 0.5, mean[1], scale[1]]).unwrap();
        let total = quad_2d(|a, b| ar.log_density(&[a, b]).unwrap().exp(), [-14.0; 2], [14.0; 2], 400);
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn discrete_proposals_sum_to_one(
        logits in prop::collection::vec(-3.0..3.0f64, 3),
        raw in prop::collection::vec(0.1..1.0f64, 6),
    ) {
        let support: Vec<Sample> = (0..3).map(|v| vec![v as f64]).collect();
        let s = SoftmaxProposal::new(support.clone(), logits).unwrap();
        let d = DiscreteProposal::new(support.clone(), probs(&raw[..3])).unwrap();
        for q in [&s as &dyn MarginalProposal, &d] {
            let total: f64 = support.iter().map(|x| q.log_density(x).unwrap().exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        let values = vec![-1.0, 1.0, 2.0];
        let ar = DiscreteARProposal::new(values.clone(), vec![probs(&raw[..3]), probs(&raw[3..])]).unwrap();
        let mut total = 0.0;
        for &a in &values {
            for &b in &values {
                total += (ar.log_density_coord(0, &[], a) + ar.log_density_coord(1, &[a], b)).exp();
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_conditional_is_symmetric(
        a in prop::collection::vec(-3.0..3.0f64, 3),
        b in prop::collection::vec(-3.0..3.0f64, 3),
        eps in 0.1..2.0f64,
    ) {
        let q = GaussianCondProposal::new(3, eps).unwrap();
        prop_assert_eq!(q.log_density_cond(&a, &b).unwrap(), q.log_density_cond(&b, &a).unwrap());
    }

    #[test]
    fn constant_factor_leaves_contrastive_criteria_unchanged(
        log_c in -50.0..50.0f64,
        mean in prop::collection::vec(-1.0..1.0f64, 2),
        seed in any::<u64>(),
    ) {
        let base = GaussianDiagModel::new(2);
        let shifted = Shifted { inner: GaussianDiagModel::new(2), log_c };
        let theta = GaussianDiagModel::params(&mean, &[1.0, 0.8]);
        let q = GaussianDiagProposal::isotropic(&[0.0, 0.0], 1.5).unwrap();
        let qc = GaussianCondProposal::new(2, 0.7).unwrap();
        let mut rng = seeded(seed);
        let x0 = q.sample(&mut rng);
        let noise: Vec<Sample> = (0..4).map(|_| q.sample(&mut rng)).collect();
        let cnoise: Vec<Sample> = (0..4).map(|_| qc.sample_cond(&x0, &mut rng)).collect();

        let a = rnce_gradient(&base, &theta, &q, &x0, &noise).unwrap();
        let b = rnce_gradient(&shifted, &theta, &q, &x0, &noise).unwrap();
        prop_assert!(rel(&a.grad, &b.grad) < 1e-12);
        prop_assert!((a.loss - b.loss).abs() < 1e-12 * a.loss.abs().max(1.0) * log_c.abs().max(1.0));
        let wa = is_weights(&base, &theta, &q, &noise).unwrap();
        let wb = is_weights(&shifted, &theta, &q, &noise).unwrap();
        prop_assert!(rel(&wa.norm, &wb.norm) < 1e-12);

        let a = cnce_gradient(&base, &theta, &qc, &x0, &cnoise).unwrap();
        let b = cnce_gradient(&shifted, &theta, &qc, &x0, &cnoise).unwrap();
        prop_assert!(rel(&a.grad, &b.grad) < 1e-12);
        prop_assert!((a.loss - b.loss).abs() < 1e-12 * log_c.abs().max(1.0));
    }

    #[test]
    fn metropolis_dominates_barker(log_ratio in -700.0..700.0f64) {
        let mh = AcceptanceRule::Metropolis.probability(log_ratio);
        let barker = AcceptanceRule::Barker.probability(log_ratio);
        prop_assert!(mh >= barker);
        prop_assert!((0.0..=1.0).contains(&barker) && (0.0..=1.0).contains(&mh));
    }

    #[test]
    fn pairwise_weights_dominate_on_samples(seed in any::<u64>(), mean in -2.0..2.0f64) {
        let m = GaussianDiagModel::new(1);
        let theta = GaussianDiagModel::params(&[mean], &[0.7]);
        let q = GaussianCondProposal::new(1, 1.2).unwrap();
        let mut rng = seeded(seed);
        let x0 = vec![mean + 0.5];
        for _ in 0..8 {
            let x1 = q.sample_cond(&x0, &mut rng);
            let w = cnce_weights(&m, &theta, &q, &x0, &x1).unwrap();
            prop_assert!(w.mh_acceptance() >= w.posterior);
        }
    }

    #[test]
    fn enumeration_is_normalised(
        raw in prop::collection::vec(0.1..1.0f64, 3),
        theta in prop::collection::vec(-2.0..2.0f64, 3),
        j in 1usize..=3,
        law in 0usize..4,
    ) {
        let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0]).unwrap();
        let q = DiscreteProposal::new(model.support().to_vec(), probs(&raw)).unwrap();
        let law = match law {
            0 => ConditioningLaw::Model,
            1 => ConditioningLaw::Table(probs(&[raw[2], raw[0], raw[1]])),
            2 => ConditioningLaw::Fixed(1),
            _ => ConditioningLaw::CisJoint,
        };
        let inst = EnumerationInstance { model, theta, proposal: EnumProposal::Marginal(q), j, law };
        let one = enumerate_expectation(&inst, &|_| Ok(vec![1.0])).unwrap();
        prop_assert!((one[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_only_at_equal_parameters(
        mp in prop::collection::vec(-2.0..2.0f64, 3),
        sp in prop::collection::vec(0.3..3.0f64, 3),
        dm in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        prop_assert!(gaussian_kl(&mp, &sp, &mp, &sp).unwrap().abs() < 1e-12);
        let mq: Vec<f64> = mp.iter().zip(&dm).map(|(a, b)| a + b).collect();
        if dm.iter().any(|v| v.abs() > 1e-3) {
            prop_assert!(gaussian_kl(&mp, &sp, &mq, &sp).unwrap() > 0.0);
        }
    }
}

#[test]
fn kl_closed_forms() {
    assert_eq!(gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap(), 0.5);
    let want = 2f64.ln() + 1.0 / 8.0 - 0.5;
    assert!((gaussian_kl(&[0.0], &[1.0], &[0.0], &[2.0]).unwrap() - want).abs() < 1e-15);
    assert!(gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
}

#[test]
fn losses_stay_finite_with_extreme_weight_ratios() {
    let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0]).unwrap();
    let theta = vec![300.0, 0.0, -300.0];
    let support = model.support().to_vec();
    let q = DiscreteProposal::new(support.clone(), vec![1.0 / 3.0; 3]).unwrap();
    let qc = DiscreteCondProposal::new(support.clone(), vec![vec![1.0 / 3.0; 3]; 3]).unwrap();
    let noise = support.clone();
    for x0 in &support {
        let estimates = [
            rnce_gradient(&model, &theta, &q, x0, &noise).unwrap(),
            mlis_gradient(&model, &theta, &q, x0, &noise).unwrap(),
            cnce_gradient(&model, &theta, &qc, x0, &noise).unwrap(),
            mh_cnce_gradient(&model, &theta, &qc, x0, &noise).unwrap(),
        ];
        for e in &estimates {
            assert!(e.is_finite(), "{e:?}");
        }
        assert!(rnce_loss(&model, &theta, &q, x0, &noise)
            .unwrap()
            .is_finite());
        assert!(cnce_loss(&model, &theta, &qc, x0, &noise)
            .unwrap()
            .is_finite());
    }
}

/// The law of the CIS chain after `k` steps is row `x₀` of `Pᵏ`.
#[test]
fn cis_chain_law_matches_matrix_power() {
    let model = DiscreteToyModel::one_hot(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    let theta = vec![0.3, -0.4, 1.1, 0.0];
    let q = DiscreteProposal::new(model.support().to_vec(), vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    let j = 2;
    let k = 3;
    let p = exact_transition_matrix(&model, &theta, KernelSpec::Cis { q: &q, j }).unwrap();
    let law = p.power(k).rows()[0].clone();
    let n = 40_000;
    let mut counts = [0usize; 4];
    let mut rng = seeded(5);
    for _ in 0..n {
        let mut state = model.support()[0].clone();
        for _ in 0..k {
            state = cis_kernel_step(&model, &theta, &q, &state, j, &mut rng)
                .unwrap()
                .next;
        }
        counts[model.index_of(&state).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(&law) {
        let freq = *c as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "freq {freq} vs {p}");
    }
}

/// Ẑ is unbiased whether or not resampling happens, so forced and adaptive
/// resampling agree in mean.
#[test]
fn resampling_policy_does_not_shift_mean_estimate() {
    let model = LinearGaussianARModel::new(3);
    let theta = LinearGaussianARModel::params(&[
        (vec![], 0.5, 0.2),
        (vec![0.6], -0.3, 0.4),
        (vec![0.2, -0.5], 0.1, -0.2),
    ]);
    let q = ARCondProposal::independent(&[0.5, 0.0, 0.0], &[1.3, 1.5, 1.8]).unwrap();
    let z = model.log_partition(&theta).unwrap().exp();
    let reps = 500;
    let stats = |policy: &ResamplePolicy, seed: u64| {
        let mut rng = seeded(seed);
        let v: Vec<f64> = (0..reps)
            .map(|_| {
                smc_sweep(&model, &theta, &q, 6, policy, &mut rng)
                    .unwrap()
                    .log_z()
                    .exp()
                    / z
            })
            .collect();
        let m = contrastive_core::numerics::mean(&v);
        (
            m,
            contrastive_core::numerics::sample_std(&v) / (reps as f64).sqrt(),
        )
    };
    let (ma, sa) = stats(&ResamplePolicy::Always, 1);
    let (md, sd) = stats(&ResamplePolicy::Adaptive, 2);
    assert!(
        (ma - md).abs() < 3.0 * (sa * sa + sd * sd).sqrt(),
        "{ma} ± {sa} vs {md} ± {sd}"
    );
    assert!((ma - 1.0).abs() < 3.0 * sa && (md - 1.0).abs() < 3.0 * sd);
}
