use contrastive_core::estimators::rnce_gradient;
use contrastive_core::models::{GaussianDiagModel, LinearGaussianARModel};
use contrastive_core::proposals::{sample_batch, ARCondProposal, GaussianDiagProposal};
use contrastive_core::rng::{derive_seed, seeded};
use contrastive_core::trainer::{
    batch_mean, train, Criterion, Duration, LrSchedule, ProposalSetup, TrainConfig,
};
use contrastive_core::{Sample, UnnormalizedModel};

fn gaussian_data(n: usize, seed: u64) -> Vec<Sample> {
    let m = GaussianDiagModel::new(2);
    let theta = GaussianDiagModel::params(&[0.0, 1.0], &[1.0, 0.5]);
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| m.sample_exact(&theta, &mut rng).unwrap())
        .collect()
}

/// One full-batch step with unit rate moves θ by exactly the mean per-datum gradient.
#[test]
fn update_uses_mean_of_per_datum_gradients() {
    let model = GaussianDiagModel::new(2);
    let data = gaussian_data(12, 3);
    let theta0 = GaussianDiagModel::params(&[1.0, -1.0], &[1.3, 0.9]);
    let q = GaussianDiagProposal::isotropic(&[0.0, 0.0], 2.0).unwrap();
    let mut cfg = TrainConfig::new(Criterion::Rnce, 5, data.len(), Duration::Iterations(1), 1.0);
    cfg.seed = 77;
    let mut setup = ProposalSetup::Fixed(Box::new(q.clone()));
    let out = train(&model, &mut setup, &data, theta0.clone(), &cfg, None).unwrap();

    let grads: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let mut rng = seeded(derive_seed(cfg.seed, &[0, i as u64]));
            let noise = sample_batch(&q, cfg.j, &mut rng).unwrap();
            rnce_gradient(&model, &theta0, &q, &data[i], &noise)
                .unwrap()
                .grad
        })
        .collect();
    let g = batch_mean(&grads);
    for ((t0, t1), g) in theta0.iter().zip(&out.theta).zip(&g) {
        assert!((t0 - g - t1).abs() < 1e-12);
    }
}

/// With one feature, SMC-RNCE is ranking NCE step for step.
#[test]
fn one_feature_smc_training_matches_ranking_nce() {
    let model = LinearGaussianARModel::new(1);
    let truth = LinearGaussianARModel::params(&[(vec![], 0.5, 0.3)]);
    let mut rng = seeded(11);
    let data: Vec<Sample> = (0..30)
        .map(|_| model.sample_exact(&truth, &mut rng).unwrap())
        .collect();
    let theta0 = LinearGaussianARModel::params(&[(vec![], -1.0, -0.5)]);
    let run = |criterion| {
        let q = ARCondProposal::independent(&[0.0], &[2.0]).unwrap();
        let mut setup = ProposalSetup::Autoregressive(Box::new(q));
        let mut cfg = TrainConfig::new(criterion, 6, 5, Duration::Epochs(4), 0.05);
        cfg.seed = 9;
        train(&model, &mut setup, &data, theta0.clone(), &cfg, None).unwrap()
    };
    let a = run(Criterion::Rnce);
    let b = run(Criterion::SmcRnce);
    assert_eq!(a.trace.len(), b.trace.len());
    for (x, y) in a.trace.iter().zip(&b.trace) {
        for (p, r) in x.params.iter().zip(&y.params) {
            assert!(
                (p - r).abs() < 1e-12,
                "iteration {}: {p} vs {r}",
                x.iteration
            );
        }
        if let (Some(l), Some(m)) = (x.loss, y.loss) {
            assert!((l - m).abs() < 1e-12);
        }
    }
}

/// The adaptive proposal moves toward the model and θ converges on the data.
#[test]
fn adaptive_proposal_follows_the_model() {
    let model = GaussianDiagModel::new(2);
    let data = gaussian_data(200, 4);
    let theta0 = GaussianDiagModel::params(&[3.0, 3.0], &[2.0, 2.0]);
    let q = GaussianDiagProposal::isotropic(&[0.0, 1.0], 1.5).unwrap();
    let mut setup = ProposalSetup::Adaptive(Box::new(q));
    let mut cfg = TrainConfig::new(Criterion::Rnce, 10, 20, Duration::Epochs(30), 0.1);
    cfg.schedule = LrSchedule::LinearDecay { end: 0.02 };
    cfg.log_every = 50;
    let out = train(&model, &mut setup, &data, theta0, &cfg, None).unwrap();
    let phi = out.phi.unwrap();
    for d in 0..2 {
        assert!(
            (out.theta[d] - phi[d]).abs() < 0.5,
            "{:?} vs {:?}",
            out.theta,
            phi
        );
    }
    assert!(
        (out.theta[0] - 0.0).abs() < 0.3 && (out.theta[1] - 1.0).abs() < 0.3,
        "{:?}",
        out.theta
    );
    let iters: Vec<usize> = out.trace.iter().map(|r| r.iteration).collect();
    assert!(iters.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn every_criterion_trains_and_is_reproducible() {
    use contrastive_core::proposals::GaussianCondProposal;
    let model = GaussianDiagModel::new(2);
    let data = gaussian_data(20, 5);
    let theta0 = GaussianDiagModel::params(&[1.0, 0.0], &[1.2, 1.2]);
    for c in Criterion::ALL {
        let run = || {
            let mut setup = if c.is_conditional() {
                ProposalSetup::Conditional(Box::new(GaussianCondProposal::new(2, 0.8).unwrap()))
            } else if c == Criterion::SmcRnce {
                ProposalSetup::Autoregressive(Box::new(
                    ARCondProposal::independent(&[0.0, 0.5], &[1.5, 1.5]).unwrap(),
                ))
            } else {
                ProposalSetup::ModelMatched
            };
            let mut cfg = TrainConfig::new(c, 3, 5, Duration::Epochs(2), 0.02);
            cfg.k = 2;
            cfg.schedule = LrSchedule::Cosine { floor: 0.001 };
            train(&model, &mut setup, &data, theta0.clone(), &cfg, None).unwrap()
        };
        let a = run();
        assert_eq!(a, run(), "{c}");
        assert_eq!(a.trace.len(), 9, "{c}");
        assert!(a.theta.iter().all(|v| v.is_finite()));
    }
}
