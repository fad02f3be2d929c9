//! Proposal choice on a 5-D Gaussian: fixed data proposal, the model itself,
//! or an adaptive proposal started at the data distribution.

use std::collections::BTreeMap;

use contrastive_core::models::GaussianDiagModel;
use contrastive_core::oracles::gaussian_kl;
use contrastive_core::proposals::GaussianDiagProposal;
use contrastive_core::rng::{derive_seed, seeded};
use contrastive_core::trainer::{train, Duration, ProposalSetup, TrainConfig};
use contrastive_core::UnnormalizedModel;

use super::{final_value, repetitions, series};
use crate::config::{parse_criteria, GaussianConfig, ProposalMode};
use crate::output::{Aggregate, Row, Series, Stat};
use crate::RunError;

pub const EXPERIMENT: &str = "gaussian-proposal";

struct RepResult {
    seed: u64,
    kl: Series,
    final_iteration: usize,
    final_kl: f64,
}

fn run_rep(cfg: &GaussianConfig, mode: ProposalMode, seed: u64) -> Result<RepResult, RunError> {
    let d = cfg.dim;
    let model = GaussianDiagModel::new(d);
    let truth = GaussianDiagModel::params(&vec![0.0; d], &vec![1.0; d]);
    let mut rng = seeded(derive_seed(seed, &[0]));
    let data = (0..cfg.n_data)
        .map(|_| model.sample_exact(&truth, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let theta0 = GaussianDiagModel::params(&vec![cfg.init_mean; d], &vec![cfg.init_std; d]);

    let data_q = || GaussianDiagProposal::isotropic(&vec![0.0; d], 1.0);
    let mut setup = match mode {
        ProposalMode::OracleData => ProposalSetup::Fixed(Box::new(data_q()?)),
        ProposalMode::OracleModel => ProposalSetup::ModelMatched,
        ProposalMode::Adaptive => ProposalSetup::Adaptive(Box::new(data_q()?)),
    };

    let criterion = parse_criteria(std::slice::from_ref(&cfg.criterion))?[0];
    let mut tc = TrainConfig::new(
        criterion,
        cfg.j,
        cfg.batch_size,
        Duration::Iterations(cfg.iterations),
        cfg.lr(),
    );
    tc.k = cfg.k;
    tc.seed = derive_seed(seed, &[1]);
    tc.log_every = cfg.log_every;

    let zeros = vec![0.0; d];
    let ones = vec![1.0; d];
    let eval = |theta: &[f64], _: Option<&[f64]>| {
        // the sign of the stored scale is irrelevant
        let std: Vec<f64> = model.scale(theta).iter().map(|s| s.abs()).collect();
        let kl = gaussian_kl(&zeros, &ones, model.mean(theta), &std).unwrap_or(f64::INFINITY);
        BTreeMap::from([("kl".to_string(), kl)])
    };
    let out = train(&model, &mut setup, &data, theta0, &tc, Some(&eval))?;
    let (final_iteration, final_kl) = final_value(&out.trace, "kl")?;
    Ok(RepResult {
        seed,
        kl: series(&out.trace, "kl"),
        final_iteration,
        final_kl,
    })
}

/// KL(p_d‖p_θ) percentiles per logged iteration for each proposal mode.
///
/// Repetition `r` uses the same data set under every mode.
pub fn run_gaussian_proposal(cfg: &GaussianConfig, seed: u64) -> Result<Vec<Row>, RunError> {
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let reps = repetitions(seed, &[], cfg.reps, |s| run_rep(cfg, mode, s))?;
        let kl: Vec<Series> = reps.iter().map(|r| r.kl.clone()).collect();
        let agg = Aggregate {
            experiment: EXPERIMENT,
            setting: mode.name(),
            seed,
            criterion: &cfg.criterion,
            metric: "kl",
        };
        rows.extend(agg.rows(
            &kl,
            &[
                Stat::Percentile(25.0),
                Stat::Percentile(50.0),
                Stat::Percentile(75.0),
            ],
        ));
        rows.extend(reps.iter().map(|r| Row {
            experiment: EXPERIMENT.into(),
            setting: mode.name().into(),
            seed: r.seed,
            iteration: r.final_iteration,
            criterion: cfg.criterion.clone(),
            metric: "kl".into(),
            value: r.final_kl,
        }));
    }
    Ok(rows)
}
