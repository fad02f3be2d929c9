//! Linear-Gaussian autoregressive toy: ML-IS, RNCE and SMC-RNCE scored by
//! exact test log-likelihood.

use std::collections::BTreeMap;

use contrastive_core::models::{exact_nll, LinearGaussianARModel, Sample};
use contrastive_core::proposals::ARCondProposal;
use contrastive_core::rng::{derive_seed, seeded, standard_normal};
use contrastive_core::trainer::{train, Criterion, Duration, ProposalSetup, TrainConfig};
use contrastive_core::UnnormalizedModel;
use rand::{Rng, RngCore};

use super::{final_value, repetitions, series};
use crate::config::{parse_criteria, ArToyConfig};
use crate::output::{Aggregate, Row, Series, Stat};
use crate::RunError;

pub const EXPERIMENT: &str = "ar-toy";

/// A random true parameter: weights `N(0, scale²/d)`, biases `N(0, 1)`,
/// log-precisions uniform on `[-1, 1]`.
pub fn random_truth(dim: usize, coupling_scale: f64, rng: &mut impl RngCore) -> Vec<f64> {
    let blocks: Vec<_> = (0..dim)
        .map(|d| {
            let sd = if d == 0 {
                0.0
            } else {
                coupling_scale / (d as f64).sqrt()
            };
            let w = (0..d).map(|_| sd * standard_normal(rng)).collect();
            (w, standard_normal(rng), rng.random_range(-1.0..=1.0))
        })
        .collect();
    LinearGaussianARModel::params(&blocks)
}

fn mean_nll(model: &LinearGaussianARModel, theta: &[f64], xs: &[Sample]) -> f64 {
    let total: f64 = xs
        .iter()
        .map(|x| exact_nll(model, theta, x).unwrap_or(f64::INFINITY))
        .sum();
    total / xs.len() as f64
}

struct CriterionRun {
    nll_gap: Series,
    ess: Series,
    final_iteration: usize,
    final_gap: f64,
    final_ess: f64,
}

struct RepResult {
    seed: u64,
    runs: Vec<CriterionRun>,
}

fn run_rep(
    cfg: &ArToyConfig,
    dim: usize,
    criteria: &[Criterion],
    seed: u64,
) -> Result<RepResult, RunError> {
    let model = LinearGaussianARModel::new(dim);
    let mut rng = seeded(derive_seed(seed, &[0]));
    let truth = random_truth(dim, cfg.coupling_scale, &mut rng);
    let mut draw = |n: usize| {
        (0..n)
            .map(|_| model.sample_exact(&truth, &mut rng))
            .collect::<Result<Vec<_>, _>>()
    };
    let train_set = draw(cfg.n_data)?;
    let test_set = draw(cfg.n_test)?;
    let q = ARCondProposal::fit_independent(&train_set)?;
    // independent standard normals
    let theta0 = vec![0.0; model.param_count()];

    let reference = mean_nll(&model, &truth, &test_set);
    let eval = |theta: &[f64], _: Option<&[f64]>| {
        BTreeMap::from([(
            "nll_gap".to_string(),
            mean_nll(&model, theta, &test_set) - reference,
        )])
    };

    let mut runs = Vec::with_capacity(criteria.len());
    for &criterion in criteria {
        let mut tc = TrainConfig::new(
            criterion,
            cfg.j,
            cfg.batch_size,
            Duration::Iterations(cfg.iterations),
            cfg.lr,
        );
        tc.k = cfg.k;
        tc.seed = derive_seed(seed, &[1]);
        tc.log_every = cfg.log_every;
        let mut setup = ProposalSetup::Autoregressive(Box::new(q.clone()));
        let out = train(
            &model,
            &mut setup,
            &train_set,
            theta0.clone(),
            &tc,
            Some(&eval),
        )?;
        let (final_iteration, final_gap) = final_value(&out.trace, "nll_gap")?;
        let (_, final_ess) = final_value(&out.trace, "ess")?;
        runs.push(CriterionRun {
            nll_gap: series(&out.trace, "nll_gap"),
            ess: series(&out.trace, "ess"),
            final_iteration,
            final_gap,
            final_ess,
        });
    }
    Ok(RepResult { seed, runs })
}

/// Test NLL gap to the true parameter per logged iteration (median, mean,
/// standard error over repetitions) and the mean per-datum ESS of the
/// importance weights.
pub fn run_ar_toy(cfg: &ArToyConfig, seed: u64) -> Result<Vec<Row>, RunError> {
    let criteria = parse_criteria(&cfg.criteria)?;
    let mut rows = Vec::new();
    for &dim in &cfg.dims {
        let setting = format!("D={dim}");
        let reps = repetitions(seed, &[dim as u64], cfg.reps, |s| {
            run_rep(cfg, dim, &criteria, s)
        })?;
        for (c, criterion) in criteria.iter().enumerate() {
            let name = criterion.name();
            let agg = |metric| Aggregate {
                experiment: EXPERIMENT,
                setting: &setting,
                seed,
                criterion: name,
                metric,
            };
            let gaps: Vec<Series> = reps.iter().map(|r| r.runs[c].nll_gap.clone()).collect();
            let ess: Vec<Series> = reps.iter().map(|r| r.runs[c].ess.clone()).collect();
            rows.extend(
                agg("nll_gap").rows(&gaps, &[Stat::Percentile(50.0), Stat::Mean, Stat::StdErr]),
            );
            rows.extend(agg("ess").rows(&ess, &[Stat::Percentile(50.0)]));
            for r in &reps {
                let run = &r.runs[c];
                for (metric, value) in [("nll_gap", run.final_gap), ("ess", run.final_ess)] {
                    rows.push(Row {
                        experiment: EXPERIMENT.into(),
                        setting: setting.clone(),
                        seed: r.seed,
                        iteration: run.final_iteration,
                        criterion: name.into(),
                        metric: metric.into(),
                        value,
                    });
                }
            }
        }
    }
    Ok(rows)
}
