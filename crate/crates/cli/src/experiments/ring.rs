//! Ring model with conditional proposals: CNCE against its Metropolis and
//! persistent variants.

use std::collections::BTreeMap;

use contrastive_core::models::{sample_ring_data, RingModel};
use contrastive_core::proposals::GaussianCondProposal;
use contrastive_core::rng::{derive_seed, seeded};
use contrastive_core::trainer::{
    train, Criterion, Duration, LrSchedule, ProposalSetup, TrainConfig,
};
use rand::Rng;

use super::{final_value, repetitions, series};
use crate::config::{parse_criteria, RingConfig};
use crate::output::{Aggregate, Row, Series, Stat};
use crate::RunError;

pub const EXPERIMENT: &str = "ring";

/// Per-criterion results of one repetition.
struct CriterionRun {
    sq_error: Series,
    cnce_acceptance: Series,
    mh_acceptance: Series,
    final_iteration: usize,
    final_sq_error: f64,
}

struct RepResult {
    seed: u64,
    runs: Vec<CriterionRun>,
}

fn run_rep(cfg: &RingConfig, criteria: &[Criterion], seed: u64) -> Result<RepResult, RunError> {
    let mut rng = seeded(derive_seed(seed, &[0]));
    let mu = rng.random_range(cfg.mu_range[0]..=cfg.mu_range[1]);
    let variance = rng.random_range(cfg.variance_range[0]..=cfg.variance_range[1]);
    let theta_true = -variance.ln();
    let data = sample_ring_data(theta_true, mu, cfg.dim, cfg.n_data, &mut rng)?;
    let theta0 = -rng
        .random_range(cfg.variance_range[0]..=cfg.variance_range[1])
        .ln();
    let model = RingModel::with_dim(mu, cfg.dim);
    let q = GaussianCondProposal::from_data(&data)?;

    let scale = (cfg.batch_size as f64).sqrt();
    let precision_true = theta_true.exp();
    let eval = |theta: &[f64], _: Option<&[f64]>| {
        let e = theta[0].exp() - precision_true;
        BTreeMap::from([("sq_error".to_string(), e * e)])
    };

    let mut runs = Vec::with_capacity(criteria.len());
    for &criterion in criteria {
        let mut tc = TrainConfig::new(
            criterion,
            cfg.j,
            cfg.batch_size,
            Duration::Epochs(cfg.epochs),
            cfg.lr_start * scale,
        );
        if cfg.decay {
            tc.schedule = LrSchedule::LinearDecay {
                end: cfg.lr_end * scale,
            };
        }
        tc.k = cfg.k;
        // shared across criteria so the variants see the same noise stream
        tc.seed = derive_seed(seed, &[1]);
        tc.log_every = cfg.log_every;
        let mut setup = ProposalSetup::Conditional(Box::new(q));
        let out = train(&model, &mut setup, &data, vec![theta0], &tc, Some(&eval))?;
        let (final_iteration, final_sq_error) = final_value(&out.trace, "sq_error")?;
        runs.push(CriterionRun {
            sq_error: series(&out.trace, "sq_error"),
            cnce_acceptance: series(&out.trace, "cnce_acceptance"),
            mh_acceptance: series(&out.trace, "mh_acceptance"),
            final_iteration,
            final_sq_error,
        });
    }
    Ok(RepResult { seed, runs })
}

/// Squared error of the precision `exp θ` (median and worst case) and the
/// median Barker and Metropolis acceptance probabilities, per iteration.
pub fn run_ring(cfg: &RingConfig, seed: u64) -> Result<Vec<Row>, RunError> {
    let criteria = parse_criteria(&cfg.criteria)?;
    let reps = repetitions(seed, &[], cfg.reps, |s| run_rep(cfg, &criteria, s))?;

    let mut rows = Vec::new();
    for (c, criterion) in criteria.iter().enumerate() {
        let name = criterion.name();
        let collect = |f: fn(&CriterionRun) -> &Series| -> Vec<Series> {
            reps.iter().map(|r| f(&r.runs[c]).clone()).collect()
        };
        let agg = |metric| Aggregate {
            experiment: EXPERIMENT,
            setting: "",
            seed,
            criterion: name,
            metric,
        };
        rows.extend(agg("sq_error").rows(
            &collect(|r| &r.sq_error),
            &[Stat::Percentile(50.0), Stat::Max],
        ));
        rows.extend(
            agg("cnce_acceptance")
                .rows(&collect(|r| &r.cnce_acceptance), &[Stat::Percentile(50.0)]),
        );
        rows.extend(
            agg("mh_acceptance").rows(&collect(|r| &r.mh_acceptance), &[Stat::Percentile(50.0)]),
        );
        rows.extend(reps.iter().map(|r| Row {
            experiment: EXPERIMENT.into(),
            setting: String::new(),
            seed: r.seed,
            iteration: r.runs[c].final_iteration,
            criterion: name.into(),
            metric: "sq_error".into(),
            value: r.runs[c].final_sq_error,
        }));
    }
    Ok(rows)
}
