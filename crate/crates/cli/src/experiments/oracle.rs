use contrastive_core::checks::{run_suite, CheckResult, SuiteOptions};

use crate::config::OracleConfig;
use crate::output::Row;
use crate::RunError;

pub const EXPERIMENT: &str = "oracle-suite";

/// Run every exact check. Rows carry the worst value, tolerance and a 0/1
/// pass flag per check; failures are reported by the caller.
pub fn run_oracle_suite(
    cfg: &OracleConfig,
    seed: u64,
) -> Result<(Vec<CheckResult>, Vec<Row>), RunError> {
    let opts = SuiteOptions {
        seed,
        instances: cfg.instances,
        fd_points: cfg.fd_points,
        corrupt_acceptance: cfg.corrupt_acceptance,
    };
    let results = run_suite(&opts)?;
    let mut rows = Vec::new();
    for r in &results {
        let setting = format!("criterion-{}", r.criterion);
        for (metric, value) in [
            ("worst", r.worst),
            ("tolerance", r.tolerance),
            ("instances", r.instances as f64),
            ("passed", f64::from(u8::from(r.passed()))),
        ] {
            rows.push(Row {
                experiment: EXPERIMENT.into(),
                setting: setting.clone(),
                seed,
                iteration: 0,
                criterion: r.id.into(),
                metric: metric.into(),
                value,
            });
        }
    }
    Ok((results, rows))
}
