//! Long-format CSV output and per-iteration aggregation across repetitions.
//!
//! Schema version 1, one row per value:
//!
//! | column | meaning |
//! |---|---|
//! | `schema` | format version, currently `1` |
//! | `experiment` | experiment id |
//! | `setting` | sub-configuration, e.g. the proposal mode or `D=4`; may be empty |
//! | `seed` | master seed for aggregates, repetition seed for per-repetition rows |
//! | `iteration` | completed SGD iterations (mini-batches), not epochs |
//! | `criterion` | training criterion, or check id for the oracle suite |
//! | `metric` | metric name; aggregates carry a suffix such as `_p50` or `_max` |
//! | `value` | shortest round-trip decimal |

use std::collections::BTreeMap;
use std::io::Write;

use contrastive_core::numerics::{mean, percentile, sample_std};

use crate::RunError;

pub const SCHEMA_VERSION: u32 = 1;
pub const HEADER: [&str; 8] = [
    "schema",
    "experiment",
    "setting",
    "seed",
    "iteration",
    "criterion",
    "metric",
    "value",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub setting: String,
    pub seed: u64,
    pub iteration: usize,
    pub criterion: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_csv(rows: &[Row], out: impl Write) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    let schema = SCHEMA_VERSION.to_string();
    for r in rows {
        w.write_record([
            schema.as_str(),
            &r.experiment,
            &r.setting,
            &r.seed.to_string(),
            &r.iteration.to_string(),
            &r.criterion,
            &r.metric,
            &r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<Row>, RunError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let num = |i: usize| -> Result<f64, RunError> {
            field(i)
                .parse()
                .map_err(|_| RunError::Config(format!("malformed CSV field `{}`", field(i))))
        };
        out.push(Row {
            experiment: field(1),
            setting: field(2),
            seed: num(3)? as u64,
            iteration: num(4)? as usize,
            criterion: field(5),
            metric: field(6),
            value: num(7)?,
        });
    }
    Ok(out)
}

/// Statistic applied across repetitions at each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stat {
    Percentile(f64),
    Max,
    Mean,
    StdErr,
}

impl Stat {
    fn suffix(self) -> String {
        match self {
            Stat::Percentile(p) => format!("p{p}"),
            Stat::Max => "max".into(),
            Stat::Mean => "mean".into(),
            Stat::StdErr => "stderr".into(),
        }
    }

    fn apply(self, v: &[f64]) -> f64 {
        match self {
            Stat::Percentile(p) => percentile(v, p),
            Stat::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Stat::Mean => mean(v),
            Stat::StdErr if v.len() < 2 => 0.0,
            Stat::StdErr => sample_std(v) / (v.len() as f64).sqrt(),
        }
    }
}

/// Per-repetition series `iteration -> value` for one metric.
pub type Series = BTreeMap<usize, f64>;

/// Aggregate a metric over repetitions at every iteration that all of them logged.
pub struct Aggregate<'a> {
    pub experiment: &'a str,
    pub setting: &'a str,
    pub seed: u64,
    pub criterion: &'a str,
    pub metric: &'a str,
}

impl Aggregate<'_> {
    pub fn rows(&self, reps: &[Series], stats: &[Stat]) -> Vec<Row> {
        let Some(first) = reps.first() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for &it in first.keys() {
            let vals: Option<Vec<f64>> = reps.iter().map(|s| s.get(&it).copied()).collect();
            let Some(vals) = vals else { continue };
            for &s in stats {
                out.push(Row {
                    experiment: self.experiment.into(),
                    setting: self.setting.into(),
                    seed: self.seed,
                    iteration: it,
                    criterion: self.criterion.into(),
                    metric: format!("{}_{}", self.metric, s.suffix()),
                    value: s.apply(&vals),
                });
            }
        }
        out
    }
}

/// Rows matching the filters, as `iteration -> value`.
pub fn select(rows: &[Row], setting: &str, criterion: &str, metric: &str) -> Series {
    rows.iter()
        .filter(|r| r.setting == setting && r.criterion == criterion && r.metric == metric)
        .map(|r| (r.iteration, r.value))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![Row {
            experiment: "ring".into(),
            setting: String::new(),
            seed: 3,
            iteration: 7,
            criterion: "cnce".into(),
            metric: "sq_error_p50".into(),
            value: 0.1 + 0.2,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "schema,experiment,setting,seed,iteration,criterion,metric,value\n1,ring,,3,7,"
        ));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn aggregates_per_iteration() {
        let reps: Vec<Series> = (0..5)
            .map(|r| [(0, r as f64), (10, 2.0 * r as f64)].into_iter().collect())
            .collect();
        let agg = Aggregate {
            experiment: "x",
            setting: "",
            seed: 0,
            criterion: "c",
            metric: "m",
        };
        let rows = agg.rows(&reps, &[Stat::Percentile(50.0), Stat::Max]);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].metric, "m_p50");
        assert_eq!(rows[0].value, 2.0);
        assert_eq!(rows[3].value, 8.0);
    }
}
