//! Experiment configuration: a TOML file with one section per experiment,
//! merged with command-line overrides. Flags win.

use std::path::{Path, PathBuf};

use contrastive_core::trainer::Criterion;
use serde::Deserialize;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    GaussianProposal,
    Ring,
    ArToy,
    OracleSuite,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Self::GaussianProposal,
        Self::Ring,
        Self::ArToy,
        Self::OracleSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianProposal => "gaussian-proposal",
            Self::Ring => "ring",
            Self::ArToy => "ar-toy",
            Self::OracleSuite => "oracle-suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self, RunError> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| RunError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Settings shared by every experiment.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            reps: None,
            out: None,
        }
    }
}

/// Proposal used in the Gaussian experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    /// `q = p_d`, fixed.
    OracleData,
    /// `q = p_θ`, refreshed every step.
    OracleModel,
    /// `q_φ` initialised at `p_d` and trained alongside θ.
    Adaptive,
}

impl ProposalMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::OracleData => "oracle-data",
            Self::OracleModel => "oracle-model",
            Self::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianConfig {
    pub reps: usize,
    pub dim: usize,
    pub n_data: usize,
    pub j: usize,
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Defaults to `0.01 √B`.
    pub lr: Option<f64>,
    pub init_mean: f64,
    pub init_std: f64,
    pub log_every: usize,
    pub criterion: String,
    pub modes: Vec<ProposalMode>,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            reps: 20,
            dim: 5,
            n_data: 100,
            j: 10,
            k: 1,
            batch_size: 32,
            iterations: 250,
            lr: None,
            init_mean: 4.0,
            init_std: 2f64.sqrt(),
            log_every: 10,
            criterion: "rnce".into(),
            modes: vec![
                ProposalMode::OracleData,
                ProposalMode::OracleModel,
                ProposalMode::Adaptive,
            ],
        }
    }
}

impl GaussianConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(0.01 * (self.batch_size as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub reps: usize,
    pub dim: usize,
    pub n_data: usize,
    pub j: usize,
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Base rates, multiplied by `√B`.
    pub lr_start: f64,
    pub lr_end: f64,
    /// Linear decay from `lr_start` to `lr_end`; otherwise constant `lr_start`.
    pub decay: bool,
    pub mu_range: [f64; 2],
    pub variance_range: [f64; 2],
    pub log_every: usize,
    pub criteria: Vec<String>,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            reps: 100,
            dim: 5,
            n_data: 200,
            j: 5,
            k: 1,
            batch_size: 20,
            epochs: 50,
            lr_start: 0.01,
            lr_end: 0.001,
            decay: true,
            mu_range: [5.0, 10.0],
            variance_range: [0.3, 1.5],
            log_every: 1,
            criteria: ["cnce", "mh-cnce", "p-cnce", "p-mh-cnce"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArToyConfig {
    pub reps: usize,
    pub dims: Vec<usize>,
    pub n_data: usize,
    pub n_test: usize,
    pub j: usize,
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Standard deviation of the true regression weights, divided by `√d`.
    pub coupling_scale: f64,
    pub log_every: usize,
    pub criteria: Vec<String>,
}

impl Default for ArToyConfig {
    fn default() -> Self {
        Self {
            reps: 10,
            dims: vec![4, 8],
            n_data: 500,
            n_test: 1000,
            j: 20,
            k: 1,
            batch_size: 20,
            iterations: 1500,
            lr: 0.02,
            coupling_scale: 0.9,
            log_every: 25,
            criteria: ["ml-is", "rnce", "smc-rnce"].map(String::from).to_vec(),
        }
    }
}

/// Largest feature count for which the AR toy is run.
pub const MAX_AR_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub instances: usize,
    pub fd_points: usize,
    /// Test hook: mis-normalised Barker acceptance.
    pub corrupt_acceptance: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            fd_points: 100,
            corrupt_acceptance: false,
        }
    }
}

/// The whole config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    #[serde(rename = "gaussian-proposal")]
    pub gaussian: GaussianConfig,
    pub ring: RingConfig,
    #[serde(rename = "ar-toy")]
    pub ar_toy: ArToyConfig,
    #[serde(rename = "oracle-suite")]
    pub oracle: OracleConfig,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Apply command-line overrides. Validation is separate so that an
    /// override aimed at one experiment does not trip another's checks.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(r) = o.reps.or(self.run.reps) {
            self.gaussian.reps = r;
            self.ring.reps = r;
            self.ar_toy.reps = r;
        }
        if let Some(p) = &o.out {
            self.run.out = Some(p.clone());
        }
        if let Some(c) = &o.criterion {
            self.gaussian.criterion.clone_from(c);
            self.ring.criteria = vec![c.clone()];
            self.ar_toy.criteria = vec![c.clone()];
        }
        if let Some(j) = o.j {
            self.gaussian.j = j;
            self.ring.j = j;
            self.ar_toy.j = j;
        }
        if let Some(k) = o.k {
            self.gaussian.k = k;
            self.ring.k = k;
            self.ar_toy.k = k;
        }
    }

    /// Validate every section.
    pub fn validate(&self) -> Result<(), RunError> {
        Experiment::ALL
            .into_iter()
            .try_for_each(|e| self.validate_for(e))
    }

    /// Validate the section used by `experiment`.
    pub fn validate_for(&self, experiment: Experiment) -> Result<(), RunError> {
        match experiment {
            Experiment::GaussianProposal => self.validate_gaussian(),
            Experiment::Ring => self.validate_ring(),
            Experiment::ArToy => self.validate_ar_toy(),
            Experiment::OracleSuite => {
                let o = &self.oracle;
                check(
                    o.instances >= 1 && o.fd_points >= 1,
                    "oracle-suite: instances and fd_points must be positive",
                )
            }
        }
    }

    fn validate_gaussian(&self) -> Result<(), RunError> {
        let g = &self.gaussian;
        check(
            g.reps >= 1 && g.dim >= 1 && g.n_data >= 1,
            "gaussian-proposal: reps, dim and n_data must be positive",
        )?;
        check(
            g.j >= 1 && g.k >= 1 && g.batch_size >= 1,
            "gaussian-proposal: J, k and batch_size must be positive",
        )?;
        check(
            g.iterations >= 1 && g.log_every >= 1,
            "gaussian-proposal: iterations and log_every must be positive",
        )?;
        check(
            g.lr() > 0.0 && g.lr().is_finite(),
            "gaussian-proposal: lr must be positive",
        )?;
        check(
            g.init_std > 0.0,
            "gaussian-proposal: init_std must be positive",
        )?;
        check(
            !g.modes.is_empty(),
            "gaussian-proposal: need at least one proposal mode",
        )?;
        let c = parse_criteria(std::slice::from_ref(&g.criterion))?[0];
        check(
            !c.is_conditional() && c != Criterion::SmcRnce,
            "gaussian-proposal: criterion must use a marginal proposal",
        )
    }

    fn validate_ring(&self) -> Result<(), RunError> {
        let r = &self.ring;
        check(
            r.reps >= 1 && r.dim >= 1 && r.n_data >= 2,
            "ring: reps and dim must be positive, n_data at least 2",
        )?;
        check(
            r.j >= 1 && r.k >= 1 && r.batch_size >= 1,
            "ring: J, k and batch_size must be positive",
        )?;
        check(
            r.epochs >= 1 && r.log_every >= 1,
            "ring: epochs and log_every must be positive",
        )?;
        check(
            r.lr_start > 0.0 && r.lr_end > 0.0,
            "ring: learning rates must be positive",
        )?;
        check(
            ordered(r.mu_range) && r.mu_range[0] > 0.0,
            "ring: mu_range must be a positive interval",
        )?;
        check(
            ordered(r.variance_range) && r.variance_range[0] > 0.0,
            "ring: variance_range must be a positive interval",
        )?;
        for c in parse_criteria(&r.criteria)? {
            check(
                c.is_conditional(),
                "ring: criteria must use a conditional proposal",
            )?;
        }
        Ok(())
    }

    fn validate_ar_toy(&self) -> Result<(), RunError> {
        let a = &self.ar_toy;
        check(
            a.reps >= 1 && !a.dims.is_empty(),
            "ar-toy: need reps and at least one dimension",
        )?;
        check(
            a.dims.iter().all(|&d| (1..=MAX_AR_DIM).contains(&d)),
            format!("ar-toy: dimensions must lie in 1..={MAX_AR_DIM}"),
        )?;
        check(
            a.n_data >= 2 && a.n_test >= 1,
            "ar-toy: need at least two training and one test point",
        )?;
        check(
            a.j >= 1 && a.k >= 1 && a.batch_size >= 1,
            "ar-toy: J, k and batch_size must be positive",
        )?;
        check(
            a.iterations >= 1 && a.log_every >= 1,
            "ar-toy: iterations and log_every must be positive",
        )?;
        check(
            a.lr > 0.0 && a.coupling_scale >= 0.0,
            "ar-toy: lr must be positive, coupling_scale non-negative",
        )?;
        for c in parse_criteria(&a.criteria)? {
            check(
                !c.is_conditional(),
                "ar-toy: criteria must use a marginal or autoregressive proposal",
            )?;
        }
        Ok(())
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub criterion: Option<String>,
    pub j: Option<usize>,
    pub k: Option<usize>,
}

fn ordered(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), RunError> {
    if cond {
        Ok(())
    } else {
        Err(RunError::Config(msg.into()))
    }
}

pub fn parse_criteria(names: &[String]) -> Result<Vec<Criterion>, RunError> {
    if names.is_empty() {
        return Err(RunError::Config("need at least one criterion".into()));
    }
    names
        .iter()
        .map(|n| {
            n.parse()
                .map_err(|e: contrastive_core::Error| RunError::Config(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        FileConfig::default().validate().unwrap();
    }

    #[test]
    fn sections_and_overrides() {
        let mut cfg = FileConfig::from_toml(
            "[run]\nseed = 5\nreps = 3\n[ring]\nn_data = 50\ncriteria = [\"cnce\"]\n[gaussian-proposal]\nmodes = [\"adaptive\"]\n",
        )
        .unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            j: Some(2),
            ..Default::default()
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.ring.reps, 3);
        assert_eq!(cfg.ring.n_data, 50);
        assert_eq!(cfg.ring.j, 2);
        assert_eq!(cfg.gaussian.modes, vec![ProposalMode::Adaptive]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(FileConfig::from_toml("[ring]\nbogus = 1\n").is_err());
        let mut cfg = FileConfig::default();
        cfg.apply(&Overrides {
            criterion: Some("p-cnce".into()),
            ..Default::default()
        });
        assert!(cfg.validate_for(Experiment::Ring).is_ok());
        assert!(cfg.validate_for(Experiment::ArToy).is_err());
        assert!(cfg.validate_for(Experiment::OracleSuite).is_ok());
        let mut cfg = FileConfig::default();
        cfg.ar_toy.dims = vec![12];
        assert!(cfg.validate().is_err());
        let mut cfg = FileConfig::default();
        cfg.apply(&Overrides {
            j: Some(0),
            ..Default::default()
        });
        assert!(cfg.validate_for(Experiment::Ring).is_err());
    }
}
