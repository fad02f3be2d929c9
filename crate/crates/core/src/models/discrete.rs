use rand::RngCore;

use super::{AutoregressiveModel, Sample, Segment, UnnormalizedModel};
use crate::error::{check_dim, check_params, require, Error, Result};
use crate::numerics::{log_sum_exp, normalize_log_weights};
use crate::rng::categorical;

/// Finite-support model with masses `exp(θᵀ φ(x))`.
///
/// The support points are exact coordinates; any other point has zero mass
/// and is reported as [`Error::OutOfSupport`]. Substrate for the
/// enumeration oracles.
#[derive(Debug, Clone)]
pub struct DiscreteToyModel {
    support: Vec<Sample>,
    features: Vec<Vec<f64>>,
    dim: usize,
    n_params: usize,
}

impl DiscreteToyModel {
    pub fn new(support: Vec<Sample>, features: Vec<Vec<f64>>) -> Result<Self> {
        require(!support.is_empty(), "support must be non-empty")?;
        require(
            support.len() == features.len(),
            "one feature vector per support point",
        )?;
        let dim = support[0].len();
        let n_params = features[0].len();
        require(dim > 0 && n_params > 0, "empty points or features")?;
        require(
            support.iter().all(|s| s.len() == dim) && features.iter().all(|f| f.len() == n_params),
            "ragged support or features",
        )?;
        for (i, a) in support.iter().enumerate() {
            require(
                support[..i].iter().all(|b| b != a),
                "support points must be distinct",
            )?;
        }
        Ok(Self {
            support,
            features,
            dim,
            n_params,
        })
    }

    /// Scalar support with one-hot features, so θ holds the log-masses directly.
    pub fn one_hot(values: &[f64]) -> Result<Self> {
        let k = values.len();
        let support = values.iter().map(|&v| vec![v]).collect();
        let features = (0..k)
            .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        Self::new(support, features)
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index]
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.support.iter().position(|s| s.as_slice() == x)
    }

    pub fn log_mass(&self, theta: &[f64], index: usize) -> f64 {
        self.features[index]
            .iter()
            .zip(theta)
            .map(|(f, t)| f * t)
            .sum()
    }

    /// Normalised probabilities `p_θ` over the support.
    pub fn probabilities(&self, theta: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.size()).map(|i| self.log_mass(theta, i)).collect();
        normalize_log_weights(&logs).0
    }

    /// `∇_θ log Z_θ = E_{p_θ}[φ(x)]`.
    pub fn grad_log_partition(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.probabilities(theta);
        let mut g = vec![0.0; self.n_params];
        for (pi, f) in p.iter().zip(&self.features) {
            for (gk, fk) in g.iter_mut().zip(f) {
                *gk += pi * fk;
            }
        }
        g
    }
}

impl UnnormalizedModel for DiscreteToyModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.n_params
    }

    fn layout(&self) -> Vec<Segment> {
        vec![Segment::new("feature_weights", 0, self.n_params)]
    }

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_params(self.n_params, theta)?;
        check_dim(self.dim, x)?;
        let i = self.index_of(x).ok_or(Error::OutOfSupport)?;
        Ok(self.log_mass(theta, i))
    }

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_params(self.n_params, theta)?;
        check_dim(self.dim, x)?;
        let i = self.index_of(x).ok_or(Error::OutOfSupport)?;
        Ok(self.features[i].clone())
    }

    fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        check_params(self.n_params, theta)?;
        let logs: Vec<f64> = (0..self.size()).map(|i| self.log_mass(theta, i)).collect();
        Ok(log_sum_exp(&logs))
    }

    fn sample_exact(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Sample> {
        check_params(self.n_params, theta)?;
        let i = categorical(&self.probabilities(theta), rng);
        Ok(self.support[i].clone())
    }
}

/// Autoregressive model on a finite grid `values^D`.
///
/// `log p̃_θ(x_d | x_{1:d-1}) = u_{d, k(x_d)} + c_d · x_d · x_{d-1}`, with a
/// unary table `u_d` of length K per feature and one coupling `c_d` for
/// every feature after the first. Used for enumerating SMC outcomes.
#[derive(Debug, Clone)]
pub struct DiscreteARModel {
    dim: usize,
    values: Vec<f64>,
}

impl DiscreteARModel {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        require(dim > 0 && !values.is_empty(), "empty model")?;
        Ok(Self { dim, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn k(&self) -> usize {
        self.values.len()
    }

    fn block_offset(&self, d: usize) -> usize {
        d * self.k() + d.saturating_sub(1)
    }

    fn value_index(&self, v: f64) -> Option<usize> {
        self.values.iter().position(|&x| x == v)
    }

    /// All `K^D` grid points in lexicographic order.
    pub fn grid(&self) -> Vec<Sample> {
        let k = self.k();
        let total = k.pow(self.dim as u32);
        (0..total)
            .map(|mut code| {
                let mut x = vec![0.0; self.dim];
                for d in (0..self.dim).rev() {
                    x[d] = self.values[code % k];
                    code /= k;
                }
                x
            })
            .collect()
    }
}

impl UnnormalizedModel for DiscreteARModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.block_offset(self.dim)
    }

    fn layout(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for d in 0..self.dim {
            let off = self.block_offset(d);
            out.push(Segment::new(format!("unary_{d}"), off, self.k()));
            if d > 0 {
                out.push(Segment::new(format!("coupling_{d}"), off + self.k(), 1));
            }
        }
        out
    }

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        if x.iter().any(|&v| self.value_index(v).is_none()) {
            return Err(Error::OutOfSupport);
        }
        Ok((0..self.dim)
            .map(|d| self.log_unnorm_cond(theta, d, &x[..d], x[d]))
            .sum())
    }

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_params(self.param_count(), theta)?;
        check_dim(self.dim, x)?;
        if x.iter().any(|&v| self.value_index(v).is_none()) {
            return Err(Error::OutOfSupport);
        }
        let mut g = vec![0.0; self.param_count()];
        for d in 0..self.dim {
            let gd = self.grad_log_unnorm_cond(theta, d, &x[..d], x[d]);
            for (a, b) in g.iter_mut().zip(gd) {
                *a += b;
            }
        }
        Ok(g)
    }

    fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        let logs = self
            .grid()
            .iter()
            .map(|x| self.log_unnorm(theta, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&logs))
    }

    fn as_autoregressive(&self) -> Option<&dyn AutoregressiveModel> {
        Some(self)
    }
}

impl AutoregressiveModel for DiscreteARModel {
    fn log_unnorm_cond(&self, theta: &[f64], coord: usize, prefix: &[f64], value: f64) -> f64 {
        let Some(k) = self.value_index(value) else {
            return f64::NEG_INFINITY;
        };
        let off = self.block_offset(coord);
        let mut out = theta[off + k];
        if coord > 0 {
            out += theta[off + self.k()] * value * prefix[coord - 1];
        }
        out
    }

    fn grad_log_unnorm_cond(
        &self,
        _theta: &[f64],
        coord: usize,
        prefix: &[f64],
        value: f64,
    ) -> Vec<f64> {
        let mut g = vec![0.0; self.param_count()];
        if let Some(k) = self.value_index(value) {
            let off = self.block_offset(coord);
            g[off + k] = 1.0;
            if coord > 0 {
                g[off + self.k()] = value * prefix[coord - 1];
            }
        }
        g
    }
}
