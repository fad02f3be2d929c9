use rand::{Rng, RngCore};

use super::{Sample, Segment, UnnormalizedModel};
use crate::error::{check_dim, check_params, require, Result};
use crate::rng::standard_normal;

/// Ring model: `log p̃_θ(x) = -½ exp(θ) (‖x‖₂ - μ)²` with known `μ`.
///
/// θ is the scalar log-precision. No closed-form normaliser is exposed.
#[derive(Debug, Clone)]
pub struct RingModel {
    mu: f64,
    dim: usize,
}

impl RingModel {
    pub const DEFAULT_DIM: usize = 5;

    pub fn new(mu: f64) -> Self {
        Self::with_dim(mu, Self::DEFAULT_DIM)
    }

    pub fn with_dim(mu: f64, dim: usize) -> Self {
        assert!(dim > 0);
        Self { mu, dim }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl UnnormalizedModel for RingModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        1
    }

    fn layout(&self) -> Vec<Segment> {
        vec![Segment::new("log_precision", 0, 1)]
    }

    fn log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_params(1, theta)?;
        check_dim(self.dim, x)?;
        let r = norm(x) - self.mu;
        Ok(-0.5 * theta[0].exp() * r * r)
    }

    fn grad_log_unnorm(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        // d/dθ of -½ e^θ r² is the value itself
        Ok(vec![self.log_unnorm(theta, x)?])
    }
}

const RADIAL_GRID: usize = 1 << 14;

/// Draw `n` points from the normalised ring density.
///
/// Directions are uniform on the sphere. Radii come from the density
/// `r^{D-1} exp(-½ e^θ (r - μ)²)` by inverse CDF on a fixed grid of 2¹⁴
/// points over `[max(0, μ - 8σ), μ + 8σ]`, `σ = exp(-θ/2)`.
pub fn sample_ring_data(
    log_precision: f64,
    mu: f64,
    dim: usize,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sample>> {
    require(n >= 1, "need at least one sample")?;
    require(dim >= 1, "dimension must be positive")?;
    let precision = log_precision.exp();
    let sigma = (-0.5 * log_precision).exp();
    let lo = (mu - 8.0 * sigma).max(0.0);
    let hi = mu + 8.0 * sigma;
    let step = (hi - lo) / (RADIAL_GRID - 1) as f64;
    let grid: Vec<f64> = (0..RADIAL_GRID).map(|i| lo + i as f64 * step).collect();

    // log density relative to its maximum on the grid
    let log_dens: Vec<f64> = grid
        .iter()
        .map(|&r| {
            let radial = if r > 0.0 {
                (dim as f64 - 1.0) * r.ln()
            } else if dim == 1 {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            radial - 0.5 * precision * (r - mu) * (r - mu)
        })
        .collect();
    let max = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = log_dens.iter().map(|l| (l - max).exp()).collect();

    let mut cdf = vec![0.0; RADIAL_GRID];
    for i in 1..RADIAL_GRID {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * step;
    }
    let total = cdf[RADIAL_GRID - 1];

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let k = cdf.partition_point(|&c| c < u).clamp(1, RADIAL_GRID - 1);
        let (c0, c1) = (cdf[k - 1], cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        let radius = grid[k - 1] + t * step;

        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let len = norm(&v);
            if len > 1e-12 {
                break v.into_iter().map(|c| c / len).collect();
            }
        };
        out.push(dir.into_iter().map(|c| c * radius).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean, sample_std};
    use crate::rng::seeded;

    fn point_at_radius(r: f64) -> Vec<f64> {
        let mut x = vec![0.0; 5];
        x[0] = 0.6 * r;
        x[3] = 0.8 * r;
        x
    }

    #[test]
    fn on_ring_has_zero_energy_and_gradient() {
        let m = RingModel::new(5.0);
        let x = point_at_radius(5.0);
        assert!(m.log_unnorm(&[0.0], &x).unwrap().abs() < 1e-14);
        assert!(m.grad_log_unnorm(&[0.0], &x).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn unit_offset_from_ring() {
        let m = RingModel::new(5.0);
        let x = point_at_radius(6.0);
        assert!((m.log_unnorm(&[0.0], &x).unwrap() + 0.5).abs() < 1e-12);
        assert!((m.grad_log_unnorm(&[0.0], &x).unwrap()[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_exact_normaliser() {
        let m = RingModel::new(5.0);
        assert!(m.log_partition(&[0.0]).is_err());
        assert!(m.sample_exact(&[0.0], &mut seeded(0)).is_err());
    }

    #[test]
    fn high_precision_concentrates_on_ring() {
        let mut rng = seeded(1);
        let xs = sample_ring_data(12.0, 5.0, 5, 2000, &mut rng).unwrap();
        let radii: Vec<f64> = xs.iter().map(|x| norm(x)).collect();
        assert!((mean(&radii) - 5.0).abs() < 0.01);
        assert!(sample_std(&radii) < 0.01);
    }

    #[test]
    fn directions_are_isotropic() {
        let mut rng = seeded(2);
        let n = 10_000;
        let xs = sample_ring_data((1.0f64 / 0.3).ln(), 5.0, 5, n, &mut rng).unwrap();
        let mut acc = vec![0.0; 5];
        for x in &xs {
            let r = norm(x);
            for (a, c) in acc.iter_mut().zip(x) {
                *a += c / r;
            }
        }
        let len = norm(&acc) / n as f64;
        assert!(len < 0.05, "mean direction length {len}");
    }

    #[test]
    fn mean_radius_matches_radial_quadrature() {
        // Independent reference: fine midpoint quadrature of r·ρ(r) / ∫ρ(r)
        let theta = (1.0f64 / 0.3).ln();
        let (mu, dim) = (5.0, 5);
        let tau = theta.exp();
        let m = 200_000;
        let (a, b) = (0.0, 15.0);
        let h = (b - a) / m as f64;
        let (mut z, mut first) = (0.0, 0.0);
        for i in 0..m {
            let r: f64 = a + (i as f64 + 0.5) * h;
            let w = r.powi(dim - 1) * (-0.5 * tau * (r - mu) * (r - mu)).exp();
            z += w;
            first += r * w;
        }
        let expected = first / z;

        let n = 20_000;
        let xs = sample_ring_data(theta, mu, dim as usize, n, &mut seeded(9)).unwrap();
        let radii: Vec<f64> = xs.iter().map(|x| norm(x)).collect();
        let se = sample_std(&radii) / (n as f64).sqrt();
        assert!(
            (mean(&radii) - expected).abs() < 3.0 * se,
            "mean {} expected {} se {}",
            mean(&radii),
            expected,
            se
        );
    }
}
