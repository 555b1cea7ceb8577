//! Analytic density models and kernel density estimation on a grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{CoarseState, Grid};
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// One-dimensional densities with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityModel {
    Gaussian { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Mixture { components: Vec<MixtureComponent> },
    /// `1 + amplitude cos(2 pi z)` on the periodic unit interval.
    Cosine { amplitude: f64 },
}

fn gauss(z: f64, mu: f64, sigma: f64) -> f64 {
    let u = (z - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl DensityModel {
    pub fn standard_gaussian() -> Self {
        Self::Gaussian { mu: 0.0, sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            Self::Gaussian { mu, sigma } if !(mu.is_finite() && *sigma > 0.0) => {
                bad(format!("gaussian needs finite mu and sigma > 0, got {mu}, {sigma}"))
            }
            Self::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && hi > lo) => {
                bad(format!("uniform needs lo < hi, got [{lo}, {hi}]"))
            }
            Self::Mixture { components } => {
                if components.is_empty() {
                    return bad("mixture has no components".into());
                }
                if components.iter().any(|c| !(c.weight > 0.0 && c.sigma > 0.0 && c.mu.is_finite())) {
                    return bad("mixture components need positive weight and sigma".into());
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("mixture weights sum to {total}, not 1"));
                }
                Ok(())
            }
            Self::Cosine { amplitude } if !(amplitude.abs() < 1.0) => {
                bad(format!("cosine amplitude must lie in (-1, 1), got {amplitude}"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Self::Cosine { .. })
    }

    /// An interval holding all but a negligible fraction of the mass.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Gaussian { mu, sigma } => (mu - 12.0 * sigma, mu + 12.0 * sigma),
            Self::Uniform { lo, hi } => (*lo, *hi),
            Self::Mixture { components } => components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                (a.min(c.mu - 12.0 * c.sigma), b.max(c.mu + 12.0 * c.sigma))
            }),
            Self::Cosine { .. } => (0.0, 1.0),
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => gauss(z, *mu, *sigma),
            Self::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&z) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Mixture { components } => components.iter().map(|c| c.weight * gauss(z, c.mu, c.sigma)).sum(),
            Self::Cosine { amplitude } => 1.0 + amplitude * (2.0 * std::f64::consts::PI * z).cos(),
        }
    }

    /// First derivative of the density.
    pub fn d1(&self, z: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Gaussian { mu, sigma } => -(z - mu) / (sigma * sigma) * gauss(z, *mu, *sigma),
            Self::Uniform { .. } => 0.0,
            Self::Mixture { components } => components
                .iter()
                .map(|c| -c.weight * (z - c.mu) / (c.sigma * c.sigma) * gauss(z, c.mu, c.sigma))
                .sum(),
            Self::Cosine { amplitude } => -2.0 * PI * amplitude * (2.0 * PI * z).sin(),
        }
    }

    /// Second derivative of the density.
    pub fn d2(&self, z: f64) -> f64 {
        use std::f64::consts::PI;
        let g2 = |mu: f64, s: f64| {
            let u = (z - mu) / s;
            (u * u - 1.0) / (s * s) * gauss(z, mu, s)
        };
        match self {
            Self::Gaussian { mu, sigma } => g2(*mu, *sigma),
            Self::Uniform { .. } => 0.0,
            Self::Mixture { components } => components.iter().map(|c| c.weight * g2(c.mu, c.sigma)).sum(),
            Self::Cosine { amplitude } => -4.0 * PI * PI * amplitude * (2.0 * PI * z).cos(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let normal = |mu: f64, s: f64| Normal::new(mu, s).map(|n| n.cdf(z)).unwrap_or(f64::NAN);
        match self {
            Self::Gaussian { mu, sigma } => normal(*mu, *sigma),
            Self::Uniform { lo, hi } => ((z - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Mixture { components } => components.iter().map(|c| c.weight * normal(c.mu, c.sigma)).sum(),
            Self::Cosine { amplitude } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                z + amplitude * (two_pi * z).sin() / two_pi
            }
        }
    }

    /// Quantile function for `q` in `(0, 1)`.
    pub fn inverse_cdf(&self, q: f64) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => Normal::new(*mu, *sigma).map(|n| n.inverse_cdf(q)).unwrap_or(f64::NAN),
            Self::Uniform { lo, hi } => lo + q * (hi - lo),
            Self::Cosine { .. } => self.newton_quantile(q, q, 0.0, 1.0),
            Self::Mixture { .. } => {
                let (lo, hi) = self.support();
                let (mut a, mut b) = (lo - 30.0 * (hi - lo), hi + 30.0 * (hi - lo));
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if self.cdf(mid) < q {
                        a = mid;
                    } else {
                        b = mid;
                    }
                    if b - a < 1e-6 * (hi - lo) {
                        break;
                    }
                }
                self.newton_quantile(q, 0.5 * (a + b), a, b)
            }
        }
    }

    /// Safeguarded Newton iteration on `cdf(z) = q` inside `[lo, hi]`.
    fn newton_quantile(&self, q: f64, mut z: f64, lo: f64, hi: f64) -> f64 {
        for _ in 0..100 {
            let step = (self.cdf(z) - q) / self.pdf(z);
            let next = (z - step).clamp(lo, hi);
            if (next - z).abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
                return next;
            }
            z = next;
        }
        z
    }

    /// `int rho (rho'/rho)^2`, closed form where available and otherwise
    /// trapezoid quadrature of the analytic integrand.
    pub fn fisher_information(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => 1.0 / (sigma * sigma),
            Self::Uniform { .. } => 0.0,
            _ => self.quadrature(|m, z| {
                let p = m.pdf(z);
                let d = m.d1(z);
                if p > 0.0 {
                    d * d / p
                } else {
                    0.0
                }
            }),
        }
    }

    /// `int rho (rho''/rho)^2`.
    pub fn curvature_integral(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => 2.0 / sigma.powi(4),
            Self::Uniform { .. } => 0.0,
            _ => self.quadrature(|m, z| {
                let p = m.pdf(z);
                let d = m.d2(z);
                if p > 0.0 {
                    d * d / p
                } else {
                    0.0
                }
            }),
        }
    }

    fn quadrature(&self, f: impl Fn(&Self, f64) -> f64) -> f64 {
        let (lo, hi) = self.support();
        let n = 1 << 16;
        let h = (hi - lo) / n as f64;
        if self.is_periodic() {
            // the trapezoid rule is spectrally accurate for periodic integrands
            (0..n).map(|i| f(self, lo + i as f64 * h)).sum::<f64>() * h
        } else {
            let ends = 0.5 * (f(self, lo) + f(self, hi));
            (ends + (1..n).map(|i| f(self, lo + i as f64 * h)).sum::<f64>()) * h
        }
    }

    /// The density sampled on `grid` and renormalised to unit mass.
    pub fn on_grid(&self, grid: &Grid, n_events: usize) -> Result<CoarseState> {
        self.validate()?;
        if grid.d() != 1 {
            return Err(Error::Shape(format!("density models are one-dimensional, grid has d = {}", grid.d())));
        }
        let rho: Vec<f64> = (0..grid.len()).map(|i| self.pdf(grid.coordinate(0, i))).collect();
        CoarseState::normalized(grid.clone(), rho, n_events)
    }
}

/// `N` stratified samples `F^{-1}((I + u)/N)` with one random shift `u`.
pub fn quantile_samples(model: &DensityModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let u: f64 = substream(seed, "coarse/quantile").random();
    let inv = n as f64;
    Ok((0..n).map(|i| model.inverse_cdf((i as f64 + u) / inv)).collect())
}

/// `N` independent draws by inversion.
pub fn iid_samples(model: &DensityModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let mut rng = substream(seed, "coarse/iid");
    Ok((0..n)
        .map(|_| {
            let q: f64 = rng.random();
            model.inverse_cdf(q.max(f64::MIN_POSITIVE))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityMethod {
    /// Gaussian product kernel; bandwidth from Silverman's rule when unset.
    Kde { bandwidth: Option<f64> },
    Histogram,
}

impl Default for DensityMethod {
    fn default() -> Self {
        Self::Kde { bandwidth: None }
    }
}

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub state: CoarseState,
    /// Per-axis bandwidth; zero for histograms.
    pub bandwidth: Vec<f64>,
    /// Fraction of samples that fell outside a non-periodic grid.
    pub clipped_mass: f64,
}

const MIN_SAMPLES: usize = 100;

/// Estimates `rho` from samples (`N x d` row-major) on `grid`.
///
/// Samples are linearly binned and the binned counts are convolved with a
/// truncated Gaussian along each axis. The result has unit mass on the grid.
pub fn estimate_density(samples: &[f64], grid: &Grid, method: DensityMethod) -> Result<DensityEstimate> {
    let d = grid.d();
    if samples.len() % d != 0 {
        return Err(Error::Shape(format!("{} sample coordinates do not split into rows of {d}", samples.len())));
    }
    let n = samples.len() / d;
    if n < MIN_SAMPLES {
        return Err(Error::Input(format!("density estimation needs at least {MIN_SAMPLES} samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite sample coordinate".into()));
    }

    let mut counts = vec![0.0; grid.len()];
    let mut clipped = 0usize;
    let linear = matches!(method, DensityMethod::Kde { .. });
    for row in samples.chunks_exact(d) {
        if !deposit(grid, row, linear, &mut counts) {
            clipped += 1;
        }
    }
    let clipped_mass = clipped as f64 / n as f64;
    if clipped_mass > 1e-3 {
        log::warn!("{:.3}% of the samples lie outside the density grid", 100.0 * clipped_mass);
    }

    let bandwidth = match method {
        DensityMethod::Histogram => vec![0.0; d],
        DensityMethod::Kde { bandwidth: Some(b) } => {
            if !(b > 0.0) {
                return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {b}")));
            }
            vec![b; d]
        }
        DensityMethod::Kde { bandwidth: None } => silverman(samples, d, grid.h),
    };
    for (axis, &bw) in bandwidth.iter().enumerate() {
        if bw > 0.0 {
            smooth_axis(grid, axis, bw, &mut counts);
        }
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::Input("no sample mass landed on the grid".into()));
    }
    let state = CoarseState::normalized(grid.clone(), counts, n)?;
    Ok(DensityEstimate { state, bandwidth, clipped_mass })
}

/// Silverman's rule `sigma (4 / ((d + 2) N))^{1/(d+4)}` per axis, falling
/// back to the grid spacing when the samples have no spread.
fn silverman(samples: &[f64], d: usize, h: f64) -> Vec<f64> {
    let n = (samples.len() / d) as f64;
    let factor = (4.0 / ((d as f64 + 2.0) * n)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|a| {
            let mean = samples.iter().skip(a).step_by(d).sum::<f64>() / n;
            let var = samples.iter().skip(a).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let bw = var.sqrt() * factor;
            if bw > 0.0 {
                bw
            } else {
                h
            }
        })
        .collect()
}

/// Adds one sample to the grid, either to the nearest node or shared
/// linearly among the surrounding nodes. Returns false if it was clipped.
fn deposit(grid: &Grid, x: &[f64], linear: bool, counts: &mut [f64]) -> bool {
    let d = grid.d();
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for a in 0..d {
        let n = grid.shape[a] as f64;
        let mut t = (x[a] - grid.lo[a]) / grid.h;
        if grid.periodic {
            t = t.rem_euclid(n);
        } else if t < -0.5 || t > n - 0.5 {
            return false;
        }
        if !linear {
            t = t.round();
        }
        let t = if grid.periodic { t } else { t.clamp(0.0, n - 1.0) };
        let f = t.floor();
        base[a] = f as usize % grid.shape[a];
        frac[a] = t - f;
    }
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut index = 0;
        let mut ok = true;
        for a in 0..d {
            let up = (corner >> a) & 1 == 1;
            weight *= if up { frac[a] } else { 1.0 - frac[a] };
            let mut i = base[a] + up as usize;
            if i >= grid.shape[a] {
                if grid.periodic {
                    i -= grid.shape[a];
                } else {
                    ok = weight == 0.0;
                    break;
                }
            }
            index += i * grid.stride(a);
        }
        if ok && weight > 0.0 {
            counts[index] += weight;
        }
    }
    true
}

/// Convolves `field` along one axis with a discrete Gaussian of width `bw`.
fn smooth_axis(grid: &Grid, axis: usize, bw: f64, field: &mut [f64]) {
    let n = grid.shape[axis];
    let stride = grid.stride(axis);
    let reach = ((6.0 * bw / grid.h).ceil() as usize).max(1);
    let mut kernel: Vec<f64> = (0..=reach).map(|j| (-0.5 * (j as f64 * grid.h / bw).powi(2)).exp()).collect();
    let total = kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    for start in 0..field.len() {
        if (start / stride) % n != 0 {
            continue;
        }
        for (i, v) in line.iter_mut().enumerate() {
            *v = field[start + i * stride];
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = kernel[0] * line[i];
            for (j, k) in kernel.iter().enumerate().skip(1) {
                for s in [i as isize - j as isize, (i + j) as isize] {
                    let idx = if grid.periodic {
                        Some(s.rem_euclid(n as isize) as usize)
                    } else if (0..n as isize).contains(&s) {
                        Some(s as usize)
                    } else {
                        None
                    };
                    if let Some(idx) = idx {
                        acc += k * line[idx];
                    }
                }
            }
            *o = acc;
        }
        for (i, v) in out.iter().enumerate() {
            field[start + i * stride] = *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantiles_invert_the_cdf() {
        let models = [
            DensityModel::standard_gaussian(),
            DensityModel::Uniform { lo: -1.0, hi: 3.0 },
            DensityModel::Cosine { amplitude: 0.5 },
            DensityModel::Mixture {
                components: vec![
                    MixtureComponent { weight: 0.3, mu: -2.0, sigma: 0.5 },
                    MixtureComponent { weight: 0.7, mu: 1.0, sigma: 1.0 },
                ],
            },
        ];
        for m in &models {
            m.validate().unwrap();
            for q in [1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
                assert_relative_eq!(m.cdf(m.inverse_cdf(q)), q, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = DensityModel::Mixture {
            components: vec![
                MixtureComponent { weight: 0.4, mu: -1.0, sigma: 0.7 },
                MixtureComponent { weight: 0.6, mu: 0.5, sigma: 1.3 },
            ],
        };
        let e = 1e-5;
        for z in [-2.0, -0.3, 0.0, 1.1] {
            assert_relative_eq!(m.d1(z), (m.pdf(z + e) - m.pdf(z - e)) / (2.0 * e), max_relative = 1e-7);
            assert_relative_eq!(m.d2(z), (m.d1(z + e) - m.d1(z - e)) / (2.0 * e), max_relative = 1e-7);
        }
    }

    #[test]
    fn analytic_integrals_match_quadrature() {
        // a one-component mixture goes through the quadrature path
        let g = DensityModel::Mixture { components: vec![MixtureComponent { weight: 1.0, mu: 0.3, sigma: 1.7 }] };
        assert_relative_eq!(g.fisher_information(), 1.0 / 1.7f64.powi(2), max_relative = 1e-9);
        assert_relative_eq!(g.curvature_integral(), 2.0 / 1.7f64.powi(4), max_relative = 1e-9);
        // cosine: int (rho')^2 / rho = 4 pi^2 (1 - sqrt(1 - e^2)) analytically
        let e: f64 = 0.5;
        let c = DensityModel::Cosine { amplitude: e };
        let want = 4.0 * std::f64::consts::PI.powi(2) * (1.0 - (1.0 - e * e).sqrt());
        assert_relative_eq!(c.fisher_information(), want, max_relative = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(DensityModel::Gaussian { mu: 0.0, sigma: 0.0 }.validate().is_err());
        assert!(DensityModel::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(DensityModel::Cosine { amplitude: 1.0 }.validate().is_err());
        assert!(DensityModel::Mixture { components: vec![] }.validate().is_err());
    }

    #[test]
    fn quantile_samples_are_stratified_and_deterministic() {
        let m = DensityModel::Uniform { lo: 0.0, hi: 1.0 };
        let a = quantile_samples(&m, 1000, 3).unwrap();
        assert_eq!(a, quantile_samples(&m, 1000, 3).unwrap());
        for (i, z) in a.iter().enumerate() {
            assert!((*z * 1000.0 - i as f64) >= 0.0 && (*z * 1000.0 - i as f64) < 1.0);
        }
        assert_ne!(a, quantile_samples(&m, 1000, 4).unwrap());
    }

    #[test]
    fn kde_recovers_a_gaussian() {
        let m = DensityModel::standard_gaussian();
        let samples = iid_samples(&m, 100_000, 7).unwrap();
        let grid = Grid::line(-6.0, 6.0, 601, false).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::default()).unwrap();
        assert!(est.clipped_mass < 1e-3);
        assert_relative_eq!(est.state.mass(), 1.0, epsilon = 1e-12);
        let sup = (0..grid.len())
            .map(|i| (est.state.rho[i] - m.pdf(grid.coordinate(0, i))).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "sup-norm error {sup}");
    }

    #[test]
    fn kde_of_a_point_mass_stays_within_one_kernel() {
        let samples = vec![0.25; 500];
        let grid = Grid::line(-1.0, 1.0, 201, false).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::default()).unwrap();
        assert_relative_eq!(est.state.mass(), 1.0, epsilon = 1e-12);
        assert_eq!(est.bandwidth, vec![grid.h]);
        let far: f64 = (0..grid.len())
            .filter(|&i| (grid.coordinate(0, i) - 0.25).abs() > 7.0 * grid.h)
            .map(|i| est.state.rho[i])
            .sum();
        assert_eq!(far, 0.0);
    }

    #[test]
    fn kde_of_uniform_samples_is_flat_in_the_bulk() {
        let m = DensityModel::Uniform { lo: 0.0, hi: 2.0 };
        let samples = iid_samples(&m, 100_000, 9).unwrap();
        let grid = Grid::line(-0.5, 2.5, 301, false).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::default()).unwrap();
        for i in 0..grid.len() {
            let z = grid.coordinate(0, i);
            if (0.3..=1.7).contains(&z) {
                assert!((est.state.rho[i] - 0.5).abs() < 0.025, "rho({z}) = {}", est.state.rho[i]);
            }
        }
    }

    #[test]
    fn histogram_and_clipping() {
        let mut samples = vec![0.0; 200];
        samples.extend(std::iter::repeat(50.0).take(10));
        let grid = Grid::line(-1.0, 1.0, 21, false).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::Histogram).unwrap();
        assert_relative_eq!(est.clipped_mass, 10.0 / 210.0);
        assert_relative_eq!(est.state.rho[10] * grid.h, 1.0, epsilon = 1e-12);
        assert!(estimate_density(&samples[..50], &grid, DensityMethod::Histogram).is_err());
    }

    #[test]
    fn periodic_binning_wraps() {
        let m = DensityModel::Cosine { amplitude: 0.5 };
        let samples = quantile_samples(&m, 20_000, 1).unwrap();
        let grid = Grid::line(0.0, 1.0, 200, true).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::Kde { bandwidth: Some(0.01) }).unwrap();
        assert_eq!(est.clipped_mass, 0.0);
        for i in (0..200).step_by(20) {
            let z = grid.coordinate(0, i);
            assert!((est.state.rho[i] - m.pdf(z)).abs() < 0.01);
        }
    }

    #[test]
    fn two_dimensional_estimate_has_unit_mass() {
        let m = DensityModel::standard_gaussian();
        let xs = iid_samples(&m, 2000, 1).unwrap();
        let ys = iid_samples(&m, 2000, 2).unwrap();
        let samples: Vec<f64> = xs.iter().zip(&ys).flat_map(|(x, y)| [*x, *y]).collect();
        let grid = Grid::new(vec![-5.0, -5.0], 0.1, vec![101, 101], false).unwrap();
        let est = estimate_density(&samples, &grid, DensityMethod::default()).unwrap();
        assert_relative_eq!(est.state.mass(), 1.0, epsilon = 1e-12);
        assert_eq!(est.bandwidth.len(), 2);
    }
}
