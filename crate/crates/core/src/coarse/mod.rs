//! Coarse graining of event ensembles into a density `rho(z)`, the discrete
//! acausal variety of a sample, and its continuum expansion: a constant,
//! the Fisher-information (Bohm) term and an `N^{-2/d}` correction.

mod density;
mod discrete;
mod study;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use density::{
    estimate_density, iid_samples, quantile_samples, DensityEstimate, DensityMethod, DensityModel, MixtureComponent,
};
pub use discrete::{discrete_acausal_variety, rank_window_pasts, DiscreteVariety, Pasts, Shell};
pub use study::{
    convergence_study, write_study_csv, ConvergenceRow, ConvergenceStudy, StudyConfig, RANK_WINDOW_KAPPA,
};

/// Cells with a density at or below this are treated as empty.
pub const RHO_FLOOR: f64 = 1e-12;

/// Largest tolerated Richardson estimate of the relative stencil error.
pub const RESOLUTION_LIMIT: f64 = 0.1;

/// A uniform grid with spacing `h` on every axis, stored row-major.
/// Non-periodic axes include both end points; periodic axes omit the upper
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
    pub periodic: bool,
}

impl Grid {
    pub fn new(lo: Vec<f64>, h: f64, shape: Vec<usize>, periodic: bool) -> Result<Self> {
        if lo.is_empty() || lo.len() != shape.len() {
            return Err(Error::Shape(format!("{} origins for {} axes", lo.len(), shape.len())));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("grid spacing must be positive, got {h}")));
        }
        if shape.iter().any(|&n| n < 3) {
            return Err(Error::InvalidConfig("every grid axis needs at least 3 points".into()));
        }
        Ok(Self { lo, h, shape, periodic })
    }

    /// `n` points covering `[lo, hi]` (or `[lo, hi)` when periodic).
    pub fn line(lo: f64, hi: f64, n: usize, periodic: bool) -> Result<Self> {
        if !(hi > lo) || n < 3 {
            return Err(Error::InvalidConfig(format!("bad line grid [{lo}, {hi}] with {n} points")));
        }
        let h = if periodic { (hi - lo) / n as f64 } else { (hi - lo) / (n - 1) as f64 };
        Self::new(vec![lo], h, vec![n], periodic)
    }

    pub fn d(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d() as i32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Index along `axis` of flat point `index`.
    pub fn axis_index(&self, index: usize, axis: usize) -> usize {
        (index / self.stride(axis)) % self.shape[axis]
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        self.lo[axis] + self.axis_index(index, axis) as f64 * self.h
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        (0..self.d()).map(|a| self.coordinate(a, index)).collect()
    }

    /// The neighbour one step up (`+1`) or down (`-1`) along `axis`.
    pub fn neighbour(&self, index: usize, axis: usize, up: bool) -> Option<usize> {
        let n = self.shape[axis];
        let i = self.axis_index(index, axis);
        let stride = self.stride(axis);
        match (up, i) {
            (true, i) if i + 1 < n => Some(index + stride),
            (true, _) => self.periodic.then(|| index + stride - n * stride),
            (false, 0) => self.periodic.then(|| index + (n - 1) * stride),
            (false, _) => Some(index - stride),
        }
    }

    /// The grid through every other point, or `None` if an axis is too short.
    fn coarsened(&self) -> Option<(Grid, Vec<usize>)> {
        let shape: Vec<usize> = self
            .shape
            .iter()
            .map(|&n| if self.periodic { n / 2 } else { n.div_ceil(2) })
            .collect();
        if shape.iter().any(|&n| n < 3) || (self.periodic && self.shape.iter().any(|n| n % 2 == 1)) {
            return None;
        }
        let coarse = Grid { lo: self.lo.clone(), h: 2.0 * self.h, shape, periodic: self.periodic };
        let map = (0..coarse.len())
            .map(|c| (0..self.d()).map(|a| 2 * coarse.axis_index(c, a) * self.stride(a)).sum())
            .collect();
        Some((coarse, map))
    }
}

/// A density and phase on a grid, representing `n_events` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseState {
    pub grid: Grid,
    pub rho: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    #[serde(rename = "N")]
    pub n_events: usize,
}

impl CoarseState {
    pub fn new(grid: Grid, rho: Vec<f64>, s: Vec<f64>, n_events: usize) -> Result<Self> {
        if rho.len() != grid.len() || s.len() != grid.len() {
            return Err(Error::Shape(format!("grid has {} points, rho {}, S {}", grid.len(), rho.len(), s.len())));
        }
        if let Some(bad) = rho.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("density must be finite and non-negative, found {bad}")));
        }
        if n_events == 0 {
            return Err(Error::InvalidConfig("event count must be positive".into()));
        }
        Ok(Self { grid, rho, s, n_events })
    }

    /// Scales `rho` to unit mass; the phase is zero.
    pub fn normalized(grid: Grid, mut rho: Vec<f64>, n_events: usize) -> Result<Self> {
        let mass: f64 = rho.iter().sum::<f64>() * grid.cell_volume();
        if !(mass > 0.0) {
            return Err(Error::Input("density has no mass".into()));
        }
        rho.iter_mut().for_each(|v| *v /= mass);
        let s = vec![0.0; rho.len()];
        Self::new(grid, rho, s, n_events)
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    fn sqrt_rho(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.sqrt()).collect()
    }
}

/// UV cutoff `a(z) = (N rho)^{-1/d}`, IR cutoff `R = L N^{-1/d}` and their
/// ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    /// Per grid point; infinite where the density is below [`RHO_FLOOR`].
    pub a: Vec<f64>,
    #[serde(rename = "R")]
    pub big_r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// `R` over the density-weighted mean of `a`.
    pub r: f64,
    /// Grid points excluded for lack of density.
    pub excluded: usize,
}

pub fn cutoffs(state: &CoarseState, l: f64) -> Result<CutoffSpec> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::InvalidConfig(format!("L must be positive, got {l}")));
    }
    let n = state.n_events as f64;
    let inv_d = 1.0 / state.grid.d() as f64;
    let mut excluded = 0;
    let a: Vec<f64> = state
        .rho
        .iter()
        .map(|&rho| {
            if rho > RHO_FLOOR {
                (n * rho).powf(-inv_d)
            } else {
                excluded += 1;
                f64::INFINITY
            }
        })
        .collect();
    if excluded > 0 {
        log::debug!("{excluded} grid points have no density and are excluded from the cutoff");
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (rho, a) in state.rho.iter().zip(&a) {
        if a.is_finite() {
            num += rho * a;
            den += rho;
        }
    }
    if den == 0.0 {
        return Err(Error::Input("density vanishes everywhere".into()));
    }
    let big_r = l * n.powf(-inv_d);
    Ok(CutoffSpec { a, big_r, l, r: big_r / (num / den), excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarietyReport {
    /// The sample estimate, when one was computed.
    pub discrete: Option<f64>,
    /// `int rho (grad rho / rho)^2`.
    pub fisher_term: f64,
    /// `int rho / R^2`.
    pub constant_term: f64,
    /// `N^{-2/d} (d/(d+2)) r^2 int rho (lap rho / rho)^2`.
    pub correction_term: f64,
    /// `d^2 / (N Omega^2 (r^d - 1)^2)`; undefined for `r <= 1`.
    #[serde(rename = "Z_V")]
    pub z_v: Option<f64>,
}

impl VarietyReport {
    pub const CSV_HEADER: [&'static str; 5] = ["discrete", "fisher_term", "constant_term", "correction_term", "Z_V"];

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        w.write_record([
            opt(self.discrete),
            format!("{:e}", self.fisher_term),
            format!("{:e}", self.constant_term),
            format!("{:e}", self.correction_term),
            opt(self.z_v),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Surface area of the unit sphere in `d` dimensions, `2 pi^{d/2} / Gamma(d/2)`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half)
}

pub fn z_v(d: usize, n_events: usize, r: f64) -> Option<f64> {
    let rd = r.powi(d as i32);
    if !(rd > 1.0) {
        return None;
    }
    let omega = unit_sphere_area(d);
    Some((d * d) as f64 / (n_events as f64 * omega * omega * (rd - 1.0).powi(2)))
}

/// `4 sum_faces (dA/h)^2 h^d` with `A = sqrt(rho)`. Faces to points outside
/// a non-periodic grid are omitted.
fn fisher_sum(grid: &Grid, amp: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..grid.len() {
        for axis in 0..grid.d() {
            if let Some(j) = grid.neighbour(i, axis, true) {
                total += (amp[j] - amp[i]).powi(2);
            }
        }
    }
    4.0 * total * grid.cell_volume() / (grid.h * grid.h)
}

/// The five-point (per axis) Laplacian matching [`fisher_sum`]: a missing
/// neighbour contributes nothing, which is a zero-flux wall.
fn laplacian(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let h2 = grid.h * grid.h;
    (0..grid.len())
        .map(|i| {
            let mut acc = 0.0;
            for axis in 0..grid.d() {
                for up in [true, false] {
                    if let Some(j) = grid.neighbour(i, axis, up) {
                        acc += f[j] - f[i];
                    }
                }
            }
            acc / h2
        })
        .collect()
}

/// `int rho (lap rho / rho)^2` over cells above the floor.
fn curvature_sum(grid: &Grid, rho: &[f64]) -> f64 {
    let lap = laplacian(grid, rho);
    rho.iter().zip(&lap).filter(|(r, _)| **r > RHO_FLOOR).map(|(r, l)| l * l / r).sum::<f64>() * grid.cell_volume()
}

fn check_resolution(grid: &Grid, rho: &[f64], f: impl Fn(&Grid, &[f64]) -> f64) -> Result<f64> {
    let fine = f(grid, rho);
    if let Some((coarse, map)) = grid.coarsened() {
        let sub: Vec<f64> = map.iter().map(|&i| rho[i]).collect();
        // both functionals are linear in the overall mass
        let mass_ratio = rho.iter().sum::<f64>() * grid.cell_volume() / (sub.iter().sum::<f64>() * coarse.cell_volume());
        let rough = f(&coarse, &sub) * mass_ratio;
        let scale = fine.abs().max(rough.abs());
        if scale > 0.0 {
            let estimate = (fine - rough).abs() / 3.0 / scale;
            if estimate > RESOLUTION_LIMIT {
                return Err(Error::Resolution { estimate, limit: RESOLUTION_LIMIT });
            }
        }
    }
    Ok(fine)
}

/// `int rho (grad rho / rho)^2`, evaluated as `4 int |grad sqrt(rho)|^2`.
pub fn fisher_term(state: &CoarseState) -> Result<f64> {
    check_resolution(&state.grid, &state.rho, |g, rho| {
        let amp: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
        fisher_sum(g, &amp)
    })
}

/// Constant, Fisher and correction terms of the continuum variety.
pub fn continuum_variety(state: &CoarseState, cutoff: &CutoffSpec) -> Result<VarietyReport> {
    check_cutoff(state, cutoff)?;
    let d = state.grid.d();
    let fisher = fisher_term(state)?;
    let curvature = check_resolution(&state.grid, &state.rho, curvature_sum)?;
    let prefactor = correction_prefactor(state, cutoff);
    Ok(VarietyReport {
        discrete: None,
        fisher_term: fisher,
        constant_term: state.mass() / (cutoff.big_r * cutoff.big_r),
        correction_term: prefactor * d as f64 / (d as f64 + 2.0) * curvature,
        z_v: z_v(d, state.n_events, cutoff.r),
    })
}

/// `N^{-2/d} r^2`.
pub fn correction_prefactor(state: &CoarseState, cutoff: &CutoffSpec) -> f64 {
    (state.n_events as f64).powf(-2.0 / state.grid.d() as f64) * cutoff.r * cutoff.r
}

/// `(hbar^2 / 8m) int rho (grad rho / rho)^2`.
pub fn bohm_functional(state: &CoarseState, m: f64, hbar: f64) -> Result<f64> {
    check_mass(m)?;
    Ok(hbar * hbar / (8.0 * m) * fisher_term(state)?)
}

/// `Q = -(hbar^2 / 2m) lap sqrt(rho) / sqrt(rho)` on the stencil whose
/// discrete variation of [`bohm_functional`] it is. Zero below the floor.
pub fn quantum_potential(state: &CoarseState, m: f64, hbar: f64) -> Result<Vec<f64>> {
    check_mass(m)?;
    let amp = state.sqrt_rho();
    let lap = laplacian(&state.grid, &amp);
    let c = -hbar * hbar / (2.0 * m);
    Ok(amp
        .iter()
        .zip(&lap)
        .zip(&state.rho)
        .map(|((a, l), r)| if *r > RHO_FLOOR { c * l / a } else { 0.0 })
        .collect())
}

/// `-N^{-2/d} (hbar^2 r^2 / 8m) int rho (lap rho / rho)^2`.
pub fn nonlinear_correction(state: &CoarseState, cutoff: &CutoffSpec, m: f64, hbar: f64) -> Result<f64> {
    check_mass(m)?;
    check_cutoff(state, cutoff)?;
    let curvature = check_resolution(&state.grid, &state.rho, curvature_sum)?;
    Ok(-correction_prefactor(state, cutoff) * hbar * hbar / (8.0 * m) * curvature)
}

fn check_mass(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("mass must be positive, got {m}")))
    }
}

fn check_cutoff(state: &CoarseState, cutoff: &CutoffSpec) -> Result<()> {
    if cutoff.a.len() != state.rho.len() {
        return Err(Error::Shape(format!("cutoff covers {} points, state {}", cutoff.a.len(), state.rho.len())));
    }
    Ok(())
}
