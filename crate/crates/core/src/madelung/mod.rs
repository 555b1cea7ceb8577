//! Hydrodynamic evolution of the coarse-grained pair `(rho, S)`: continuity
//! plus Hamilton-Jacobi with the Bohm term and, optionally, the leading
//! non-linear correction. A Crank-Nicolson Schroedinger solver serves as the
//! independent check.
//!
//! The semi-discrete scheme is the canonical flow of a discrete Hamiltonian:
//! on a periodic grid `rho_dot = (1/h^d) dH/dS` and
//! `S_dot = -(1/h^d) dH/drho` hold exactly. On an open grid the walls are
//! zero-flux, with a log-linear ghost for `sqrt(rho)` and a linear ghost for
//! `S` and the correction's curvature field.

mod compare;
mod wave;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::coarse::Grid;
use crate::{Error, Result};

pub use compare::{
    compare_evolutions, correction_scaling, correction_prefactor_for, ComparisonReport, ScalingReport, ScalingRow,
};
pub use wave::{from_wavefunction, schrodinger_oracle, to_wavefunction, WaveFunction};

/// Density floor below which `sqrt(rho)` is clamped.
pub const RHO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Hamilton-Jacobi without the quantum potential.
    Classical,
    /// Hamilton-Jacobi with the Bohm potential.
    Quantum,
    /// Quantum plus the variation of the `N^{-2/d}` correction.
    Corrected,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "quantum" => Ok(Self::Quantum),
            "corrected" | "quantum+correction" => Ok(Self::Corrected),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadelungParams {
    pub m: f64,
    pub hbar: f64,
    /// `r^2 N^{-2/d}`, the strength of the correction term.
    pub correction_prefactor: f64,
    /// External potential on the grid; absent for the free particle.
    pub potential: Option<Vec<f64>>,
}

impl Default for MadelungParams {
    fn default() -> Self {
        Self { m: 1.0, hbar: 1.0, correction_prefactor: 0.0, potential: None }
    }
}

impl MadelungParams {
    fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.m > 0.0) || !(self.hbar >= 0.0) || !self.hbar.is_finite() {
            return Err(Error::InvalidConfig(format!("need m > 0 and hbar >= 0, got {} and {}", self.m, self.hbar)));
        }
        if !self.correction_prefactor.is_finite() || self.correction_prefactor < 0.0 {
            return Err(Error::InvalidConfig("correction prefactor must be finite and non-negative".into()));
        }
        if let Some(v) = &self.potential {
            if v.len() != grid.len() {
                return Err(Error::Shape(format!("potential has {} values for {} grid points", v.len(), grid.len())));
            }
        }
        Ok(())
    }

    fn phase_period(&self) -> Option<f64> {
        (self.hbar > 0.0).then_some(2.0 * std::f64::consts::PI * self.hbar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroState {
    pub grid: Grid,
    pub rho: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    pub t: f64,
}

impl HydroState {
    pub fn new(grid: Grid, rho: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if rho.len() != grid.len() || s.len() != grid.len() {
            return Err(Error::Shape(format!("grid has {} points, rho {}, S {}", grid.len(), rho.len(), s.len())));
        }
        if rho.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite initial data".into()));
        }
        Ok(Self { grid, rho, s, t: 0.0 })
    }

    /// A normalised Gaussian packet of width `sigma` at `center` with
    /// momentum `p` (phase `S = p (z - center)`), on a one-dimensional grid.
    pub fn gaussian_packet(grid: Grid, center: f64, sigma: f64, p: f64) -> Result<Self> {
        if grid.d() != 1 || !(sigma > 0.0) {
            return Err(Error::InvalidConfig("gaussian packets need a 1-D grid and sigma > 0".into()));
        }
        let rho: Vec<f64> = (0..grid.len())
            .map(|i| {
                let u = (grid.coordinate(0, i) - center) / sigma;
                (-0.5 * u * u).exp()
            })
            .collect();
        let mass = rho.iter().sum::<f64>() * grid.h;
        let s = (0..grid.len()).map(|i| p * (grid.coordinate(0, i) - center)).collect();
        Self::new(grid, rho.into_iter().map(|r| r / mass).collect(), s)
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `<z_axis>` under `rho`.
    pub fn mean_position(&self, axis: usize) -> f64 {
        (0..self.grid.len()).map(|i| self.grid.coordinate(axis, i) * self.rho[i]).sum::<f64>()
            * self.grid.cell_volume()
            / self.mass()
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let mu = self.mean_position(axis);
        (0..self.grid.len()).map(|i| (self.grid.coordinate(axis, i) - mu).powi(2) * self.rho[i]).sum::<f64>()
            * self.grid.cell_volume()
            / self.mass()
    }

    /// Rows of `index,z0..,rho,S`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["index".to_string()];
        header.extend((0..self.grid.d()).map(|a| format!("z{a}")));
        header.extend(["rho".to_string(), "S".to_string()]);
        w.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row = vec![i.to_string()];
            row.extend(self.grid.point(i).iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", self.rho[i]));
            row.push(format!("{:e}", self.s[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `rho` and `S` columns of a snapshot written on `grid`.
    pub fn read_csv<R: Read>(reader: R, grid: Grid) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Input(format!("missing column {name}")))
        };
        let (ci, cr, cs) = (col("index")?, col("rho")?, col("S")?);
        let mut rho = vec![f64::NAN; grid.len()];
        let mut s = vec![f64::NAN; grid.len()];
        for record in r.records() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                record[c].trim().parse().map_err(|_| Error::Input(format!("bad number {:?}", &record[c])))
            };
            let i: usize = record[ci].trim().parse().map_err(|_| Error::Input("bad index".into()))?;
            if i >= grid.len() {
                return Err(Error::Input(format!("index {i} outside the grid")));
            }
            rho[i] = parse(cr)?;
            s[i] = parse(cs)?;
        }
        Self::new(grid, rho, s)
    }
}

/// Values of `f` at the two neighbours of `i` along `axis`, with ghosts on
/// open walls.
#[derive(Clone, Copy)]
enum Ghost {
    Linear,
    LogLinear,
}

fn neighbours(grid: &Grid, f: &[f64], i: usize, axis: usize, ghost: Ghost) -> (f64, f64) {
    let extend = |inner: f64| match ghost {
        Ghost::Linear => 2.0 * f[i] - inner,
        Ghost::LogLinear => f[i] * f[i] / inner,
    };
    match (grid.neighbour(i, axis, false), grid.neighbour(i, axis, true)) {
        (Some(d), Some(u)) => (f[d], f[u]),
        (None, Some(u)) => (extend(f[u]), f[u]),
        (Some(d), None) => (f[d], extend(f[d])),
        (None, None) => (f[i], f[i]),
    }
}

fn wrap(delta: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => delta - p * (delta / p).round(),
        None => delta,
    }
}

fn laplacian(grid: &Grid, f: &[f64], ghost: Ghost) -> Vec<f64> {
    let h2 = grid.h * grid.h;
    (0..grid.len())
        .map(|i| {
            (0..grid.d())
                .map(|a| {
                    let (lo, hi) = neighbours(grid, f, i, a, ghost);
                    lo - 2.0 * f[i] + hi
                })
                .sum::<f64>()
                / h2
        })
        .collect()
}

fn amplitude(rho: &[f64]) -> Vec<f64> {
    rho.iter().map(|r| r.max(RHO_FLOOR).sqrt()).collect()
}

/// Evolution stops once the density falls below `-NEGATIVE_DENSITY` times
/// its initial maximum.
pub const NEGATIVE_DENSITY: f64 = 1e-6;

/// The finite-N correction is switched off where the density is below this;
/// there `lap rho / rho` is dominated by the floor rather than the data.
pub const CORRECTION_FLOOR: f64 = 1e-8;

/// `G = lap rho / rho` with the floored density, zero below
/// [`CORRECTION_FLOOR`].
fn curvature(grid: &Grid, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let floored: Vec<f64> = rho.iter().map(|r| r.max(RHO_FLOOR)).collect();
    let lap = laplacian(grid, &floored, Ghost::LogLinear);
    let g = lap.iter().zip(rho).map(|(l, &r)| if r > CORRECTION_FLOOR { l / r } else { 0.0 }).collect();
    (lap, g)
}

/// `S_dot`. Quantum mode adds `+(hbar^2/2m) lap sqrt(rho) / sqrt(rho)`, the
/// corrected mode also `eps (hbar^2/8m)(2 lap G - G^2)` with
/// `G = lap rho / rho`.
pub fn hj_rhs(state: &HydroState, params: &MadelungParams, mode: Mode) -> Result<Vec<f64>> {
    params.validate(&state.grid)?;
    check_state(state)?;
    Ok(hj(state, params, mode))
}

/// `rho_dot = -div(rho grad S / m)` in flux form: every face flux leaves
/// one cell and enters its neighbour, and open walls carry none.
pub fn continuity_rhs(state: &HydroState, params: &MadelungParams) -> Result<Vec<f64>> {
    params.validate(&state.grid)?;
    check_state(state)?;
    Ok(continuity(state, params))
}

fn check_state(state: &HydroState) -> Result<()> {
    if state.rho.len() != state.grid.len() || state.s.len() != state.grid.len() {
        return Err(Error::Shape("state fields do not match the grid".into()));
    }
    let low = state.rho.iter().filter(|&&r| r < RHO_FLOOR).count();
    if low * 100 > state.rho.len() {
        log::warn!("density is below the floor on {low} of {} cells", state.rho.len());
    }
    Ok(())
}

fn hj(state: &HydroState, params: &MadelungParams, mode: Mode) -> Vec<f64> {
    let grid = &state.grid;
    let period = params.phase_period();
    let h = grid.h;
    let mut out: Vec<f64> = (0..grid.len())
        .map(|i| {
            let s = &state.s;
            -(0..grid.d())
                .map(|a| {
                    let (lo, hi) = neighbours(grid, s, i, a, Ghost::Linear);
                    let dp = wrap(hi - s[i], period) / h;
                    let dm = wrap(s[i] - lo, period) / h;
                    dp * dp + dm * dm
                })
                .sum::<f64>()
                / (4.0 * params.m)
        })
        .collect();
    if mode != Mode::Classical {
        let amp = amplitude(&state.rho);
        let lap = laplacian(grid, &amp, Ghost::LogLinear);
        let c = params.hbar * params.hbar / (2.0 * params.m);
        for i in 0..grid.len() {
            out[i] += c * lap[i] / amp[i];
        }
    }
    if mode == Mode::Corrected && params.correction_prefactor > 0.0 {
        let (_, g) = curvature(grid, &state.rho);
        let lap_g = laplacian(grid, &g, Ghost::Linear);
        let c = params.correction_prefactor * params.hbar * params.hbar / (8.0 * params.m);
        for i in (0..grid.len()).filter(|&i| state.rho[i] > CORRECTION_FLOOR) {
            out[i] += c * (2.0 * lap_g[i] - g[i] * g[i]);
        }
    }
    if let Some(v) = &params.potential {
        for (o, v) in out.iter_mut().zip(v) {
            *o -= v;
        }
    }
    out
}

fn continuity(state: &HydroState, params: &MadelungParams) -> Vec<f64> {
    let grid = &state.grid;
    let period = params.phase_period();
    let (rho, s) = (&state.rho, &state.s);
    let mut out = vec![0.0; grid.len()];
    let scale = 1.0 / (params.m * grid.h * grid.h);
    for i in 0..grid.len() {
        for a in 0..grid.d() {
            if let Some(j) = grid.neighbour(i, a, true) {
                let flux = 0.5 * (rho[i] + rho[j]) * wrap(s[j] - s[i], period) * scale;
                out[i] -= flux;
                out[j] += flux;
            }
        }
    }
    out
}

/// The discrete Hamiltonian whose canonical flow the scheme integrates:
/// kinetic `sum_faces rho_f |dS/h|^2 / 2m`, the Bohm term
/// `(hbar^2/2m) sum_faces |dA/h|^2` with `A = sqrt(rho)`, the correction
/// `-eps (hbar^2/8m) sum (lap rho)^2 / rho` and any external potential, all
/// times the cell volume.
pub fn energy(state: &HydroState, params: &MadelungParams, mode: Mode) -> Result<f64> {
    params.validate(&state.grid)?;
    let grid = &state.grid;
    let period = params.phase_period();
    let amp = amplitude(&state.rho);
    let (mut kinetic, mut bohm) = (0.0, 0.0);
    for i in 0..grid.len() {
        for a in 0..grid.d() {
            if let Some(j) = grid.neighbour(i, a, true) {
                let ds = wrap(state.s[j] - state.s[i], period);
                kinetic += 0.5 * (state.rho[i] + state.rho[j]) * ds * ds;
                bohm += (amp[j] - amp[i]).powi(2);
            }
        }
    }
    let h2 = grid.h * grid.h;
    let mut e = kinetic / (2.0 * params.m * h2);
    if mode != Mode::Classical {
        e += params.hbar * params.hbar / (2.0 * params.m) * bohm / h2;
    }
    if mode == Mode::Corrected && params.correction_prefactor > 0.0 {
        let (lap, _) = curvature(grid, &state.rho);
        let sum: f64 =
            lap.iter().zip(&state.rho).filter(|(_, &r)| r > CORRECTION_FLOOR).map(|(l, r)| l * l / r).sum();
        e -= params.correction_prefactor * params.hbar * params.hbar / (8.0 * params.m) * sum;
    }
    if let Some(v) = &params.potential {
        e += v.iter().zip(&state.rho).map(|(v, r)| v * r).sum::<f64>();
    }
    Ok(e * grid.cell_volume())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub state: HydroState,
    pub steps: usize,
    /// `|M(t) - M(0)|`.
    pub mass_drift: f64,
    /// `|E(t) - E(0)| / |E(0)|`, or the absolute change when `E(0) = 0`.
    pub energy_drift: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// The largest stable explicit step in quantum modes, `h^2 m / (2 d hbar)`.
pub fn max_stable_dt(grid: &Grid, params: &MadelungParams) -> f64 {
    if params.hbar == 0.0 {
        return f64::INFINITY;
    }
    grid.h * grid.h * params.m / (2.0 * grid.d() as f64 * params.hbar)
}

/// Classic fourth-order Runge-Kutta for `steps` steps of size `dt`.
pub fn evolve(state: &HydroState, params: &MadelungParams, dt: f64, steps: usize, mode: Mode) -> Result<EvolveReport> {
    evolve_observed(state, params, dt, steps, mode, 0, |_| {})
}

/// As [`evolve`], calling `observe` with the state every `every` steps
/// (and at step 0) when `every > 0`.
pub fn evolve_observed(
    state: &HydroState,
    params: &MadelungParams,
    dt: f64,
    steps: usize,
    mode: Mode,
    every: usize,
    mut observe: impl FnMut(&HydroState),
) -> Result<EvolveReport> {
    params.validate(&state.grid)?;
    check_state(state)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if mode != Mode::Classical && dt > max_stable_dt(&state.grid, params) {
        return Err(Error::InvalidConfig(format!(
            "dt = {dt} exceeds the stability bound {:e}",
            max_stable_dt(&state.grid, params)
        )));
    }
    let m0 = state.mass();
    let e0 = energy(state, params, mode)?;
    let mut cur = state.clone();
    let negative_limit = NEGATIVE_DENSITY * state.rho.iter().copied().fold(0.0, f64::max);
    if every > 0 {
        observe(&cur);
    }
    let n = cur.rho.len();
    let rhs = |s: &HydroState| (continuity(s, params), hj(s, params, mode));
    let shifted = |base: &HydroState, k: &(Vec<f64>, Vec<f64>), f: f64| {
        let mut s = base.clone();
        for i in 0..n {
            s.rho[i] += f * k.0[i];
            s.s[i] += f * k.1[i];
        }
        s
    };
    for step in 1..=steps {
        let k1 = rhs(&cur);
        let k2 = rhs(&shifted(&cur, &k1, 0.5 * dt));
        let k3 = rhs(&shifted(&cur, &k2, 0.5 * dt));
        let k4 = rhs(&shifted(&cur, &k3, dt));
        for i in 0..n {
            cur.rho[i] += dt / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
            cur.s[i] += dt / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
        }
        cur.t = state.t + step as f64 * dt;
        if let Some(i) = (0..n).find(|&i| !cur.rho[i].is_finite() || !cur.s[i].is_finite()) {
            return Err(Error::Instability {
                step,
                t: cur.t,
                detail: format!("non-finite field at grid point {i} ({:?})", cur.grid.point(i)),
            });
        }
        if let Some(i) = (0..n).find(|&i| cur.rho[i] < -negative_limit) {
            return Err(Error::Instability {
                step,
                t: cur.t,
                detail: format!("density {:e} at grid point {i} ({:?})", cur.rho[i], cur.grid.point(i)),
            });
        }
        if every > 0 && step % every == 0 {
            observe(&cur);
        }
    }
    let e1 = energy(&cur, params, mode)?;
    let energy_drift = if e0 == 0.0 { (e1 - e0).abs() } else { ((e1 - e0) / e0).abs() };
    Ok(EvolveReport {
        mass_drift: (cur.mass() - m0).abs(),
        state: cur,
        steps,
        energy_drift,
        initial_energy: e0,
        final_energy: e1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn packet_grid(n: usize, periodic: bool) -> Grid {
        let h = 14.0 / n as f64;
        Grid::new(vec![-7.0], h, vec![n], periodic).unwrap()
    }

    fn plane_wave(n: usize, k: i32) -> (HydroState, f64) {
        let grid = Grid::line(0.0, 2.0, n, true).unwrap();
        let p = 2.0 * std::f64::consts::PI * k as f64 / 2.0;
        let s = (0..n).map(|i| p * grid.coordinate(0, i)).collect();
        (HydroState::new(grid, vec![0.5; n], s).unwrap(), p)
    }

    #[test]
    fn plane_wave_phase_rate() {
        let (state, p) = plane_wave(64, 3);
        let params = MadelungParams::default();
        for mode in [Mode::Classical, Mode::Quantum] {
            for v in hj_rhs(&state, &params, mode).unwrap() {
                assert_relative_eq!(v, -p * p / 2.0, max_relative = 1e-12);
            }
        }
        assert!(continuity_rhs(&state, &params).unwrap().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn plane_wave_evolves_by_a_uniform_phase() {
        let (state, p) = plane_wave(64, 2);
        let params = MadelungParams::default();
        let dt = 1e-4;
        let out = evolve(&state, &params, dt, 200, Mode::Quantum).unwrap().state;
        for i in 0..64 {
            assert_relative_eq!(out.rho[i], 0.5, epsilon = 1e-12);
            assert_relative_eq!(out.s[i], state.s[i] - p * p / 2.0 * 0.02, epsilon = 1e-9);
        }
    }

    #[test]
    fn classical_gaussian_at_rest_is_static() {
        let state = HydroState::gaussian_packet(packet_grid(128, false), 0.0, 0.5, 0.0).unwrap();
        let params = MadelungParams::default();
        assert!(hj_rhs(&state, &params, Mode::Classical).unwrap().iter().all(|v| *v == 0.0));
        let out = evolve(&state, &params, 1e-3, 100, Mode::Classical).unwrap();
        assert_eq!(out.state.rho, state.rho);
    }

    #[test]
    fn constant_phase_carries_no_current() {
        let mut state = HydroState::gaussian_packet(packet_grid(128, true), 0.0, 1.0, 0.0).unwrap();
        state.s.iter_mut().for_each(|s| *s = 3.0);
        assert!(continuity_rhs(&state, &MadelungParams::default()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quantum_term_matches_a_stencil_oracle() {
        let state = HydroState::gaussian_packet(packet_grid(256, false), 0.0, 1.0, 0.0).unwrap();
        let params = MadelungParams { hbar: 0.8, m: 1.5, ..Default::default() };
        let sdot = hj_rhs(&state, &params, Mode::Quantum).unwrap();
        let h = state.grid.h;
        for i in [40, 128, 200] {
            let a = |j: usize| state.rho[j].sqrt();
            let oracle = 0.64 / 3.0 * (a(i + 1) - 2.0 * a(i) + a(i - 1)) / (h * h) / a(i);
            assert_relative_eq!(sdot[i], oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn continuity_matches_the_analytic_current() {
        // rho Gaussian, S = p z: rho_dot = -(p/m) rho'
        let state = HydroState::gaussian_packet(packet_grid(1024, false), 0.0, 1.0, 0.7).unwrap();
        let params = MadelungParams { m: 2.0, ..Default::default() };
        let rdot = continuity_rhs(&state, &params).unwrap();
        for i in [300, 500, 700] {
            let z = state.grid.coordinate(0, i);
            let analytic = -(0.7 / 2.0) * (-z) * state.rho[i];
            assert!((rdot[i] - analytic).abs() < 1e-4, "{} vs {analytic}", rdot[i]);
        }
        let total: f64 = rdot.iter().sum();
        assert!(total.abs() < 1e-14);
    }

    #[test]
    fn scheme_is_the_canonical_flow_of_the_energy() {
        let grid = Grid::line(0.0, 1.0, 48, true).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let rho: Vec<f64> = (0..48).map(|i| 1.0 + 0.3 * (tau * grid.coordinate(0, i)).cos()).collect();
        let s: Vec<f64> = (0..48).map(|i| 0.2 * (tau * grid.coordinate(0, i)).sin() + 0.1 * (2.0 * tau * grid.coordinate(0, i)).cos()).collect();
        let state = HydroState::new(grid.clone(), rho, s).unwrap();
        let params = MadelungParams { m: 0.9, hbar: 0.6, correction_prefactor: 1e-3, potential: None };
        for mode in [Mode::Classical, Mode::Quantum, Mode::Corrected] {
            let sdot = hj_rhs(&state, &params, mode).unwrap();
            let rdot = continuity_rhs(&state, &params).unwrap();
            let eps = 1e-6;
            for i in [0, 7, 23, 47] {
                let bump = |which: u8, by: f64| {
                    let mut st = state.clone();
                    if which == 0 {
                        st.rho[i] += by;
                    } else {
                        st.s[i] += by;
                    }
                    energy(&st, &params, mode).unwrap()
                };
                let d_rho = (bump(0, eps) - bump(0, -eps)) / (2.0 * eps) / grid.h;
                let d_s = (bump(1, eps) - bump(1, -eps)) / (2.0 * eps) / grid.h;
                assert!((sdot[i] + d_rho).abs() < 1e-6 * d_rho.abs().max(1.0), "{mode:?} S_dot at {i}");
                assert!((rdot[i] - d_s).abs() < 1e-6 * d_s.abs().max(1.0), "{mode:?} rho_dot at {i}");
            }
        }
    }

    #[test]
    fn galilean_boost_moves_the_centre() {
        let v = 1.0;
        let state = HydroState::gaussian_packet(packet_grid(512, false), 0.0, 1.0, v).unwrap();
        let params = MadelungParams::default();
        let out = evolve(&state, &params, 1e-4, 5000, Mode::Quantum).unwrap();
        assert!((out.state.mean_position(0) - v * 0.5).abs() < 1e-4);
    }

    #[test]
    fn quantum_packet_conserves_mass_and_energy() {
        let state = HydroState::gaussian_packet(packet_grid(512, false), 0.0, 1.0, 0.0).unwrap();
        let out = evolve(&state, &MadelungParams::default(), 1e-4, 2000, Mode::Quantum).unwrap();
        assert!(out.mass_drift < 1e-12);
        assert!(out.energy_drift < 1e-6);
        assert!(out.state.variance(0) > state.variance(0));
    }

    #[test]
    fn external_potential_hook() {
        let grid = packet_grid(256, false);
        let v: Vec<f64> = (0..256).map(|i| 0.5 * grid.coordinate(0, i).powi(2)).collect();
        // the harmonic ground state is stationary
        let state = HydroState::gaussian_packet(grid, 0.0, 1.0 / 2f64.sqrt(), 0.0).unwrap();
        let params = MadelungParams { potential: Some(v), ..Default::default() };
        let out = evolve(&state, &params, 1e-4, 1000, Mode::Quantum).unwrap();
        let change = out.state.rho.iter().zip(&state.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change < 1e-4, "ground state moved by {change}");
        let sdot = hj_rhs(&state, &params, Mode::Quantum).unwrap();
        // ground-state energy hbar omega / 2
        assert_relative_eq!(sdot[128], -0.5, epsilon = 1e-3);
    }

    #[test]
    fn unstable_steps_are_rejected_or_reported() {
        let state = HydroState::gaussian_packet(packet_grid(512, false), 0.0, 1.0, 0.0).unwrap();
        let params = MadelungParams::default();
        assert!(matches!(evolve(&state, &params, 1e-2, 10, Mode::Quantum), Err(Error::InvalidConfig(_))));
        let strong = MadelungParams { correction_prefactor: 0.05, ..Default::default() };
        match evolve(&state, &strong, 1e-4, 5000, Mode::Corrected) {
            Err(Error::Instability { step, .. }) => assert!(step > 0),
            other => panic!("expected an instability, got {:?}", other.map(|r| r.energy_drift)),
        }
    }

    #[test]
    fn correction_vanishes_in_near_vacuum() {
        let state = HydroState::gaussian_packet(packet_grid(512, false), 0.0, 0.5, 0.0).unwrap();
        let params = MadelungParams { correction_prefactor: 1e-3, ..Default::default() };
        let quantum = hj_rhs(&state, &params, Mode::Quantum).unwrap();
        let corrected = hj_rhs(&state, &params, Mode::Corrected).unwrap();
        let mut inside = 0;
        for i in 0..state.rho.len() {
            if state.rho[i] > CORRECTION_FLOOR {
                inside += 1;
            } else {
                assert_eq!(quantum[i], corrected[i], "cell {i}");
            }
        }
        assert!(inside > 0 && inside < state.rho.len());
    }

    #[test]
    fn snapshots_and_csv() {
        let state = HydroState::gaussian_packet(packet_grid(64, false), 0.0, 1.0, 0.0).unwrap();
        let mut seen = Vec::new();
        evolve_observed(&state, &MadelungParams::default(), 1e-3, 10, Mode::Quantum, 5, |s| seen.push(s.t)).unwrap();
        assert_eq!(seen.len(), 3);
        assert_relative_eq!(seen[2], 0.01, epsilon = 1e-15);
        let mut buf = Vec::new();
        state.write_csv(&mut buf).unwrap();
        let back = HydroState::read_csv(buf.as_slice(), state.grid.clone()).unwrap();
        assert_eq!(back, state);
        assert_eq!("quantum".parse::<Mode>().unwrap(), Mode::Quantum);
        assert!("bogus".parse::<Mode>().is_err());
    }
}
