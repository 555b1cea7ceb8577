//! Wavefunctions `psi = sqrt(rho) exp(i S / hbar)` and the Crank-Nicolson
//! reference solver for the linear Schroedinger equation.

use num_complex::Complex64;

use super::{HydroState, MadelungParams, RHO_FLOOR};
use crate::coarse::Grid;
use crate::numerics::conjugate_gradient;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: Grid,
    pub psi: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, psi: Vec<Complex64>) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(Error::Shape(format!("{} amplitudes for {} grid points", psi.len(), grid.len())));
        }
        Ok(Self { grid, psi })
    }

    /// `sum |psi|^2 h^d`.
    pub fn norm_squared(&self) -> f64 {
        self.psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_squared().sqrt();
        if !(n > 0.0) {
            return Err(Error::Input("cannot normalise a vanishing wavefunction".into()));
        }
        self.psi.iter_mut().for_each(|c| *c /= n);
        Ok(())
    }

    pub fn density(&self) -> Vec<f64> {
        self.psi.iter().map(|c| c.norm_sqr()).collect()
    }
}

pub fn to_wavefunction(state: &HydroState, hbar: f64) -> Result<WaveFunction> {
    if !(hbar > 0.0) {
        return Err(Error::InvalidConfig("a wavefunction needs hbar > 0".into()));
    }
    let psi = state
        .rho
        .iter()
        .zip(&state.s)
        .map(|(r, s)| Complex64::from_polar(r.max(0.0).sqrt(), s / hbar))
        .collect();
    WaveFunction::new(state.grid.clone(), psi)
}

/// Density and unwrapped phase. The phase is continued from a spanning
/// sweep of the grid (along the last axis, then down the others). Points
/// with `|psi|^2` at or below the density floor are nodes: their phase is
/// copied from the predecessor and they are flagged in the returned mask.
pub fn from_wavefunction(wave: &WaveFunction, hbar: f64) -> Result<(HydroState, Vec<bool>)> {
    if !(hbar > 0.0) {
        return Err(Error::InvalidConfig("a wavefunction needs hbar > 0".into()));
    }
    let grid = &wave.grid;
    let n = grid.len();
    let rho = wave.density();
    let nodes: Vec<bool> = rho.iter().map(|&r| r <= RHO_FLOOR).collect();
    let mut s = vec![0.0; n];
    for i in 0..n {
        let pred = (0..grid.d()).rev().find(|&a| grid.axis_index(i, a) > 0).map(|a| i - grid.stride(a));
        s[i] = match pred {
            None => {
                if nodes[i] {
                    0.0
                } else {
                    hbar * wave.psi[i].arg()
                }
            }
            Some(p) if nodes[i] || nodes[p] => {
                if nodes[i] {
                    s[p]
                } else {
                    // restart from the principal value nearest the predecessor
                    let raw = hbar * wave.psi[i].arg();
                    let period = 2.0 * std::f64::consts::PI * hbar;
                    raw - period * ((raw - s[p]) / period).round()
                }
            }
            Some(p) => s[p] + hbar * (wave.psi[i] * wave.psi[p].conj()).arg(),
        };
    }
    Ok((HydroState::new(grid.clone(), rho, s)?, nodes))
}

/// `H psi = -(hbar^2/2m) lap psi + V psi`, with `psi = 0` beyond open
/// walls.
fn apply_hamiltonian(grid: &Grid, params: &MadelungParams, x: &[f64], out: &mut [f64]) {
    let c = -params.hbar * params.hbar / (2.0 * params.m * grid.h * grid.h);
    for i in 0..grid.len() {
        let mut lap = -2.0 * grid.d() as f64 * x[i];
        for a in 0..grid.d() {
            for up in [false, true] {
                if let Some(j) = grid.neighbour(i, a, up) {
                    lap += x[j];
                }
            }
        }
        out[i] = c * lap + params.potential.as_ref().map_or(0.0, |v| v[i] * x[i]);
    }
}

/// Crank-Nicolson steps `(1 + i a H) psi' = (1 - i a H) psi` with
/// `a = dt / (2 hbar)`. Each step solves the equivalent real symmetric
/// positive-definite system `(1 + a^2 H^2) psi' = (1 - i a H)^2 psi` by
/// conjugate gradients, separately for the real and imaginary parts.
pub fn schrodinger_oracle(
    psi0: &WaveFunction,
    params: &MadelungParams,
    dt: f64,
    steps: usize,
) -> Result<WaveFunction> {
    if !(params.hbar > 0.0) || !(params.m > 0.0) {
        return Err(Error::InvalidConfig("the oracle needs hbar > 0 and m > 0".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if let Some(v) = &params.potential {
        if v.len() != psi0.grid.len() {
            return Err(Error::Shape("potential does not match the grid".into()));
        }
    }
    let grid = &psi0.grid;
    let n = grid.len();
    let a = dt / (2.0 * params.hbar);
    let h = |x: &[f64], out: &mut [f64]| apply_hamiltonian(grid, params, x, out);
    let normal = |x: &[f64], out: &mut [f64]| {
        let mut hx = vec![0.0; n];
        h(x, &mut hx);
        h(&hx, out);
        for i in 0..n {
            out[i] = x[i] + a * a * out[i];
        }
    };

    let mut re: Vec<f64> = psi0.psi.iter().map(|c| c.re).collect();
    let mut im: Vec<f64> = psi0.psi.iter().map(|c| c.im).collect();
    let mut h_re = vec![0.0; n];
    let mut h_im = vec![0.0; n];
    for _ in 0..steps {
        // b = (1 - i a H)^2 psi = (1 - a^2 H^2) psi - 2 i a H psi
        h(&re, &mut h_re);
        h(&im, &mut h_im);
        let mut hh_re = vec![0.0; n];
        let mut hh_im = vec![0.0; n];
        h(&h_re, &mut hh_re);
        h(&h_im, &mut hh_im);
        let b_re: Vec<f64> = (0..n).map(|i| re[i] - a * a * hh_re[i] + 2.0 * a * h_im[i]).collect();
        let b_im: Vec<f64> = (0..n).map(|i| im[i] - a * a * hh_im[i] - 2.0 * a * h_re[i]).collect();
        conjugate_gradient(normal, &b_re, &mut re, 1e-14, 500)?;
        conjugate_gradient(normal, &b_im, &mut im, 1e-14, 500)?;
    }
    let psi = re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
    WaveFunction::new(grid.clone(), psi)
}
