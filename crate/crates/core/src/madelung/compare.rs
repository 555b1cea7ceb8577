//! Hydrodynamic evolution against the linear oracle, and the scaling of the
//! non-linear correction with its prefactor.

use serde::{Deserialize, Serialize};

use super::{evolve, from_wavefunction, schrodinger_oracle, to_wavefunction, HydroState, MadelungParams, Mode};
use crate::numerics::{fit_line, LineFit};
use crate::{Error, Result};

/// Phase comparisons skip points with less density than this.
const PHASE_DENSITY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub mode: Mode,
    pub t: f64,
    /// `||rho_hydro - |psi|^2||_2`.
    pub l2_density_error: f64,
    /// `|| sqrt(rho_hydro) - |psi| ||_2`.
    pub l2_amplitude_error: f64,
    /// Largest `|S_hydro - hbar arg psi|` modulo `2 pi hbar` where both
    /// densities exceed `1e-6`, after removing the mean offset.
    pub phase_discrepancy: f64,
    pub mass_drift: f64,
    pub energy_drift: f64,
    /// In corrected mode, `||rho_corrected - rho_quantum||_2`.
    pub deviation_from_quantum: Option<f64>,
}

fn l2(grid_volume: f64, a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * grid_volume).sqrt()
}

/// Evolves `initial` hydrodynamically in `mode` and, from the same data,
/// with the Crank-Nicolson oracle, then compares the two.
pub fn compare_evolutions(
    initial: &HydroState,
    params: &MadelungParams,
    dt: f64,
    steps: usize,
    mode: Mode,
) -> Result<ComparisonReport> {
    if !(params.hbar > 0.0) {
        return Err(Error::InvalidConfig("comparison with the oracle needs hbar > 0".into()));
    }
    let hydro = evolve(initial, params, dt, steps, mode)?;
    let linear = MadelungParams { correction_prefactor: 0.0, ..params.clone() };
    let psi = schrodinger_oracle(&to_wavefunction(initial, params.hbar)?, &linear, dt, steps)?;
    let (oracle, _) = from_wavefunction(&psi, params.hbar)?;
    let vol = initial.grid.cell_volume();

    let amp_h: Vec<f64> = hydro.state.rho.iter().map(|r| r.max(0.0).sqrt()).collect();
    let amp_o: Vec<f64> = psi.psi.iter().map(|c| c.norm()).collect();
    let period = 2.0 * std::f64::consts::PI * params.hbar;
    let diffs: Vec<f64> = (0..initial.grid.len())
        .filter(|&i| hydro.state.rho[i] > PHASE_DENSITY && oracle.rho[i] > PHASE_DENSITY)
        .map(|i| {
            let d = hydro.state.s[i] - oracle.s[i];
            d - period * (d / period).round()
        })
        .collect();
    let phase_discrepancy = if diffs.is_empty() {
        0.0
    } else {
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        diffs.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max)
    };

    let deviation_from_quantum = if mode == Mode::Corrected {
        let quantum = evolve(initial, params, dt, steps, Mode::Quantum)?;
        Some(l2(vol, &hydro.state.rho, &quantum.state.rho))
    } else {
        None
    };
    Ok(ComparisonReport {
        mode,
        t: hydro.state.t,
        l2_density_error: l2(vol, &hydro.state.rho, &oracle.rho),
        l2_amplitude_error: l2(vol, &amp_h, &amp_o),
        phase_discrepancy,
        mass_drift: hydro.mass_drift,
        energy_drift: hydro.energy_drift,
        deviation_from_quantum,
    })
}

/// `r^2 N^{-2/d}`.
pub fn correction_prefactor_for(n_events: usize, r: f64, d: usize) -> f64 {
    r * r * (n_events as f64).powf(-2.0 / d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub prefactor: f64,
    /// `||rho_corrected - rho_quantum||_2` at the final time.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Deviation against prefactor, through the origin only if the data say so.
    pub fit: LineFit,
    /// Deviation with the prefactor switched off.
    pub zero_prefactor_deviation: f64,
}

/// Deviation of corrected from quantum evolution for each prefactor.
pub fn correction_scaling(
    initial: &HydroState,
    params: &MadelungParams,
    dt: f64,
    steps: usize,
    prefactors: &[f64],
) -> Result<ScalingReport> {
    if prefactors.len() < 3 {
        return Err(Error::Fit { needed: 3, got: prefactors.len() });
    }
    let base = MadelungParams { correction_prefactor: 0.0, ..params.clone() };
    let quantum = evolve(initial, &base, dt, steps, Mode::Quantum)?;
    let vol = initial.grid.cell_volume();
    let zero = evolve(initial, &base, dt, steps, Mode::Corrected)?;
    let zero_prefactor_deviation = l2(vol, &zero.state.rho, &quantum.state.rho);
    let rows = prefactors
        .iter()
        .map(|&eps| {
            let p = MadelungParams { correction_prefactor: eps, ..params.clone() };
            let run = evolve(initial, &p, dt, steps, Mode::Corrected)?;
            Ok(ScalingRow { prefactor: eps, deviation: l2(vol, &run.state.rho, &quantum.state.rho) })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.prefactor).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.deviation).collect();
    Ok(ScalingReport { fit: fit_line(&x, &y)?, rows, zero_prefactor_deviation })
}
