//! Convergence of the discrete variety to its continuum limit as the
//! number of samples grows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    continuum_variety, cutoffs, discrete_acausal_variety, quantile_samples, rank_window_pasts, DensityModel, Grid,
    Shell,
};
use crate::numerics::{fit_power_law, LineFit};
use crate::{Error, Result};

/// Leading coefficient of the rank-window estimator in one dimension: the
/// mean view tends to `rho' / (2 rho)`, so the variety tends to half the
/// Fisher information.
pub const RANK_WINDOW_KAPPA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub model: DensityModel,
    pub n_list: Vec<usize>,
    /// Fixed IR length `L`; sets the window size through `r`.
    pub l: f64,
    pub d: usize,
    pub seed: u64,
    /// Points of the quadrature grid for the continuum terms.
    pub grid_points: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            model: DensityModel::Cosine { amplitude: 0.5 },
            n_list: vec![1_000, 10_000, 100_000],
            l: 4.0,
            d: 1,
            seed: 0,
            grid_points: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: usize,
    /// Neighbours per side in the rank window.
    pub window: usize,
    pub r: f64,
    pub discrete: f64,
    pub used: usize,
    /// Grid quadrature of the Fisher information.
    pub fisher_term: f64,
    pub constant_term: f64,
    pub correction_term: f64,
    #[serde(rename = "Z_V")]
    pub z_v: Option<f64>,
    /// `kappa` times the model's exact Fisher information.
    pub prediction: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub kappa: f64,
    /// Log-log fit of `abs_error` against `N`; absent when an error is zero.
    pub fit: Option<LineFit>,
}

pub fn convergence_study(config: &StudyConfig) -> Result<ConvergenceStudy> {
    config.model.validate()?;
    if config.d != 1 {
        return Err(Error::InvalidConfig(format!(
            "the convergence study samples one-dimensional models, d = {} is unsupported",
            config.d
        )));
    }
    if config.n_list.len() < 3 {
        return Err(Error::Fit { needed: 3, got: config.n_list.len() });
    }
    if config.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("N values must be strictly ascending".into()));
    }
    if config.n_list[0] < 100 {
        return Err(Error::InvalidConfig("N values below 100 are too small to coarse-grain".into()));
    }
    let (lo, hi) = config.model.support();
    let periodic = config.model.is_periodic();
    let grid = Grid::line(lo, hi, config.grid_points, periodic)?;
    let exact_fisher = config.model.fisher_information();

    let mut rows = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let state = config.model.on_grid(&grid, n)?;
        let cut = cutoffs(&state, config.l)?;
        let window = (cut.r.round() as usize).max(1);
        let samples = quantile_samples(&config.model, n, config.seed)?;
        let pasts = rank_window_pasts(&samples, window, periodic.then_some(hi - lo))?;
        let discrete = discrete_acausal_variety(&pasts, &Shell::Unbounded)?;
        let report = continuum_variety(&state, &cut)?;
        let prediction = RANK_WINDOW_KAPPA * exact_fisher;
        log::info!("N = {n}: discrete {:.6e}, prediction {prediction:.6e}", discrete.value);
        rows.push(ConvergenceRow {
            n,
            window,
            r: cut.r,
            discrete: discrete.value,
            used: discrete.used,
            fisher_term: report.fisher_term,
            constant_term: report.constant_term,
            correction_term: report.correction_term,
            z_v: report.z_v,
            prediction,
            abs_error: (discrete.value - prediction).abs(),
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
    let fit = fit_power_law(&ns, &errors).ok();
    Ok(ConvergenceStudy { rows, kappa: RANK_WINDOW_KAPPA, fit })
}

pub fn write_study_csv<W: Write>(study: &ConvergenceStudy, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in &study.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
