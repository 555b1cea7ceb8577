//! Run configuration: one JSON document with a section per stage. Every
//! field has a default, unknown fields are rejected, and command-line flags
//! are applied on top of whatever the file provides.

use std::path::{Path, PathBuf};

use causal_variety::coarse::DensityMethod;
use causal_variety::ecs::MomentumSampler;
use causal_variety::energy::Pairing;
use causal_variety::{DensityModel, Grid, LayeredConfig, Mode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory, relative to the output root unless absolute.
    pub output: Option<PathBuf>,
    pub generate: GenerateSection,
    pub energy: EnergySection,
    pub embed: EmbedSection,
    pub variety: VarietySection,
    pub madelung: MadelungSection,
    pub pipeline: PipelineSection,
    pub sweep: SweepSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub d: usize,
    pub layers: usize,
    pub events_per_layer: usize,
    pub n_pre: usize,
    pub sampler: MomentumSampler,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { d: 1, layers: 100, events_per_layer: 100, n_pre: 2, sampler: MomentumSampler::default() }
    }
}

impl GenerateSection {
    pub fn layered(&self, seed: u64) -> LayeredConfig {
        LayeredConfig {
            d: self.d,
            layers: self.layers,
            events_per_layer: self.events_per_layer,
            n_pre: self.n_pre,
            sampler: self.sampler.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub g: f64,
    pub g_prime: f64,
    pub m: f64,
    pub hbar: f64,
    pub z_v: f64,
    pub pairing: Pairing,
    /// Causal set JSON to read instead of generating one.
    pub input: Option<PathBuf>,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self { g: 1.0, g_prime: 0.0, m: 1.0, hbar: 1.0, z_v: 1.0, pairing: Pairing::Exact, input: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// Causal set JSON to read instead of generating one.
    pub input: Option<PathBuf>,
    pub order: u8,
    pub kinetic_factor: Option<f64>,
    /// Event placed at the origin after reconstruction.
    pub gauge_event: Option<usize>,
    /// Cycle tolerance for reconstructing positions from the history's own
    /// momenta. `None` accepts any momenta and projects them onto the
    /// nearest compatible set by least squares.
    pub tolerance: Option<f64>,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Stratified inverse-CDF samples with one random offset.
    Quantile,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySource {
    /// The model's own density, evaluated on the grid.
    Exact,
    Kde { bandwidth: Option<f64> },
    Histogram,
}

impl DensitySource {
    pub fn method(self) -> Option<DensityMethod> {
        match self {
            Self::Exact => None,
            Self::Kde { bandwidth } => Some(DensityMethod::Kde { bandwidth }),
            Self::Histogram => Some(DensityMethod::Histogram),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarietySection {
    pub model: DensityModel,
    #[serde(rename = "N")]
    pub n_events: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub d: usize,
    pub grid_points: usize,
    pub sampling: Sampling,
    pub density: DensitySource,
    /// Sample sizes for a convergence study; empty to skip it.
    pub study: Vec<usize>,
}

impl Default for VarietySection {
    fn default() -> Self {
        Self {
            model: DensityModel::standard_gaussian(),
            n_events: 10_000,
            l: 1.0,
            d: 1,
            grid_points: 4096,
            sampling: Sampling::Quantile,
            density: DensitySource::Kde { bandwidth: None },
            study: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub d: usize,
    pub periodic: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { lo: -7.0, hi: 7.0, points: 512, d: 1, periodic: false }
    }
}

impl GridSection {
    /// A cube of `points^d` nodes with spacing `(hi - lo) / points`, the
    /// upper face excluded.
    pub fn build(&self) -> Result<Grid, CliError> {
        if self.d == 0 || self.d > 3 {
            return Err(CliError::Config(format!("grid dimension must be 1, 2 or 3, got {}", self.d)));
        }
        if !(self.hi > self.lo) || self.points < 3 {
            return Err(CliError::Config(format!(
                "grid needs lo < hi and at least 3 points, got [{}, {}) with {}",
                self.lo, self.hi, self.points
            )));
        }
        let h = (self.hi - self.lo) / self.points as f64;
        Grid::new(vec![self.lo; self.d], h, vec![self.points; self.d], self.periodic).map_err(CliError::from_core)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Gaussian { center: f64, sigma: f64, momentum: f64 },
    /// A snapshot CSV (`index,z..,rho,S`) written on the configured grid.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadelungSection {
    pub m: f64,
    pub hbar: f64,
    pub mode: Mode,
    pub dt: f64,
    pub steps: usize,
    /// Snapshot interval in steps; 0 writes only the final state.
    pub snapshot_every: usize,
    pub grid: GridSection,
    pub initial: InitialState,
    pub correction_prefactor: f64,
    /// Event counts whose prefactors `r^2 N^{-2/d}` the `compare` command
    /// sweeps; empty to skip.
    pub scaling_n: Vec<usize>,
    pub scaling_r: f64,
}

impl Default for MadelungSection {
    fn default() -> Self {
        Self {
            m: 1.0,
            hbar: 1.0,
            mode: Mode::Quantum,
            dt: 1e-4,
            steps: 5000,
            snapshot_every: 0,
            grid: GridSection::default(),
            initial: InitialState::Gaussian { center: 0.0, sigma: 1.0, momentum: 0.0 },
            correction_prefactor: 0.0,
            scaling_n: Vec::new(),
            scaling_r: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Layer whose events are coarse-grained; the last one when unset.
    pub slice_layer: Option<usize>,
    #[serde(rename = "L")]
    pub l: f64,
    /// With `g' > 0`, evolve with the finite-N correction as well.
    pub correction: bool,
    pub r: f64,
    /// The evolution runs `substeps` steps of `dt / substeps` per configured
    /// step. Estimated densities have sharper tails than analytic packets,
    /// and the flow they drive needs the finer step.
    pub substeps: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { slice_layer: None, l: 4.0, correction: false, r: 1.0, substeps: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepCommand {
    Generate,
    Energy,
    Embed,
    Variety,
    Evolve,
    Compare,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub command: SweepCommand,
    /// JSON pointer into this config, e.g. `/variety/N`.
    pub parameter: String,
    pub values: Vec<serde_json::Value>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { command: SweepCommand::Variety, parameter: "/seed".into(), values: Vec::new() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    #[cfg(test)]
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The config with `pointer` set to `value`, re-validated against the
    /// schema by a round trip through serde.
    pub fn with_value(&self, pointer: &str, value: serde_json::Value) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        let slot = doc
            .pointer_mut(pointer)
            .ok_or_else(|| CliError::Config(format!("sweep parameter {pointer:?} does not name a config field")))?;
        *slot = value;
        serde_json::from_value(doc).map_err(|e| CliError::Config(format!("sweep value for {pointer}: {e}")))
    }

    /// SHA-256 of the canonical JSON of everything that affects results:
    /// the command name and the config without its output location.
    pub fn hash(&self, command: &str) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let body = serde_json::to_string(&canonical).expect("config serializes");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }
}
