#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coarse;
pub mod ecs;
pub mod embedding;
pub mod energy;
mod error;
pub mod madelung;
pub mod numerics;
pub mod rng;

pub use coarse::{CoarseState, CutoffSpec, DensityModel, Grid, VarietyReport};
pub use ecs::{CausalLink, CausalRelationTable, EnergeticCausalSet, EventId, LayeredConfig, View};
pub use embedding::{EmbeddingConfig, MomentumSplit};
pub use energy::{EnergyReport, HamiltonianParams};
pub use error::{Error, Result};
pub use madelung::{HydroState, MadelungParams, Mode, WaveFunction};
