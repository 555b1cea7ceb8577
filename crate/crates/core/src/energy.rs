//! Kinetic energy (causal surprise), acausal potential energy, the
//! Hamiltonian `H = g T + g' U` and the effective action.

use serde::{Deserialize, Serialize};

use crate::ecs::{CausalRelationTable, EnergeticCausalSet, EventId};
use crate::embedding::EmbeddingConfig;
use crate::numerics::{blocked_sum, dot, sq_dist};
use crate::{Error, Result};

/// Couplings of the history Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianParams {
    /// Kinetic coupling, dimensions of time per mass.
    pub g: f64,
    /// Potential coupling.
    pub g_prime: f64,
    pub m: f64,
    pub hbar: f64,
    pub n_pre: usize,
    pub z_v: f64,
}

impl Default for HamiltonianParams {
    fn default() -> Self {
        Self { g: 1.0, g_prime: 0.0, m: 1.0, hbar: 1.0, n_pre: 1, z_v: 1.0 }
    }
}

impl HamiltonianParams {
    /// Couplings with `g' = g^2 hbar^2 Z_V / (8 m)`, the choice under which
    /// the coarse-grained dynamics is Schroedinger's.
    pub fn quantum_matched(g: f64, m: f64, hbar: f64, n_pre: usize, z_v: f64) -> Result<Self> {
        let p = Self { g, g_prime: g * g * hbar * hbar * z_v / (8.0 * m), m, hbar, n_pre, z_v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) {
            return Err(Error::InvalidConfig(format!("g must be positive, got {}", self.g)));
        }
        if !(self.m > 0.0) {
            return Err(Error::InvalidConfig(format!("m must be positive, got {}", self.m)));
        }
        if !(self.hbar >= 0.0) {
            return Err(Error::InvalidConfig(format!("hbar must be non-negative, got {}", self.hbar)));
        }
        if self.n_pre == 0 {
            return Err(Error::InvalidConfig("n_pre must be at least 1".into()));
        }
        if !self.g_prime.is_finite() || !self.z_v.is_finite() {
            return Err(Error::InvalidConfig("g' and Z_V must be finite".into()));
        }
        Ok(())
    }

    pub fn is_quantum_matched(&self, rel_tol: f64) -> bool {
        let target = self.g * self.g * self.hbar * self.hbar * self.z_v / (8.0 * self.m);
        (self.g_prime - target).abs() <= rel_tol * target.abs().max(f64::MIN_POSITIVE)
    }

    /// The `hbar` implied by `g'/g^2 = hbar^2 Z_V / (8 m)`.
    pub fn effective_hbar(&self) -> f64 {
        if self.g_prime <= 0.0 || self.z_v <= 0.0 {
            return 0.0;
        }
        (8.0 * self.m * self.g_prime / (self.g * self.g * self.z_v)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub per_event_surprise: Vec<(EventId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surprise {
    pub value: f64,
    /// Parentless event; the surprise is reported as zero.
    pub boundary: bool,
}

/// `|sum_{K in IPast(I)} D(I,K)|^2` with unweighted views.
pub fn surprise(ecs: &EnergeticCausalSet, id: EventId) -> Result<Surprise> {
    let parents = ecs.parents(id)?;
    if parents.is_empty() {
        return Ok(Surprise { value: 0.0, boundary: true });
    }
    let own = ecs.view(id, 0.0)?.vector;
    let mut total = 0.0;
    for &k in parents {
        total += sq_dist(&own, &ecs.view(k, 0.0)?.vector);
    }
    Ok(Surprise { value: total * total, boundary: false })
}

/// Sum over linked pairs `I |> J` of the squared difference of their
/// unweighted views.
pub fn kinetic_energy(ecs: &EnergeticCausalSet) -> f64 {
    let d = ecs.dimension();
    let views = ecs.views_flat(0.0);
    let row = |e: EventId| &views[e.0 * d..(e.0 + 1) * d];
    ecs.links().iter().map(|l| sq_dist(row(l.target), row(l.source))).sum()
}

/// How the predecessor count `D_I` enters the quadratic kinetic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeRule {
    /// The actual number of immediate predecessors of each event.
    PerEvent,
    /// `D_I = n_pre` for every event.
    Uniform,
}

/// `sum_{I |> J} (D_I / 2)(t^2 + l^2)` over links. For any orthogonal
/// transverse/longitudinal split `t^2 + l^2 = |p|^2`.
pub fn kinetic_quadratic_form(ecs: &EnergeticCausalSet, rule: DegreeRule) -> f64 {
    ecs.links()
        .iter()
        .map(|l| {
            let degree = match rule {
                DegreeRule::PerEvent => ecs.parents(l.target).map_or(0, |p| p.len()),
                DegreeRule::Uniform => ecs.n_pre(),
            };
            0.5 * degree as f64 * dot(&l.momentum, &l.momentum)
        })
        .sum()
}

/// Sum over unordered acausal pairs of the squared difference of their
/// `w = 2` views.
pub fn potential_energy(ecs: &EnergeticCausalSet, relations: &CausalRelationTable) -> Result<f64> {
    if relations.len() != ecs.len() {
        return Err(Error::Shape(format!(
            "relation table covers {} events, causal set has {}",
            relations.len(),
            ecs.len()
        )));
    }
    let d = ecs.dimension();
    let n = ecs.len();
    let views = ecs.views_flat(2.0);
    Ok(blocked_sum(n, |i| {
        let wi = &views[i * d..(i + 1) * d];
        ((i + 1)..n)
            .filter(|&j| relations.acausal(EventId(i), EventId(j)))
            .map(|j| sq_dist(wi, &views[j * d..(j + 1) * d]))
            .sum::<f64>()
    }))
}

/// The same-time approximation of [`potential_energy`]: only pairs in the
/// same layer are summed. Needs no relation table, so it scales to large
/// layered histories. Events without a layer are skipped.
pub fn potential_energy_same_layer(ecs: &EnergeticCausalSet) -> f64 {
    let d = ecs.dimension();
    let views = ecs.views_flat(2.0);
    let mut by_layer: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for e in ecs.events() {
        if let Some(l) = ecs.layer(e) {
            by_layer.entry(l).or_default().push(e.0);
        }
    }
    by_layer
        .values()
        .map(|members| {
            blocked_sum(members.len(), |a| {
                let wi = &views[members[a] * d..(members[a] + 1) * d];
                members[a + 1..].iter().map(|&j| sq_dist(wi, &views[j * d..(j + 1) * d])).sum::<f64>()
            })
        })
        .sum()
}

/// How acausal pairs are enumerated when evaluating `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Full transitive closure; exact, `O(N^2)` memory in bits.
    Exact,
    /// Same-layer pairs only.
    SameLayer,
}

pub fn hamiltonian(ecs: &EnergeticCausalSet, params: &HamiltonianParams) -> Result<EnergyReport> {
    hamiltonian_with(ecs, params, Pairing::Exact)
}

pub fn hamiltonian_with(ecs: &EnergeticCausalSet, params: &HamiltonianParams, pairing: Pairing) -> Result<EnergyReport> {
    params.validate()?;
    let t = kinetic_energy(ecs);
    let u = match pairing {
        Pairing::Exact => potential_energy(ecs, &ecs.causal_relations()?)?,
        Pairing::SameLayer => potential_energy_same_layer(ecs),
    };
    let per_event_surprise = ecs
        .events()
        .map(|e| surprise(ecs, e).map(|s| (e, s.value)))
        .collect::<Result<_>>()?;
    Ok(EnergyReport { t, u, h: params.g * t + params.g_prime * u, per_event_surprise })
}

/// `-sum_I z_I . P^I + g T + g' U`, where `P^I` is the conservation residual
/// of interior event `I`. Boundary events carry no constraint.
pub fn effective_action(ecs: &EnergeticCausalSet, z: &EmbeddingConfig, params: &HamiltonianParams) -> Result<f64> {
    if z.d != ecs.dimension() || z.len() != ecs.len() {
        return Err(Error::Shape(format!(
            "embedding is {} x {}, causal set is {} x {}",
            z.len(),
            z.d,
            ecs.len(),
            ecs.dimension()
        )));
    }
    let report = hamiltonian(ecs, params)?;
    let mut constraint = 0.0;
    for e in ecs.events().filter(|&e| ecs.is_interior(e)) {
        constraint += dot(z.position(e), &ecs.conservation_residual(e)?.vector);
    }
    Ok(-constraint + report.h)
}
