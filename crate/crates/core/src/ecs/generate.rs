use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnergeticCausalSet, EventId, EPS_P};
use crate::numerics::norm;
use crate::rng::substream;
use crate::{Error, Result};

/// Distribution of the sampled link momenta (before conservation is imposed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentumSampler {
    /// Independent normal components around `mean`. An empty `mean` means a
    /// unit drift along the first axis.
    Normal { mean: Vec<f64>, std: f64 },
    /// Independent uniform components on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl Default for MomentumSampler {
    fn default() -> Self {
        MomentumSampler::Normal { mean: Vec::new(), std: 0.25 }
    }
}

impl MomentumSampler {
    fn draw<R: Rng>(&self, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            MomentumSampler::Normal { mean, std } => {
                let normal = Normal::new(0.0, *std)
                    .map_err(|e| Error::InvalidConfig(format!("momentum std: {e}")))?;
                let centre = |a: usize| {
                    if mean.is_empty() {
                        if a == 0 { 1.0 } else { 0.0 }
                    } else {
                        mean[a]
                    }
                };
                Ok((0..d).map(|a| centre(a) + normal.sample(rng)).collect())
            }
            MomentumSampler::Uniform { lo, hi } => Ok((0..d).map(|_| rng.random_range(*lo..*hi)).collect()),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            MomentumSampler::Normal { mean, std } => {
                if !mean.is_empty() && mean.len() != d {
                    return Err(Error::InvalidConfig(format!("sampler mean has {} components, d = {d}", mean.len())));
                }
                if !(*std >= 0.0) || !std.is_finite() {
                    return Err(Error::InvalidConfig(format!("sampler std must be finite and >= 0, got {std}")));
                }
            }
            MomentumSampler::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::InvalidConfig(format!("uniform sampler needs lo < hi, got [{lo}, {hi})")));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the layered generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayeredConfig {
    pub d: usize,
    pub layers: usize,
    pub events_per_layer: usize,
    pub n_pre: usize,
    pub sampler: MomentumSampler,
    pub seed: u64,
}

impl Default for LayeredConfig {
    fn default() -> Self {
        Self { d: 1, layers: 2, events_per_layer: 1, n_pre: 1, sampler: MomentumSampler::default(), seed: 0 }
    }
}

impl LayeredConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if self.layers < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 layers, got {}", self.layers)));
        }
        if self.events_per_layer == 0 {
            return Err(Error::InvalidConfig("events_per_layer must be at least 1".into()));
        }
        if self.n_pre == 0 {
            return Err(Error::InvalidConfig("n_pre must be at least 1".into()));
        }
        if self.n_pre > self.events_per_layer {
            return Err(Error::InvalidConfig(format!(
                "n_pre = {} exceeds the {} events available in the previous layer",
                self.n_pre, self.events_per_layer
            )));
        }
        self.sampler.validate(self.d)
    }
}

/// Builds a layered history: every event after the first layer picks
/// exactly `n_pre` distinct parents from the layer before it, and every
/// event before the last layer has at least one child. Link momenta
/// are sampled and then redistributed by [`solve_conservation`].
pub fn generate_layered(config: &LayeredConfig) -> Result<EnergeticCausalSet> {
    config.validate()?;
    let mut rng = substream(config.seed, "ecs/generate");
    let epl = config.events_per_layer;
    let mut ecs = EnergeticCausalSet::new(config.d, config.n_pre)?;
    for layer in 0..config.layers {
        for _ in 0..epl {
            ecs.add_event_in_layer(layer);
        }
    }
    for layer in 1..config.layers {
        // every event gets at least one child, so no momentum is absorbed
        // before the last layer
        let mut cover: Vec<usize> = (0..epl).collect();
        cover.shuffle(&mut rng);
        for (k, &first) in cover.iter().enumerate() {
            let child = EventId(layer * epl + k);
            let mut parents = vec![first];
            parents.extend(
                sample(&mut rng, epl - 1, config.n_pre - 1).into_iter().map(|p| if p >= first { p + 1 } else { p }),
            );
            parents.sort_unstable();
            for p in parents {
                let momentum = config.sampler.draw(config.d, &mut rng)?;
                ecs.push_link(EventId((layer - 1) * epl + p), child, momentum)?;
            }
        }
    }
    solve_conservation(ecs)
}

/// Imposes momentum conservation at every interior event by the equal-split
/// rule: each of the `n_c` outgoing links carries `sum(incoming) / n_c`.
///
/// Events are visited in topological order, so the incoming momenta of an
/// event are final by the time it is processed. Outgoing links of parentless
/// events keep their sampled values.
pub fn solve_conservation(mut ecs: EnergeticCausalSet) -> Result<EnergeticCausalSet> {
    let order = ecs.topological_order()?;
    let d = ecs.dimension();
    for id in order {
        if !ecs.is_interior(id) {
            continue;
        }
        let mut total = vec![0.0; d];
        for link in ecs.incoming_links(id)? {
            for (t, p) in total.iter_mut().zip(&link.momentum) {
                *t += p;
            }
        }
        if norm(&total) < EPS_P {
            return Err(Error::DegenerateEvent(id));
        }
        let outgoing = ecs.outgoing_indices(id).to_vec();
        let share: Vec<f64> = total.iter().map(|t| t / outgoing.len() as f64).collect();
        for idx in outgoing {
            ecs.set_link_momentum(idx, share.clone());
        }
    }
    Ok(ecs)
}
