//! Emergent spacetime: the stationary relation between link momenta and
//! event positions, its inverse, and transverse/longitudinal projectors.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ecs::{EnergeticCausalSet, EventId, EPS_P};
use crate::numerics::{conjugate_gradient, dot, norm};
use crate::{Error, Result};

/// Positions `z_I` for every event, `N x d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub d: usize,
    coords: Vec<f64>,
}

impl EmbeddingConfig {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || coords.len() % d != 0 {
            return Err(Error::Shape(format!("{} coordinates do not split into rows of {d}", coords.len())));
        }
        Ok(Self { d, coords })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { d, coords: vec![0.0; n * d] }
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let coords = (0..n * d).map(|k| f(k / d, k % d)).collect();
        Self { d, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn position(&self, id: EventId) -> &[f64] {
        &self.coords[id.0 * self.d..(id.0 + 1) * self.d]
    }

    pub fn position_mut(&mut self, id: EventId) -> &mut [f64] {
        &mut self.coords[id.0 * self.d..(id.0 + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    /// Writes `event,z0,..,z{d-1}` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["event".to_string()];
        header.extend((0..self.d).map(|a| format!("z{a}")));
        w.write_record(&header)?;
        for (i, row) in self.coords.chunks(self.d).enumerate() {
            let mut record = vec![i.to_string()];
            record.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let d = r.headers()?.len().saturating_sub(1);
        if d == 0 {
            return Err(Error::Input("embedding CSV needs at least one coordinate column".into()));
        }
        let mut coords = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let id: usize = record[0].trim().parse().map_err(|_| Error::Input(format!("bad event id on row {row}")))?;
            if id != row {
                return Err(Error::Input(format!("expected event {row}, found {id}")));
            }
            for field in record.iter().skip(1) {
                coords.push(field.trim().parse().map_err(|_| Error::Input(format!("bad coordinate on row {row}")))?);
            }
        }
        Self::new(d, coords)
    }
}

/// `p = t + l` relative to a reference direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSplit {
    pub transverse: Vec<f64>,
    pub longitudinal: Vec<f64>,
}

fn unit(direction: &[f64]) -> Result<Vec<f64>> {
    let n = norm(direction);
    if n < EPS_P {
        return Err(Error::DegenerateDirection { norm: n });
    }
    Ok(direction.iter().map(|v| v / n).collect())
}

/// `p p^T / |p|^2`.
pub fn longitudinal_projector(direction: &[f64]) -> Result<DMatrix<f64>> {
    let u = DVector::from_vec(unit(direction)?);
    Ok(&u * u.transpose())
}

/// `I - p p^T / |p|^2`.
pub fn transverse_projector(direction: &[f64]) -> Result<DMatrix<f64>> {
    let d = direction.len();
    Ok(DMatrix::identity(d, d) - longitudinal_projector(direction)?)
}

pub fn split_momentum(p: &[f64], direction: &[f64]) -> Result<MomentumSplit> {
    if p.len() != direction.len() {
        return Err(Error::Shape(format!("momentum has {} components, direction {}", p.len(), direction.len())));
    }
    let u = unit(direction)?;
    let along = dot(p, &u);
    let longitudinal: Vec<f64> = u.iter().map(|v| v * along).collect();
    let transverse = p.iter().zip(&longitudinal).map(|(a, b)| a - b).collect();
    Ok(MomentumSplit { transverse, longitudinal })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub g: f64,
    pub g_prime: f64,
    /// 0 keeps only the kinetic balance; 1 adds the leading transverse
    /// correction from the potential term.
    pub order: u8,
    /// Multiplier in `z_J - z_K = g c p`. Defaults to `n_pre^2`.
    pub kinetic_factor: Option<f64>,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self { g: 1.0, g_prime: 0.0, order: 0, kinetic_factor: None }
    }
}

impl StationaryConfig {
    pub fn factor(&self, n_pre: usize) -> f64 {
        self.kinetic_factor.unwrap_or((n_pre * n_pre) as f64)
    }

    fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g_prime.is_finite() {
            return Err(Error::InvalidConfig(format!("need g > 0 and finite g', got {} and {}", self.g, self.g_prime)));
        }
        if self.order > 1 {
            return Err(Error::InvalidConfig(format!("order {} is not supported, use 0 or 1", self.order)));
        }
        if let Some(c) = self.kinetic_factor {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("kinetic factor must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Replaces every link momentum by its stationary value given positions `z`.
///
/// At order 0, `p = (z_J - z_K) / (g c)`. At order 1 the transverse part
/// of the order-0 momentum is shifted by `-(g'/(g c)) T (W_J - W_K)`, with
/// `W` the `w = 2` views of the order-0 history.
pub fn stationary_momenta(
    ecs: &EnergeticCausalSet,
    z: &EmbeddingConfig,
    config: &StationaryConfig,
) -> Result<EnergeticCausalSet> {
    config.validate()?;
    check_shape(ecs, z)?;
    let scale = 1.0 / (config.g * config.factor(ecs.n_pre()));
    let order0 = ecs.map_links(|l| {
        let (a, b) = (z.position(l.source), z.position(l.target));
        b.iter().zip(a).map(|(x, y)| (x - y) * scale).collect()
    })?;
    if config.order == 0 || config.g_prime == 0.0 {
        return Ok(order0);
    }
    let d = ecs.dimension();
    let views = order0.views_flat(2.0);
    let coupling = config.g_prime * scale;
    order0.map_links(|l| {
        let wk = &views[l.source.0 * d..(l.source.0 + 1) * d];
        let wj = &views[l.target.0 * d..(l.target.0 + 1) * d];
        let dw: Vec<f64> = wj.iter().zip(wk).map(|(a, b)| a - b).collect();
        match split_momentum(&dw, &l.momentum) {
            Ok(s) => l.momentum.iter().zip(&s.transverse).map(|(p, t)| p - coupling * t).collect(),
            // no direction to be transverse to
            Err(_) => l.momentum.clone(),
        }
    })
}

/// Largest relative deviation of link momenta from `m (z_J - z_K) / dt`,
/// which is the order-0 stationary relation at `g = dt / (m n_pre^2)`.
pub fn classical_velocity_check(ecs: &EnergeticCausalSet, z: &EmbeddingConfig, dt: f64, m: f64) -> Result<f64> {
    check_shape(ecs, z)?;
    if !(dt > 0.0) || !(m > 0.0) {
        return Err(Error::InvalidConfig("dt and m must be positive".into()));
    }
    let mut worst: f64 = 0.0;
    for l in ecs.links() {
        let (a, b) = (z.position(l.source), z.position(l.target));
        let expected: Vec<f64> = b.iter().zip(a).map(|(x, y)| m * (x - y) / dt).collect();
        let diff: f64 = l.momentum.iter().zip(&expected).map(|(p, e)| (p - e) * (p - e)).sum::<f64>().sqrt();
        worst = worst.max(diff / norm(&expected).max(norm(&l.momentum)).max(EPS_P));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub g: f64,
    pub kinetic_factor: Option<f64>,
    /// Cycle residuals above `tolerance * max|dz|` are rejected.
    pub tolerance: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { g: 1.0, kinetic_factor: None, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub z: EmbeddingConfig,
    /// `|z_J - z_K - g c p|` per link, in link order.
    pub link_residuals: Vec<f64>,
    pub components: usize,
}

/// Positions from momenta by integrating `dz = g c p` along a spanning tree
/// of every connected component, then a least-squares pass over all links.
/// The first event of each component sits at the origin.
pub fn reconstruct_embedding(ecs: &EnergeticCausalSet, config: &ReconstructConfig) -> Result<Reconstruction> {
    if !(config.g > 0.0) || !(config.tolerance >= 0.0) {
        return Err(Error::InvalidConfig("need g > 0 and a non-negative tolerance".into()));
    }
    let n = ecs.len();
    let d = ecs.dimension();
    let c = config.kinetic_factor.unwrap_or((ecs.n_pre() * ecs.n_pre()) as f64);
    let step = |idx: usize| -> Vec<f64> { ecs.links()[idx].momentum.iter().map(|p| config.g * c * p).collect() };

    // undirected adjacency: (neighbour, link, sign)
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for (k, l) in ecs.links().iter().enumerate() {
        adj[l.source.0].push((l.target.0, k, 1.0));
        adj[l.target.0].push((l.source.0, k, -1.0));
    }

    let mut z = EmbeddingConfig::zeros(n, d);
    let mut tree_parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut component = vec![0usize; n];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        component[root] = components;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            for &(v, k, sign) in &adj[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                component[v] = components;
                tree_parent[v] = Some((u, k));
                let dz = step(k);
                let base = z.position(EventId(u)).to_vec();
                for (a, slot) in z.position_mut(EventId(v)).iter_mut().enumerate() {
                    *slot = base[a] + sign * dz[a];
                }
                queue.push_back(v);
            }
        }
        components += 1;
    }

    let residual_of = |z: &EmbeddingConfig, k: usize| -> f64 {
        let l = &ecs.links()[k];
        let dz = step(k);
        let (a, b) = (z.position(l.source), z.position(l.target));
        (0..d).map(|i| (b[i] - a[i] - dz[i]).powi(2)).sum::<f64>().sqrt()
    };
    let scale = (0..ecs.links().len()).map(|k| norm(&step(k))).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst = (0.0, usize::MAX);
    for k in 0..ecs.links().len() {
        let r = residual_of(&z, k);
        if r > worst.0 {
            worst = (r, k);
        }
    }
    if worst.0 > config.tolerance * scale {
        let l = &ecs.links()[worst.1];
        return Err(Error::IncompatibleMomenta {
            src: l.source,
            dst: l.target,
            residual: worst.0,
            cycle: tree_cycle(&tree_parent, l.source.0, l.target.0),
        });
    }

    if worst.0 > 0.0 {
        refine_least_squares(ecs, &mut z, &adj, &step, &component, components)?;
    }
    let link_residuals = (0..ecs.links().len()).map(|k| residual_of(&z, k)).collect();
    Ok(Reconstruction { z, link_residuals, components })
}

/// Minimises `sum_links |z_J - z_K - dz|^2` by CG on the graph Laplacian,
/// one coordinate at a time, then restores the gauge.
fn refine_least_squares(
    ecs: &EnergeticCausalSet,
    z: &mut EmbeddingConfig,
    adj: &[Vec<(usize, usize, f64)>],
    step: &dyn Fn(usize) -> Vec<f64>,
    component: &[usize],
    components: usize,
) -> Result<()> {
    let n = ecs.len();
    let d = ecs.dimension();
    let steps: Vec<Vec<f64>> = (0..ecs.links().len()).map(step).collect();
    let laplacian = |x: &[f64], out: &mut [f64]| {
        for u in 0..n {
            out[u] = adj[u].iter().map(|&(v, _, _)| x[u] - x[v]).sum();
        }
    };
    for a in 0..d {
        let mut rhs = vec![0.0; n];
        for (k, l) in ecs.links().iter().enumerate() {
            rhs[l.target.0] += steps[k][a];
            rhs[l.source.0] -= steps[k][a];
        }
        let mut x: Vec<f64> = (0..n).map(|i| z.position(EventId(i))[a]).collect();
        conjugate_gradient(laplacian, &rhs, &mut x, 1e-14, 10 * n + 100)?;
        let mut anchor = vec![None; components];
        for i in 0..n {
            let shift = *anchor[component[i]].get_or_insert(x[i]);
            z.position_mut(EventId(i))[a] = x[i] - shift;
        }
    }
    Ok(())
}

/// The closed walk formed by link `src -> dst` and the tree paths back to
/// their common ancestor.
fn tree_cycle(parent: &[Option<(usize, usize)>], src: usize, dst: usize) -> Vec<EventId> {
    let path = |mut v: usize| {
        let mut p = vec![v];
        while let Some((u, _)) = parent[v] {
            p.push(u);
            v = u;
        }
        p
    };
    let (a, b) = (path(src), path(dst));
    let on_b: std::collections::HashSet<usize> = b.iter().copied().collect();
    let meet = a.iter().position(|v| on_b.contains(v)).unwrap_or(a.len() - 1);
    let lca = a[meet];
    let mut cycle: Vec<EventId> = a[..=meet].iter().map(|&v| EventId(v)).collect();
    let back = b.iter().position(|&v| v == lca).unwrap_or(b.len() - 1);
    cycle.extend(b[..back].iter().rev().map(|&v| EventId(v)));
    cycle
}

fn check_shape(ecs: &EnergeticCausalSet, z: &EmbeddingConfig) -> Result<()> {
    if z.d != ecs.dimension() || z.len() != ecs.len() {
        return Err(Error::Shape(format!(
            "embedding is {} x {}, causal set is {} x {}",
            z.len(),
            z.d,
            ecs.len(),
            ecs.dimension()
        )));
    }
    Ok(())
}
