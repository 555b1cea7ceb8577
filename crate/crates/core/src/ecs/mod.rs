//! Energetic causal sets: events joined by directed links that carry
//! momentum transfers, with the views, differences and varieties built on
//! top of them.
//!
//! Momentum space is flat, so momenta are plain `d`-component vectors and
//! the metric is the identity. Only spatial components are stored; the
//! non-relativistic limit is taken from the start.

mod generate;
mod io;
mod relations;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{blocked_sum, norm, sq_dist};
use crate::{Error, Result};

pub use generate::{generate_layered, solve_conservation, LayeredConfig, MomentumSampler};
pub use relations::CausalRelationTable;

/// Links whose momentum norm falls below this are excluded from weighted
/// (`w > 0`) views and flagged degenerate.
pub const EPS_P: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub usize);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalLink {
    /// The parent event.
    pub source: EventId,
    /// The child event.
    pub target: EventId,
    pub momentum: Vec<f64>,
    /// Set when `|momentum| < EPS_P`.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default)]
struct Node {
    parents: Vec<EventId>,
    children: Vec<EventId>,
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
    layer: Option<usize>,
}

/// A fixed history: an acyclic set of events with momentum-carrying links.
#[derive(Debug, Clone)]
pub struct EnergeticCausalSet {
    d: usize,
    n_pre: usize,
    nodes: Vec<Node>,
    links: Vec<CausalLink>,
    link_index: HashMap<(usize, usize), usize>,
}

/// The weighted sum of incoming momenta at one event.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub event: EventId,
    pub weight: f64,
    pub vector: Vec<f64>,
}

/// Net momentum flowing into an event, `sum(in) - sum(out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub vector: Vec<f64>,
    /// The event has no parents or no children, so conservation is not
    /// required of it.
    pub boundary: bool,
}

impl EnergeticCausalSet {
    pub fn new(d: usize, n_pre: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if n_pre == 0 {
            return Err(Error::InvalidConfig("n_pre must be at least 1".into()));
        }
        Ok(Self { d, n_pre, nodes: Vec::new(), links: Vec::new(), link_index: HashMap::new() })
    }

    pub fn add_event(&mut self) -> EventId {
        self.nodes.push(Node::default());
        EventId(self.nodes.len() - 1)
    }

    pub fn add_event_in_layer(&mut self, layer: usize) -> EventId {
        let id = self.add_event();
        self.nodes[id.0].layer = Some(layer);
        id
    }

    /// Adds the link `source -> target`, rejecting anything that would
    /// break acyclicity, the predecessor bound or the dimension.
    pub fn add_link(&mut self, source: EventId, target: EventId, momentum: Vec<f64>) -> Result<usize> {
        self.check_event(source)?;
        self.check_event(target)?;
        if source == target {
            return Err(Error::MalformedHistory(format!("self-link at {source}")));
        }
        if self.reaches(target, source) {
            return Err(Error::MalformedHistory(format!("link {source} -> {target} closes a cycle")));
        }
        self.push_link(source, target, momentum)
    }

    /// `add_link` without the reachability search; callers guarantee the
    /// link respects a known topological order.
    pub(crate) fn push_link(&mut self, source: EventId, target: EventId, momentum: Vec<f64>) -> Result<usize> {
        if momentum.len() != self.d {
            return Err(Error::Shape(format!("momentum has {} components, expected {}", momentum.len(), self.d)));
        }
        if momentum.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite momentum on {source} -> {target}")));
        }
        if self.link_index.contains_key(&(source.0, target.0)) {
            return Err(Error::MalformedHistory(format!("duplicate link {source} -> {target}")));
        }
        if self.nodes[target.0].parents.len() >= self.n_pre {
            return Err(Error::MalformedHistory(format!(
                "{target} would exceed n_pre = {} predecessors",
                self.n_pre
            )));
        }
        let idx = self.links.len();
        let degenerate = norm(&momentum) < EPS_P;
        self.links.push(CausalLink { source, target, momentum, degenerate });
        self.link_index.insert((source.0, target.0), idx);
        self.nodes[source.0].children.push(target);
        self.nodes[source.0].outgoing.push(idx);
        self.nodes[target.0].parents.push(source);
        self.nodes[target.0].incoming.push(idx);
        Ok(idx)
    }

    pub(crate) fn set_link_momentum(&mut self, idx: usize, momentum: Vec<f64>) {
        let link = &mut self.links[idx];
        link.degenerate = norm(&momentum) < EPS_P;
        link.momentum = momentum;
    }

    fn reaches(&self, from: EventId, to: EventId) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            for &c in &self.nodes[v.0].children {
                if !seen[c.0] {
                    seen[c.0] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn n_pre(&self) -> usize {
        self.n_pre
    }

    /// Largest number of children of any event.
    pub fn n_c(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn events(&self) -> impl ExactSizeIterator<Item = EventId> {
        (0..self.nodes.len()).map(EventId)
    }

    pub fn links(&self) -> &[CausalLink] {
        &self.links
    }

    pub fn link(&self, source: EventId, target: EventId) -> Result<&CausalLink> {
        self.link_index
            .get(&(source.0, target.0))
            .map(|&i| &self.links[i])
            .ok_or(Error::MissingLink { src: source, dst: target })
    }

    pub fn link_index(&self, source: EventId, target: EventId) -> Option<usize> {
        self.link_index.get(&(source.0, target.0)).copied()
    }

    pub fn parents(&self, id: EventId) -> Result<&[EventId]> {
        self.check_event(id)?;
        Ok(&self.nodes[id.0].parents)
    }

    pub fn children(&self, id: EventId) -> Result<&[EventId]> {
        self.check_event(id)?;
        Ok(&self.nodes[id.0].children)
    }

    pub fn incoming_links(&self, id: EventId) -> Result<impl Iterator<Item = &CausalLink>> {
        self.check_event(id)?;
        Ok(self.nodes[id.0].incoming.iter().map(|&i| &self.links[i]))
    }

    pub fn outgoing_links(&self, id: EventId) -> Result<impl Iterator<Item = &CausalLink>> {
        self.check_event(id)?;
        Ok(self.nodes[id.0].outgoing.iter().map(|&i| &self.links[i]))
    }

    pub(crate) fn outgoing_indices(&self, id: EventId) -> &[usize] {
        &self.nodes[id.0].outgoing
    }

    pub fn layer(&self, id: EventId) -> Option<usize> {
        self.nodes.get(id.0).and_then(|n| n.layer)
    }

    pub fn is_interior(&self, id: EventId) -> bool {
        let n = &self.nodes[id.0];
        !n.parents.is_empty() && !n.children.is_empty()
    }

    fn check_event(&self, id: EventId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownEvent(id))
        }
    }

    /// Kahn's algorithm; fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<EventId>> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.nodes.iter().map(|v| v.parents.len()).collect();
        let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(EventId(v));
            for c in &self.nodes[v].children {
                indegree[c.0] -= 1;
                if indegree[c.0] == 0 {
                    queue.push_back(c.0);
                }
            }
        }
        if order.len() != n {
            return Err(Error::MalformedHistory(format!("{} events lie on cycles", n - order.len())));
        }
        Ok(order)
    }

    pub fn conservation_residual(&self, id: EventId) -> Result<Residual> {
        self.check_event(id)?;
        let node = &self.nodes[id.0];
        let mut vector = vec![0.0; self.d];
        for &i in &node.incoming {
            for (r, p) in vector.iter_mut().zip(&self.links[i].momentum) {
                *r += p;
            }
        }
        for &i in &node.outgoing {
            for (r, p) in vector.iter_mut().zip(&self.links[i].momentum) {
                *r -= p;
            }
        }
        let boundary = node.parents.is_empty() || node.children.is_empty();
        Ok(Residual { vector, boundary })
    }

    /// Largest residual norm over interior events (0 when there are none).
    pub fn max_interior_residual(&self) -> f64 {
        self.events()
            .filter(|&e| self.is_interior(e))
            .map(|e| norm(&self.conservation_residual(e).expect("event in range").vector))
            .fold(0.0, f64::max)
    }

    pub fn view(&self, id: EventId, w: f64) -> Result<View> {
        self.check_event(id)?;
        let mut vector = vec![0.0; self.d];
        self.accumulate_view(id, w, &mut vector);
        Ok(View { event: id, weight: w, vector })
    }

    fn accumulate_view(&self, id: EventId, w: f64, out: &mut [f64]) {
        for &i in &self.nodes[id.0].incoming {
            let p = &self.links[i].momentum;
            let scale = if w == 0.0 {
                1.0
            } else {
                let n = norm(p);
                if n < EPS_P {
                    continue;
                }
                n.powf(-w)
            };
            for (o, v) in out.iter_mut().zip(p) {
                *o += v * scale;
            }
        }
    }

    /// All views at weight `w`, flattened `N x d` row-major.
    pub fn views_flat(&self, w: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len() * self.d];
        for (i, row) in out.chunks_mut(self.d).enumerate() {
            self.accumulate_view(EventId(i), w, row);
        }
        out
    }

    /// Squared distance between the views at `i` and `j`.
    pub fn difference(&self, i: EventId, j: EventId, w: f64) -> Result<f64> {
        let a = self.view(i, w)?;
        let b = self.view(j, w)?;
        Ok(sq_dist(&a.vector, &b.vector))
    }

    /// Mean difference over unordered pairs: `2/(N(N-1)) * sum_{I<J} D(I,J)`.
    pub fn total_variety(&self, w: f64) -> Result<f64> {
        let n = self.nodes.len();
        if n < 2 {
            return Err(Error::UndefinedVariety(n));
        }
        let views = self.views_flat(w);
        let d = self.d;
        let sum = blocked_sum(n, |i| {
            let wi = &views[i * d..(i + 1) * d];
            ((i + 1)..n).map(|j| sq_dist(wi, &views[j * d..(j + 1) * d])).sum::<f64>()
        });
        Ok(2.0 * sum / (n as f64 * (n as f64 - 1.0)))
    }

    pub fn causal_relations(&self) -> Result<CausalRelationTable> {
        CausalRelationTable::build(self)
    }

    /// `|p(L->I) - (p(L->J) + p(J->I))|` for a triangle of links.
    pub fn path_additivity_check(&self, l: EventId, j: EventId, i: EventId) -> Result<f64> {
        let direct = &self.link(l, i)?.momentum;
        let first = &self.link(l, j)?.momentum;
        let second = &self.link(j, i)?.momentum;
        Ok(direct
            .iter()
            .zip(first.iter().zip(second))
            .map(|(a, (b, c))| (a - b - c).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Disjoint union; events of `other` are renumbered after ours.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::Shape(format!("dimensions {} and {} differ", self.d, other.d)));
        }
        let mut out = Self::new(self.d, self.n_pre.max(other.n_pre))?;
        for part in [self, other] {
            let offset = out.len();
            for node in &part.nodes {
                let id = out.add_event();
                out.nodes[id.0].layer = node.layer;
            }
            for link in &part.links {
                out.push_link(
                    EventId(link.source.0 + offset),
                    EventId(link.target.0 + offset),
                    link.momentum.clone(),
                )?;
            }
        }
        Ok(out)
    }

    /// Applies `f` to every link momentum (e.g. a global rotation).
    pub fn map_momenta<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        self.map_links(|l| f(&l.momentum))
    }

    /// A copy with every link momentum replaced by `f(link)`.
    pub fn map_links<F: FnMut(&CausalLink) -> Vec<f64>>(&self, mut f: F) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..out.links.len() {
            let p = f(&self.links[i]);
            if p.len() != self.d {
                return Err(Error::Shape("momentum map changed the dimension".into()));
            }
            out.set_link_momentum(i, p);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn star(incoming: &[&[f64]], outgoing: &[&[f64]]) -> (EnergeticCausalSet, EventId) {
        let d = incoming.first().or(outgoing.first()).map_or(1, |p| p.len());
        let mut ecs = EnergeticCausalSet::new(d, incoming.len().max(1)).unwrap();
        let parents: Vec<_> = incoming.iter().map(|_| ecs.add_event()).collect();
        let center = ecs.add_event();
        for (p, m) in parents.iter().zip(incoming) {
            ecs.add_link(*p, center, m.to_vec()).unwrap();
        }
        for m in outgoing {
            let c = ecs.add_event();
            ecs.add_link(center, c, m.to_vec()).unwrap();
        }
        (ecs, center)
    }

    #[test]
    fn residual_examples() {
        let (ecs, c) = star(&[&[2.0]], &[&[2.0]]);
        assert_eq!(ecs.conservation_residual(c).unwrap().vector, vec![0.0]);

        let (ecs, c) = star(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 1.0]]);
        let r = ecs.conservation_residual(c).unwrap();
        assert_eq!(r.vector, vec![0.0, 0.0]);
        assert!(!r.boundary);

        let (ecs, c) = star(&[&[1.0, 0.0]], &[&[0.0, 1.0]]);
        assert_eq!(ecs.conservation_residual(c).unwrap().vector, vec![1.0, -1.0]);

        assert!(ecs.conservation_residual(EventId(0)).unwrap().boundary);
        assert!(matches!(ecs.conservation_residual(EventId(99)), Err(Error::UnknownEvent(_))));
    }

    #[test]
    fn view_examples() {
        let (ecs, c) = star(&[&[1.0, 0.0], &[0.0, 1.0]], &[]);
        assert_eq!(ecs.view(c, 0.0).unwrap().vector, vec![1.0, 1.0]);

        let (ecs, c) = star(&[&[2.0, 0.0]], &[]);
        assert_eq!(ecs.view(c, 2.0).unwrap().vector, vec![0.5, 0.0]);

        let (ecs, c) = star(&[&[1.0, 0.0], &[-1.0, 0.0]], &[]);
        assert_eq!(ecs.view(c, 0.0).unwrap().vector, vec![0.0, 0.0]);
        // parentless
        assert_eq!(ecs.view(EventId(0), 2.0).unwrap().vector, vec![0.0, 0.0]);
    }

    #[test]
    fn weighted_views_skip_zero_momenta() {
        let (ecs, c) = star(&[&[0.0, 0.0], &[2.0, 0.0]], &[]);
        assert!(ecs.links()[0].degenerate);
        assert_eq!(ecs.view(c, 2.0).unwrap().vector, vec![0.5, 0.0]);
        assert_eq!(ecs.view(c, 0.0).unwrap().vector, vec![2.0, 0.0]);
    }

    #[test]
    fn difference_examples() {
        let mut ecs = EnergeticCausalSet::new(2, 1).unwrap();
        let (a, b, i, j) = (ecs.add_event(), ecs.add_event(), ecs.add_event(), ecs.add_event());
        ecs.add_link(a, i, vec![1.0, 0.0]).unwrap();
        ecs.add_link(b, j, vec![0.0, 1.0]).unwrap();
        assert_eq!(ecs.difference(i, j, 0.0).unwrap(), 2.0);
        assert_eq!(ecs.difference(j, i, 0.0).unwrap(), 2.0);
        assert_eq!(ecs.difference(i, i, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn total_variety_examples() {
        let mut ecs = EnergeticCausalSet::new(2, 1).unwrap();
        let (i, j) = (ecs.add_event(), ecs.add_event());
        assert_eq!(ecs.total_variety(0.0).unwrap(), 0.0);
        let (a, b) = (ecs.add_event(), ecs.add_event());
        ecs.add_link(a, i, vec![1.0, 0.0]).unwrap();
        ecs.add_link(b, j, vec![0.0, 1.0]).unwrap();
        // four events: views (1,0), (0,1), 0, 0 -> pair sum 2 + 1 + 1 + 1 + 1 = 6
        assert_relative_eq!(ecs.total_variety(0.0).unwrap(), 2.0 * 6.0 / 12.0);

        let mut two = EnergeticCausalSet::new(2, 1).unwrap();
        let (x, y) = (two.add_event(), two.add_event());
        two.add_link(x, y, vec![1.0, 1.0]).unwrap();
        // views 0 and (1,1): D = 2, one unordered pair
        assert_eq!(two.total_variety(0.0).unwrap(), 2.0);

        let mut one = EnergeticCausalSet::new(1, 1).unwrap();
        one.add_event();
        assert!(matches!(one.total_variety(0.0), Err(Error::UndefinedVariety(1))));
    }

    #[test]
    fn path_additivity_examples() {
        let mut ecs = EnergeticCausalSet::new(2, 2).unwrap();
        let (l, j, i) = (ecs.add_event(), ecs.add_event(), ecs.add_event());
        ecs.add_link(l, j, vec![1.0, 0.0]).unwrap();
        ecs.add_link(j, i, vec![0.0, 1.0]).unwrap();
        ecs.add_link(l, i, vec![1.0, 1.0]).unwrap();
        assert_eq!(ecs.path_additivity_check(l, j, i).unwrap(), 0.0);

        let mut bad = EnergeticCausalSet::new(2, 2).unwrap();
        let (l, j, i) = (bad.add_event(), bad.add_event(), bad.add_event());
        bad.add_link(l, j, vec![1.0, 0.0]).unwrap();
        bad.add_link(j, i, vec![0.0, 1.0]).unwrap();
        bad.add_link(l, i, vec![2.0, 0.0]).unwrap();
        assert_relative_eq!(bad.path_additivity_check(l, j, i).unwrap(), 2f64.sqrt());
        assert!(matches!(bad.path_additivity_check(i, j, l), Err(Error::MissingLink { .. })));
    }

    #[test]
    fn builder_rejects_cycles_and_excess_parents() {
        let mut ecs = EnergeticCausalSet::new(1, 1).unwrap();
        let (a, b, c) = (ecs.add_event(), ecs.add_event(), ecs.add_event());
        ecs.add_link(a, b, vec![1.0]).unwrap();
        ecs.add_link(b, c, vec![1.0]).unwrap();
        assert!(matches!(ecs.add_link(c, a, vec![1.0]), Err(Error::MalformedHistory(_))));
        assert!(matches!(ecs.add_link(a, c, vec![1.0]), Err(Error::MalformedHistory(_))));
        assert!(matches!(ecs.add_link(a, a, vec![1.0]), Err(Error::MalformedHistory(_))));
        assert!(matches!(ecs.add_link(a, b, vec![1.0, 2.0]), Err(Error::Shape(_))));
        assert_eq!(ecs.topological_order().unwrap(), vec![a, b, c]);
    }
}
