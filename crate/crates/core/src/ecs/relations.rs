use super::{EnergeticCausalSet, EventId};
use crate::Result;

/// Transitive closure of the link relation, one bitset row per event.
///
/// Row `i` holds the events in the causal future of `i`. Memory is
/// `N^2 / 8` bytes, so this is meant for sets up to a few times `10^4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalRelationTable {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl CausalRelationTable {
    pub(super) fn build(ecs: &EnergeticCausalSet) -> Result<Self> {
        let order = ecs.topological_order()?;
        let n = ecs.len();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for &v in order.iter().rev() {
            let mut row = vec![0u64; words];
            for &c in &ecs.nodes[v.0].children {
                row[c.0 / 64] |= 1 << (c.0 % 64);
                let child = &bits[c.0 * words..(c.0 + 1) * words];
                for (r, b) in row.iter_mut().zip(child) {
                    *r |= b;
                }
            }
            bits[v.0 * words..(v.0 + 1) * words].copy_from_slice(&row);
        }
        Ok(Self { n, words, bits })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `j` lies in the causal future of `i`.
    pub fn reaches(&self, i: EventId, j: EventId) -> bool {
        self.bits[i.0 * self.words + j.0 / 64] >> (j.0 % 64) & 1 == 1
    }

    pub fn related(&self, i: EventId, j: EventId) -> bool {
        self.reaches(i, j) || self.reaches(j, i)
    }

    /// Distinct and causally unrelated.
    pub fn acausal(&self, i: EventId, j: EventId) -> bool {
        i != j && !self.related(i, j)
    }

    /// Unordered acausal pairs `(i, j)` with `i < j`.
    pub fn acausal_pairs(&self) -> Vec<(EventId, EventId)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.acausal(EventId(i), EventId(j)) {
                    out.push((EventId(i), EventId(j)));
                }
            }
        }
        out
    }
}
