//! The discrete acausal variety of a set of same-time samples, each
//! carrying the displacements to its immediate past.

use serde::{Deserialize, Serialize};

use crate::numerics::{blocked_sum, sq_dist};
use crate::{Error, Result};

/// Per-sample displacements `z_K - z_I` to the immediate past, `d`
/// components each.
#[derive(Debug, Clone, PartialEq)]
pub struct Pasts {
    pub d: usize,
    offsets: Vec<Vec<f64>>,
}

impl Pasts {
    pub fn new(d: usize, offsets: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if let Some((i, _)) = offsets.iter().enumerate().find(|(_, o)| o.len() % d != 0) {
            return Err(Error::Shape(format!("offsets of sample {i} do not split into rows of {d}")));
        }
        Ok(Self { d, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self, i: usize) -> &[f64] {
        &self.offsets[i]
    }
}

/// Predecessors of each one-dimensional sample: its `n` nearest neighbours
/// in rank on either side. On a periodic interval of length `period` the
/// ranks wrap and displacements take the minimal image; otherwise samples
/// without a full window get an empty past.
pub fn rank_window_pasts(samples: &[f64], n: usize, period: Option<f64>) -> Result<Pasts> {
    if n == 0 {
        return Err(Error::InvalidConfig("rank window must hold at least one neighbour".into()));
    }
    if let Some(p) = period {
        if !(p > 0.0) {
            return Err(Error::InvalidConfig(format!("period must be positive, got {p}")));
        }
    }
    let len = samples.len();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let mut offsets = vec![Vec::new(); len];
    if 2 * n >= len {
        return Pasts::new(1, offsets);
    }
    for (rank, &i) in order.iter().enumerate() {
        let full = period.is_some() || (rank >= n && rank + n < len);
        if !full {
            continue;
        }
        let out = &mut offsets[i];
        for u in 1..=n {
            for k in [rank as isize - u as isize, (rank + u) as isize] {
                let neighbour = order[k.rem_euclid(len as isize) as usize];
                let mut x = samples[neighbour] - samples[i];
                if let Some(p) = period {
                    x -= p * (x / p).round();
                }
                out.push(x);
            }
        }
    }
    Pasts::new(1, offsets)
}

/// Which past displacements enter a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shell {
    /// Every displacement.
    Unbounded,
    /// `inner <= |x| <= outer`.
    Fixed { inner: f64, outer: f64 },
    /// `a_I / 2 <= |x| <= (r + 1/2) a_I`, with `a_I` the sample's own UV
    /// cutoff.
    PerSample { a: Vec<f64>, r: f64 },
}

impl Shell {
    fn bounds(&self, i: usize) -> (f64, f64) {
        match self {
            Self::Unbounded => (0.0, f64::INFINITY),
            Self::Fixed { inner, outer } => (*inner, *outer),
            Self::PerSample { a, r } => (0.5 * a[i], (r + 0.5) * a[i]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariety {
    /// `(1 / M^2) sum_{I, J} |W_I - W_J|^2` over the `M` samples with a
    /// non-empty view, the sample form of a double integral against `rho`.
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Count-normalised inverse-square views `(1/n_I) sum_K (z_I - z_K)/|z_I - z_K|^2`.
/// `None` where no displacement survives the shell.
pub fn sample_views(pasts: &Pasts, shell: &Shell) -> Result<Vec<Option<Vec<f64>>>> {
    if let Shell::PerSample { a, .. } = shell {
        if a.len() != pasts.len() {
            return Err(Error::Shape(format!("{} cutoffs for {} samples", a.len(), pasts.len())));
        }
    }
    let d = pasts.d;
    (0..pasts.len())
        .map(|i| {
            let (inner, outer) = shell.bounds(i);
            let mut view = vec![0.0; d];
            let mut count = 0usize;
            for x in pasts.offsets(i).chunks_exact(d) {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                if r < inner || r > outer {
                    continue;
                }
                if r2 == 0.0 {
                    return Err(Error::Input(format!("sample {i} coincides with one of its predecessors")));
                }
                for (w, v) in view.iter_mut().zip(x) {
                    *w -= v / r2;
                }
                count += 1;
            }
            Ok((count > 0).then(|| view.into_iter().map(|w| w / count as f64).collect()))
        })
        .collect()
}

pub fn discrete_acausal_variety(pasts: &Pasts, shell: &Shell) -> Result<DiscreteVariety> {
    let views = sample_views(pasts, shell)?;
    let d = pasts.d;
    let flat: Vec<f64> = views.iter().flatten().flatten().copied().collect();
    let m = flat.len() / d;
    let excluded = pasts.len() - m;
    if m < 2 {
        log::warn!("no sample pairs survive the cutoff shell; the variety is zero");
        return Ok(DiscreteVariety { value: 0.0, used: m, excluded });
    }
    let sum = if d == 1 {
        blocked_sum(m, |i| lane_sum(flat[i], &flat[i + 1..]))
    } else {
        blocked_sum(m, |i| {
            let wi = &flat[i * d..(i + 1) * d];
            flat[(i + 1) * d..].chunks_exact(d).map(|wj| sq_dist(wi, wj)).sum::<f64>()
        })
    };
    let pairs = m as f64 * m as f64;
    Ok(DiscreteVariety { value: 2.0 * sum / pairs, used: m, excluded })
}

/// `sum_j (w - rest[j])^2` with eight independent accumulators so the loop
/// vectorises; the lane order is fixed, so the result is reproducible.
fn lane_sum(w: f64, rest: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = rest.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            let t = w - c[k];
            acc[k] += t * t;
        }
    }
    let mut total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for v in tail {
        total += (w - v) * (w - v);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn moment_form(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        2.0 * var
    }

    #[test]
    fn identical_pasts_contribute_nothing() {
        let pasts = Pasts::new(2, vec![vec![1.0, 0.0, 0.0, 2.0], vec![1.0, 0.0, 0.0, 2.0]]).unwrap();
        let v = discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.used, 2);
    }

    #[test]
    fn three_samples_by_hand() {
        // views: -(1/1)(x/x^2) per sample, 1-D
        let pasts = Pasts::new(1, vec![vec![1.0], vec![-0.5], vec![2.0, -4.0]]).unwrap();
        let w: [f64; 3] = [-1.0, 2.0, (-0.5 + 0.25) / 2.0];
        let by_hand = ((w[0] - w[1]).powi(2) + (w[0] - w[2]).powi(2) + (w[1] - w[2]).powi(2)) * 2.0 / 9.0;
        let v = discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap();
        assert_relative_eq!(v.value, by_hand, max_relative = 1e-15);
    }

    #[test]
    fn translation_and_relabelling_invariance() {
        let samples: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.01).collect();
        let shifted: Vec<f64> = samples.iter().map(|z| z + 12.5).collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let value = |s: &[f64]| discrete_acausal_variety(&rank_window_pasts(s, 3, None).unwrap(), &Shell::Unbounded).unwrap();
        let base = value(&samples);
        assert_relative_eq!(value(&shifted).value, base.value, max_relative = 1e-9);
        assert_relative_eq!(value(&reversed).value, base.value, max_relative = 1e-12);
        assert_eq!(base.excluded, 6);
    }

    #[test]
    fn pair_sum_matches_the_moment_identity() {
        let samples: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 2000) as f64 / 2000.0 + 1e-3 * (i as f64).cos()).collect();
        let pasts = rank_window_pasts(&samples, 2, Some(1.0)).unwrap();
        let views: Vec<f64> = sample_views(&pasts, &Shell::Unbounded).unwrap().into_iter().flatten().flatten().collect();
        let v = discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap();
        assert_relative_eq!(v.value, moment_form(&views), max_relative = 1e-10);
    }

    #[test]
    fn multi_dimensional_pair_sum_matches_a_double_loop() {
        let offsets: Vec<Vec<f64>> =
            (0..40).map(|i| vec![0.1 + (i as f64).sin(), (i as f64 * 0.3).cos(), 0.2, -0.7 * i as f64 / 40.0]).collect();
        let pasts = Pasts::new(2, offsets).unwrap();
        let views: Vec<Vec<f64>> = sample_views(&pasts, &Shell::Unbounded).unwrap().into_iter().flatten().collect();
        let mut total = 0.0;
        for a in &views {
            for b in &views {
                total += sq_dist(a, b);
            }
        }
        let v = discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap();
        assert_relative_eq!(v.value, total / (40.0 * 40.0), max_relative = 1e-13);
    }

    #[test]
    fn rank_windows() {
        let samples = [0.0, 0.3, 0.1, 0.6, 0.45];
        let pasts = rank_window_pasts(&samples, 1, None).unwrap();
        assert!(pasts.offsets(0).is_empty());
        assert!(pasts.offsets(3).is_empty());
        let o = pasts.offsets(1);
        assert_relative_eq!(o[0], -0.2, epsilon = 1e-15);
        assert_relative_eq!(o[1], 0.15, epsilon = 1e-15);

        let periodic = rank_window_pasts(&samples, 1, Some(1.0)).unwrap();
        let o = periodic.offsets(0);
        assert_relative_eq!(o[0], -0.4, epsilon = 1e-15);
        assert_relative_eq!(o[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn shells_filter_displacements() {
        let pasts = Pasts::new(1, vec![vec![0.1, -1.0, 5.0], vec![0.1, -1.0, 5.0]]).unwrap();
        let views = sample_views(&pasts, &Shell::Fixed { inner: 0.5, outer: 2.0 }).unwrap();
        assert_eq!(views[0], Some(vec![1.0]));
        let per = Shell::PerSample { a: vec![0.2, 100.0], r: 10.0 };
        let views = sample_views(&pasts, &per).unwrap();
        assert_relative_eq!(views[0].as_ref().unwrap()[0], (-10.0 + 1.0) / 2.0, epsilon = 1e-12);
        assert_eq!(views[1], None);
        let empty = discrete_acausal_variety(&pasts, &Shell::Fixed { inner: 10.0, outer: 20.0 }).unwrap();
        assert_eq!(empty.value, 0.0);
        assert_eq!(empty.excluded, 2);
    }

    #[test]
    fn coincident_samples_are_rejected() {
        let pasts = Pasts::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(discrete_acausal_variety(&pasts, &Shell::Unbounded).is_err());
    }
}
