use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mo_core::{corners, dot, SolutionSet, WeightVec, CORNER_DEDUP_TOL};

/// Weights visited during training. Always holds the simplex extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSupport {
    weights: Vec<WeightVec>,
}

impl Default for WeightSupport {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightSupport {
    pub fn new() -> Self {
        Self {
            weights: vec![WeightVec::pair(1.0), WeightVec::pair(0.0)],
        }
    }

    pub fn from_weights(ws: impl IntoIterator<Item = WeightVec>) -> Self {
        let mut s = Self::new();
        for w in ws {
            s.insert(w);
        }
        s
    }

    pub fn weights(&self) -> &[WeightVec] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, w: &WeightVec) -> bool {
        self.weights
            .iter()
            .any(|v| (v.first() - w.first()).abs() <= CORNER_DEDUP_TOL)
    }

    /// Adds `w` unless an equal weight is present; returns whether it was new.
    pub fn insert(&mut self, w: WeightVec) -> bool {
        if self.contains(&w) {
            return false;
        }
        self.weights.push(w);
        true
    }
}

/// Next training weight from the corners of the current front.
///
/// `improvement(w)` is the optimistic gain estimate at `w` (upper bound minus
/// the best utility the front already reaches). Untrained simplex extrema come
/// first, then untrained corners by largest gain, then trained corners with a
/// positive gain. Among equals the lowest first component wins. When every
/// corner has been trained on and none promises a gain, a trained corner is
/// drawn uniformly at random.
pub fn select_next_weight<R: Rng + ?Sized>(
    front: &SolutionSet,
    visited: &[WeightVec],
    mut improvement: impl FnMut(&WeightVec) -> f64,
    rng: &mut R,
) -> WeightVec {
    let seen = |w: &WeightVec| {
        visited
            .iter()
            .any(|v| (v.first() - w.first()).abs() <= CORNER_DEDUP_TOL)
    };
    let cands = corners(front);
    for c in &cands {
        if c.pair.is_none() && !seen(&c.weight) {
            return c.weight.clone();
        }
    }
    let scored: Vec<(WeightVec, f64, bool)> = cands
        .into_iter()
        .map(|c| {
            let gain = improvement(&c.weight);
            let v = seen(&c.weight);
            (c.weight, gain, v)
        })
        .collect();
    let pick = |pool: Vec<&(WeightVec, f64, bool)>| -> Option<WeightVec> {
        let mut best: Option<&(WeightVec, f64, bool)> = None;
        for c in pool {
            match best {
                Some(b) if c.1 <= b.1 => {}
                _ => best = Some(c),
            }
        }
        best.map(|b| b.0.clone())
    };
    if let Some(w) = pick(scored.iter().filter(|c| !c.2).collect()) {
        return w;
    }
    if let Some(w) = pick(scored.iter().filter(|c| c.1 > 0.0).collect()) {
        return w;
    }
    let idx = rng.random_range(0..scored.len());
    scored[idx].0.clone()
}

/// Upper bound on the utility at `w` given a per-weight TD bound: the best
/// utility the front reaches plus that bound.
pub fn optimistic_upper_bound(front: &SolutionSet, w: &WeightVec, td_bound: f64) -> f64 {
    let best = front
        .values()
        .map(|v| dot(v, w.as_slice()))
        .fold(f64::NEG_INFINITY, f64::max);
    best + td_bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_start_returns_extremum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let front = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = select_next_weight(&front, &[], |w| if w.first() == 0.5 { 9.0 } else { 0.0 }, &mut rng);
        assert_eq!(w.first(), 0.0);
        let w = select_next_weight(&front, &[WeightVec::pair(0.0)], |_| 0.0, &mut rng);
        assert_eq!(w.first(), 1.0);
    }

    #[test]
    fn unvisited_tie_corner_next() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let front = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let extrema = WeightSupport::new();
        let w = select_next_weight(&front, extrema.weights(), |_| 0.0, &mut rng);
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn largest_gain_among_visited() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let front = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let support = WeightSupport::from_weights([WeightVec::pair(0.5)]);
        let w = select_next_weight(
            &front,
            support.weights(),
            |w| if w.first() == 1.0 { 2.0 } else { 0.1 },
            &mut rng,
        );
        assert_eq!(w.first(), 1.0);
    }

    #[test]
    fn refinement_mode_draws_visited_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let front = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let support = WeightSupport::from_weights([WeightVec::pair(0.5)]);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..60 {
            let w = select_next_weight(&front, support.weights(), |_| 0.0, &mut rng);
            assert!(support.contains(&w));
            seen.insert((w.first() * 10.0) as i64);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn support_dedups() {
        let mut s = WeightSupport::new();
        assert_eq!(s.len(), 2);
        assert!(!s.insert(WeightVec::pair(1.0)));
        assert!(s.insert(WeightVec::pair(0.25)));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn upper_bound_adds_td() {
        let front = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ub = optimistic_upper_bound(&front, &WeightVec::pair(0.5), 0.2);
        assert!((ub - 0.7).abs() < 1e-12);
    }
}
