//! Multi-objective primitives: linear utility, Pareto dominance, Pareto and
//! convex-coverage filtering, corner weights and evenly spaced weight grids.
//!
//! Dominance and utility work for any number of objectives. The hull and
//! corner-weight routines are two-objective only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;
/// Two corner weights closer than this on the first component are merged.
pub const CORNER_DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVec(pub Vec<f64>);

impl ValueVec {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value vector {v:?}")));
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| x * c).collect())
    }
}

/// A preference weight on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVec(Vec<f64>);

impl WeightVec {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Input("empty weight vector".into()));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Input(format!("weights must be finite and >= 0: {w:?}")));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!("weights must sum to 1, got {s}")));
        }
        Ok(Self(w))
    }

    /// Two-objective weight `[w1, 1 - w1]`.
    pub fn pair(w1: f64) -> Self {
        let w1 = w1.clamp(0.0, 1.0);
        Self(vec![w1, 1.0 - w1])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub value: ValueVec,
    pub policy_id: usize,
}

/// Value vectors tagged with the policy that produced them. May contain
/// dominated points until filtered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub entries: Vec<Solution>,
}

impl SolutionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values(values: impl IntoIterator<Item = Vec<f64>>) -> Self {
        Self {
            entries: values
                .into_iter()
                .enumerate()
                .map(|(policy_id, v)| Solution {
                    value: ValueVec(v),
                    policy_id,
                })
                .collect(),
        }
    }

    pub fn push(&mut self, value: ValueVec, policy_id: usize) {
        self.entries.push(Solution { value, policy_id });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.value.as_slice())
    }

    /// CSV rows `policy_id,v_0,v_1,...` with a header.
    pub fn to_csv(&self) -> String {
        let d = self.entries.first().map_or(2, |e| e.value.dim());
        let mut out = String::from("policy_id");
        for j in 0..d {
            out.push_str(&format!(",v_{j}"));
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&e.policy_id.to_string());
            for v in e.value.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut set = SolutionSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
            let mut it = rec.iter();
            let id = it
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    msg: "bad policy_id".into(),
                })?;
            let vals = it
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    row,
                    msg: e.to_string(),
                })?;
            set.push(ValueVec::new(vals)?, id);
        }
        Ok(set)
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("objective count", a.len(), b.len()));
    }
    Ok(())
}

/// Linear utility `v . w`.
pub fn utility(v: &[f64], w: &WeightVec) -> Result<f64> {
    check_dims(v, w.as_slice())?;
    Ok(dot(v, w.as_slice()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strict Pareto dominance: `a >= b` everywhere and `a > b` somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Non-dominated subset in input order. Of several equal vectors only the
/// first is kept.
pub fn pareto_filter(set: &SolutionSet) -> SolutionSet {
    let entries = &set.entries;
    let keep = entries
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            let v = e.value.as_slice();
            !entries.iter().enumerate().any(|(j, o)| {
                let u = o.value.as_slice();
                dominates(u, v) || (j < *i && u == v)
            })
        })
        .map(|(_, e)| e.clone())
        .collect();
    SolutionSet { entries: keep }
}

/// Range of `w1` in `[0,1]` where `v` is at least as good as every other
/// point, or `None` when empty.
fn optimal_interval(v: &[f64], others: &[&[f64]]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for u in others {
        // (v - u) . (w1, 1 - w1) = a * w1 + c >= 0
        let c = v[1] - u[1];
        let a = (v[0] - u[0]) - c;
        let scale = v.iter().chain(u.iter()).fold(1.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-12 * scale;
        if a.abs() <= tol {
            if c < -tol {
                return None;
            }
            continue;
        }
        let root = -c / a;
        if a > 0.0 {
            lo = lo.max(root - tol / a.abs());
        } else {
            hi = hi.min(root + tol / a.abs());
        }
        if lo > hi {
            return None;
        }
    }
    Some((lo.max(0.0), hi.min(1.0)))
}

/// Convex coverage set for two objectives: the Pareto points that maximise
/// `v . w` for at least one weight on the simplex.
pub fn ccs_prune(set: &SolutionSet) -> SolutionSet {
    let front = pareto_filter(set);
    let values: Vec<&[f64]> = front.values().collect();
    let entries = front
        .entries
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            let others: Vec<&[f64]> = values
                .iter()
                .enumerate()
                .filter(|(j, _)| j != i)
                .map(|(_, v)| *v)
                .collect();
            optimal_interval(e.value.as_slice(), &others).is_some()
        })
        .map(|(_, e)| e.clone())
        .collect();
    SolutionSet { entries }
}

/// A corner weight together with the two CCS points that tie there. The
/// simplex extrema carry no pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub weight: WeightVec,
    pub pair: Option<(ValueVec, ValueVec)>,
}

/// Simplex extrema plus the tie weight of every pair of hull-adjacent CCS
/// points, sorted by the first weight component.
pub fn corners(set: &SolutionSet) -> Vec<Corner> {
    let ccs = ccs_prune(set);
    let mut pts: Vec<&ValueVec> = ccs.entries.iter().map(|e| &e.value).collect();
    pts.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(b.0[1].total_cmp(&a.0[1])));
    let mut out = vec![
        Corner {
            weight: WeightVec::pair(0.0),
            pair: None,
        },
        Corner {
            weight: WeightVec::pair(1.0),
            pair: None,
        },
    ];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // a.w == b.w with w = (w1, 1 - w1)
        let denom = (a.0[0] - b.0[0]) + (b.0[1] - a.0[1]);
        if denom.abs() < f64::EPSILON {
            continue;
        }
        let w1 = (b.0[1] - a.0[1]) / denom;
        if !(0.0..=1.0).contains(&w1) {
            continue;
        }
        out.push(Corner {
            weight: WeightVec::pair(w1),
            pair: Some((a.clone(), b.clone())),
        });
    }
    out.sort_by(|a, b| a.weight.first().total_cmp(&b.weight.first()));
    let mut dedup: Vec<Corner> = Vec::with_capacity(out.len());
    for c in out {
        match dedup.last_mut() {
            Some(last) if (last.weight.first() - c.weight.first()).abs() <= CORNER_DEDUP_TOL => {
                if last.pair.is_none() {
                    last.pair = c.pair;
                }
            }
            _ => dedup.push(c),
        }
    }
    dedup
}

pub fn corner_weights(set: &SolutionSet) -> Vec<WeightVec> {
    corners(set).into_iter().map(|c| c.weight).collect()
}

/// `n` weights with first component `k / (n - 1)`, `k = 0..n`.
pub fn even_weights(n: usize) -> Result<Vec<WeightVec>> {
    if n < 2 {
        return Err(Error::Input(format!("even_weights needs n >= 2, got {n}")));
    }
    Ok((0..n).map(|k| WeightVec::pair(k as f64 / (n - 1) as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn utility_examples() {
        let w = WeightVec::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(utility(&[2.0, 4.0], &w).unwrap(), 3.0);
        assert_eq!(utility(&[7.0, 4.0], &WeightVec::pair(1.0)).unwrap(), 7.0);
        let w = WeightVec::new(vec![0.9, 0.1]).unwrap();
        let u = utility(&[-840.93, 1460.0], &w).unwrap();
        assert!((u - (-610.837)).abs() < 1e-9);
        assert!(utility(&[1.0], &w).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(WeightVec::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVec::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVec::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 2.0], &[0.0, 2.0]));
        assert!(!dominates(&[1.0, 0.0], &[0.0, 1.0]));
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]));
    }

    #[test]
    fn pareto_examples() {
        let s = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(pareto_filter(&s).len(), 3);
        let s = SolutionSet::from_values([vec![1.0, 1.0], vec![0.0, 0.0]]);
        let f = pareto_filter(&s);
        assert_eq!(f.len(), 1);
        assert_eq!(f.entries[0].value.0, vec![1.0, 1.0]);
        let s = SolutionSet::from_values([vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = pareto_filter(&s);
        assert_eq!(f.len(), 1);
        assert_eq!(f.entries[0].policy_id, 0);
    }

    #[test]
    fn ccs_examples() {
        let s = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.4, 0.4]]);
        let c = ccs_prune(&s);
        assert_eq!(c.len(), 2);
        assert!(c.entries.iter().all(|e| e.policy_id != 2));
        let s = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.6]]);
        assert_eq!(ccs_prune(&s).len(), 3);
        let s = SolutionSet::from_values([vec![3.0, -2.0]]);
        assert_eq!(ccs_prune(&s).len(), 1);
    }

    #[test]
    fn corner_examples() {
        let s = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ws: Vec<f64> = corner_weights(&s).iter().map(|w| w.first()).collect();
        assert_eq!(ws, vec![0.0, 0.5, 1.0]);
        let s = SolutionSet::from_values([vec![2.0, 0.0], vec![0.0, 1.0]]);
        let ws: Vec<f64> = corner_weights(&s).iter().map(|w| w.first()).collect();
        assert_eq!(ws.len(), 3);
        assert!((ws[1] - 1.0 / 3.0).abs() < 1e-12);
        let s = SolutionSet::from_values([vec![2.0, 5.0]]);
        let ws: Vec<f64> = corner_weights(&s).iter().map(|w| w.first()).collect();
        assert_eq!(ws, vec![0.0, 1.0]);
    }

    #[test]
    fn even_weight_grid() {
        let w = even_weights(2).unwrap();
        assert_eq!(w[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(w[1].as_slice(), &[1.0, 0.0]);
        assert!(even_weights(3).unwrap().iter().any(|w| w.as_slice() == [0.5, 0.5]));
        let w = even_weights(100).unwrap();
        assert_eq!(w.len(), 100);
        for p in w.windows(2) {
            assert!((p[1].first() - p[0].first() - 1.0 / 99.0).abs() < 1e-12);
        }
        assert!(even_weights(1).is_err());
    }

    #[test]
    fn solution_csv_roundtrip() {
        let s = SolutionSet::from_values([vec![-1.5, 3.0], vec![2.0, 0.25]]);
        assert_eq!(SolutionSet::from_csv(&s.to_csv()).unwrap(), s);
        assert!(SolutionSet::from_csv("policy_id,v_0,v_1\nx,1,2\n").is_err());
    }

    fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 1..40)
    }

    proptest! {
        #[test]
        fn pareto_is_idempotent_and_undominated(pts in points()) {
            let s = SolutionSet::from_values(pts);
            let f = pareto_filter(&s);
            prop_assert_eq!(pareto_filter(&f), f.clone());
            for e in &f.entries {
                prop_assert!(!s.values().any(|v| dominates(v, e.value.as_slice())));
            }
        }

        #[test]
        fn ccs_subset_of_pareto(pts in points()) {
            let s = SolutionSet::from_values(pts);
            let f = pareto_filter(&s);
            let c = ccs_prune(&s);
            for e in &c.entries {
                prop_assert!(f.entries.iter().any(|x| x.policy_id == e.policy_id));
            }
        }

        #[test]
        fn corner_ties_are_exact(pts in points()) {
            let s = SolutionSet::from_values(pts);
            for c in corners(&s) {
                if let Some((a, b)) = &c.pair {
                    let ua = utility(a.as_slice(), &c.weight).unwrap();
                    let ub = utility(b.as_slice(), &c.weight).unwrap();
                    prop_assert!((ua - ub).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn positive_scaling_preserves_structure(pts in points(), c in 0.1f64..10.0) {
            let s = SolutionSet::from_values(pts.clone());
            let scaled = SolutionSet::from_values(pts.iter().map(|v| v.iter().map(|x| x * c).collect()));
            let ids = |x: &SolutionSet| x.entries.iter().map(|e| e.policy_id).collect::<Vec<_>>();
            prop_assert_eq!(ids(&pareto_filter(&s)), ids(&pareto_filter(&scaled)));
            prop_assert_eq!(ids(&ccs_prune(&s)), ids(&ccs_prune(&scaled)));
            let a = corner_weights(&s);
            let b = corner_weights(&scaled);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.first() - y.first()).abs() < 1e-9);
            }
        }
    }
}
