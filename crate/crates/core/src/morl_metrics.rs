//! Solution-set quality indicators: expected utility, two-objective
//! hypervolume, sparsity, and the two preference-anchored energy figures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mo_core::{dot, even_weights, pareto_filter, SolutionSet, WeightVec};

/// Reference point used when none is given: `[-1300 GBP, 0 comfort]`.
pub const DEFAULT_HV_REF: [f64; 2] = [-1300.0, 0.0];
pub const DEFAULT_EU_WEIGHTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eu: f64,
    pub hv: f64,
    /// `None` when fewer than two non-dominated points exist.
    pub sp: Option<f64>,
    pub hv_over_sp: Option<f64>,
    pub bill_at_w91: f64,
    pub comfort_at_w19: f64,
}

/// Mean over `n` evenly spaced weights of the best utility in the set.
pub fn expected_utility(set: &SolutionSet, n: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("expected utility of an empty set".into()));
    }
    let weights = even_weights(n)?;
    let total: f64 = weights
        .iter()
        .map(|w| {
            set.values()
                .map(|v| dot(v, w.as_slice()))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / n as f64)
}

/// Area dominated by the set and bounded below by `reference`.
pub fn hypervolume2d(set: &SolutionSet, reference: [f64; 2]) -> Result<f64> {
    for e in &set.entries {
        let v = e.value.as_slice();
        if v.len() != 2 {
            return Err(Error::shape("hypervolume objectives", 2, v.len()));
        }
        if v[0] < reference[0] || v[1] < reference[1] {
            return Err(Error::Domain(format!(
                "point {v:?} (policy {}) lies below the reference point {reference:?}",
                e.policy_id
            )));
        }
    }
    let mut pts: Vec<[f64; 2]> = pareto_filter(set).values().map(|v| [v[0], v[1]]).collect();
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut area = 0.0;
    let mut floor = reference[1];
    for p in pts {
        if p[1] > floor {
            area += (p[0] - reference[0]) * (p[1] - floor);
            floor = p[1];
        }
    }
    Ok(area)
}

/// Mean squared gap between consecutive sorted values, summed over
/// objectives and divided by `|S| - 1`. Computed on the Pareto-filtered set.
pub fn sparsity(set: &SolutionSet) -> Option<f64> {
    let front = pareto_filter(set);
    sparsity_of(&front)
}

/// Same formula without filtering; `set` is taken as given.
pub fn sparsity_of(set: &SolutionSet) -> Option<f64> {
    let n = set.len();
    if n < 2 {
        return None;
    }
    let d = set.entries[0].value.dim();
    let mut total = 0.0;
    for j in 0..d {
        let mut col: Vec<f64> = set.values().map(|v| v[j]).collect();
        col.sort_by(f64::total_cmp);
        total += col.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
    }
    Some(total / (n - 1) as f64)
}

/// Annual outcome of one policy, resolved from its reward log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnualOutcome {
    /// Positive bill in GBP.
    pub bill: f64,
    pub comfort: f64,
}

/// Bill of the utility-maximising entry at `[0.9, 0.1]` and comfort of the
/// one at `[0.1, 0.9]`.
pub fn anchored_values(set: &SolutionSet, outcomes: &BTreeMap<usize, AnnualOutcome>) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Input("anchored values of an empty set".into()));
    }
    let best = |w: &WeightVec| {
        let mut best = &set.entries[0];
        let mut best_u = f64::NEG_INFINITY;
        for e in &set.entries {
            let u = dot(e.value.as_slice(), w.as_slice());
            if u > best_u {
                best_u = u;
                best = e;
            }
        }
        outcomes
            .get(&best.policy_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("no reward log for policy {}", best.policy_id)))
    };
    let bill = best(&WeightVec::pair(0.9))?.bill;
    let comfort = best(&WeightVec::pair(0.1))?.comfort;
    Ok((bill, comfort))
}

pub fn report(set: &SolutionSet, outcomes: &BTreeMap<usize, AnnualOutcome>, hv_ref: [f64; 2]) -> Result<MetricReport> {
    let eu = expected_utility(set, DEFAULT_EU_WEIGHTS)?;
    let hv = hypervolume2d(set, hv_ref)?;
    let sp = sparsity(set);
    let hv_over_sp = sp.filter(|s| *s > 0.0).map(|s| hv / s);
    let (bill_at_w91, comfort_at_w19) = anchored_values(set, outcomes)?;
    Ok(MetricReport {
        eu,
        hv,
        sp,
        hv_over_sp,
        bill_at_w91,
        comfort_at_w19,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eu_examples() {
        let s = SolutionSet::from_values([vec![1.0, 1.0]]);
        for n in [2, 3, 17, 100] {
            assert!((expected_utility(&s, n).unwrap() - 1.0).abs() < 1e-12);
        }
        let s = SolutionSet::from_values([vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((expected_utility(&s, 3).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!(expected_utility(&SolutionSet::new(), 3).is_err());
    }

    #[test]
    fn hv_examples() {
        let r = DEFAULT_HV_REF;
        let s = SolutionSet::from_values([vec![-100.0, 10.0]]);
        assert_eq!(hypervolume2d(&s, r).unwrap(), 12000.0);
        let s = SolutionSet::from_values([vec![-100.0, 10.0], vec![-200.0, 10.0]]);
        assert_eq!(hypervolume2d(&s, r).unwrap(), 12000.0);
        let s = SolutionSet::from_values([vec![-1400.0, 10.0]]);
        assert!(matches!(hypervolume2d(&s, r), Err(Error::Domain(_))));
    }

    #[test]
    fn sparsity_examples() {
        let s = SolutionSet::from_values([vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(sparsity(&s), Some(2.0));
        let s = SolutionSet::from_values([vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(sparsity_of(&s), Some(0.0));
        assert_eq!(sparsity(&SolutionSet::from_values([vec![1.0, 1.0]])), None);
    }

    #[test]
    fn denser_line_front_is_less_sparse() {
        let mut last = f64::INFINITY;
        for k in 2..8 {
            let pts = (0..k).map(|i| {
                let t = i as f64 / (k - 1) as f64;
                vec![t, 1.0 - t]
            });
            let sp = sparsity(&SolutionSet::from_values(pts)).unwrap();
            assert!(sp < last);
            last = sp;
        }
    }

    #[test]
    fn anchored_selection() {
        let mut outcomes = BTreeMap::new();
        outcomes.insert(
            0,
            AnnualOutcome {
                bill: 300.0,
                comfort: 1000.0,
            },
        );
        outcomes.insert(
            1,
            AnnualOutcome {
                bill: 350.0,
                comfort: 1400.0,
            },
        );
        // 0.9 * 50 > 0.1 * 400: the cheaper policy wins at [0.9, 0.1]
        let s = SolutionSet::from_values([vec![-300.0, 1000.0], vec![-350.0, 1400.0]]);
        assert_eq!(anchored_values(&s, &outcomes).unwrap(), (300.0, 1400.0));
        // 0.9 * 50 < 0.1 * 460: the comfortable policy wins
        outcomes.insert(
            1,
            AnnualOutcome {
                bill: 350.0,
                comfort: 1460.0,
            },
        );
        let s = SolutionSet::from_values([vec![-300.0, 1000.0], vec![-350.0, 1460.0]]);
        assert_eq!(anchored_values(&s, &outcomes).unwrap(), (350.0, 1460.0));
        let single = SolutionSet::from_values([vec![-300.0, 1000.0]]);
        assert_eq!(anchored_values(&single, &outcomes).unwrap(), (300.0, 1000.0));
        let mut missing = s.clone();
        missing.entries[1].policy_id = 9;
        assert!(anchored_values(&missing, &outcomes).is_err());
    }

    fn front() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec((-1200.0f64..0.0, 0.0f64..1500.0).prop_map(|(a, b)| vec![a, b]), 1..30)
    }

    proptest! {
        #[test]
        fn eu_monotone_under_insertion(pts in front(), extra in front()) {
            let s = SolutionSet::from_values(pts.clone());
            let mut bigger = pts;
            bigger.push(extra[0].clone());
            let t = SolutionSet::from_values(bigger);
            prop_assert!(expected_utility(&t, 100).unwrap() >= expected_utility(&s, 100).unwrap() - 1e-9);
        }

        #[test]
        fn hv_ignores_dominated_points(pts in front(), shrink in 0.0f64..1.0) {
            let s = SolutionSet::from_values(pts.clone());
            let base = hypervolume2d(&s, DEFAULT_HV_REF).unwrap();
            let p = &pts[0];
            let dominated = vec![p[0] - shrink * (p[0] + 1300.0), p[1] * shrink];
            let mut more = pts.clone();
            more.push(dominated);
            let with = hypervolume2d(&SolutionSet::from_values(more), DEFAULT_HV_REF).unwrap();
            prop_assert!((with - base).abs() <= 1e-9 * base.max(1.0));
            let mut outside = pts;
            let max0 = outside.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            let max1 = outside.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
            outside.push(vec![max0 + 1.0, max1 + 1.0]);
            let grown = hypervolume2d(&SolutionSet::from_values(outside), DEFAULT_HV_REF).unwrap();
            prop_assert!(grown > base);
        }

        #[test]
        fn sparsity_is_quadratically_homogeneous(pts in front(), c in 0.1f64..5.0) {
            let s = SolutionSet::from_values(pts.clone());
            let scaled = SolutionSet::from_values(pts.iter().map(|v| vec![v[0] * c, v[1] * c]));
            if let (Some(a), Some(b)) = (sparsity(&s), sparsity(&scaled)) {
                prop_assert!((b - c * c * a).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}
