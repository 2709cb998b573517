use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Index of the outside option in utility and priority matrices.
pub const OUTSIDE_OPTION: usize = 0;

/// One school-choice market with a global over-enrollment budget.
///
/// Utility and priority matrices have one row per student and `m + 1`
/// columns; column 0 is the outside option and real school `c` (1-based)
/// has capacity `capacities[c - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketInstance {
    pub n_students: usize,
    pub n_schools: usize,
    pub utilities: Matrix,
    pub priorities: Matrix,
    pub capacities: Vec<u32>,
    pub slack: f64,
    pub seed: u64,
}

impl MarketInstance {
    /// Checks the structural invariants of an instance.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_students, self.n_schools);
        if n == 0 || m == 0 {
            return Err(Error::Config(
                "instance needs at least one student and one school".into(),
            ));
        }
        if self.utilities.shape() != (n, m + 1) || self.priorities.shape() != (n, m + 1) {
            return Err(Error::shape(
                "instance",
                "utility/priority matrices must be n × (m+1)",
            ));
        }
        if self.capacities.len() != m {
            return Err(Error::shape("instance", "one capacity per real school"));
        }
        if !(self.slack >= 0.0) || !self.slack.is_finite() {
            return Err(Error::Config(format!(
                "slack must be non-negative, got {}",
                self.slack
            )));
        }
        let u0 = self.priorities.get(0, OUTSIDE_OPTION);
        for s in 0..n {
            if self.utilities.get(s, OUTSIDE_OPTION) != 0.0 {
                return Err(Error::Config(format!(
                    "student {s}: outside option utility must be 0"
                )));
            }
            if self.priorities.get(s, OUTSIDE_OPTION) != u0 {
                return Err(Error::Config(
                    "outside option priorities must be identical".into(),
                ));
            }
            for c in 1..=m {
                let v = self.utilities.get(s, c);
                if !(v < 0.0 || (v > 0.0 && v <= 1.0)) {
                    return Err(Error::Config(format!(
                        "utility v[{s}][{c}] = {v} is neither acceptable (0,1] nor negative"
                    )));
                }
                let u = self.priorities.get(s, c);
                if !(0.0..=1.0).contains(&u) {
                    return Err(Error::Config(format!(
                        "priority u[{s}][{c}] = {u} outside [0,1]"
                    )));
                }
            }
        }
        for c in 1..=m {
            let mut col = self.priorities.column(c);
            col.sort_by(f64::total_cmp);
            if col.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!(
                    "school {c}: priorities are not strict"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn utility(&self, s: usize, c: usize) -> f64 {
        self.utilities.get(s, c)
    }

    #[inline]
    pub fn priority(&self, s: usize, c: usize) -> f64 {
        self.priorities.get(s, c)
    }

    /// Capacity of real school `c` (1-based).
    #[inline]
    pub fn capacity(&self, c: usize) -> u32 {
        self.capacities[c - 1]
    }

    #[inline]
    pub fn is_acceptable(&self, s: usize, c: usize) -> bool {
        c != OUTSIDE_OPTION && self.utilities.get(s, c) > 0.0
    }

    /// Acceptable real schools of `s`, best first. Ties go to the lower
    /// school index.
    pub fn preference_order(&self, s: usize) -> Vec<usize> {
        preference_order(self.utilities.row(s))
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacities.iter().map(|&q| q as u64).sum()
    }

    /// Copy of the instance with row `s` of the utility matrix replaced.
    pub fn with_report(&self, s: usize, report: &[f64]) -> Result<MarketInstance> {
        if report.len() != self.n_schools + 1 {
            return Err(Error::shape(
                "with_report",
                "report must cover the outside option and every school",
            ));
        }
        let mut out = self.clone();
        out.utilities.row_mut(s).copy_from_slice(report);
        Ok(out)
    }

    /// The two-student, two-school market with zero capacities and a budget
    /// of one extra seat, where preferences and priorities are perfectly
    /// misaligned: no non-empty deterministic matching is both fair and
    /// non-wasteful.
    pub fn misaligned_pair() -> MarketInstance {
        // s1 prefers c2 over c1, s2 prefers c1 over c2.
        let utilities =
            Matrix::from_rows(&[vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.5]]).expect("2x3");
        // c1 ranks s1 first, c2 ranks s2 first.
        let priorities =
            Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).expect("2x3");
        MarketInstance {
            n_students: 2,
            n_schools: 2,
            utilities,
            priorities,
            capacities: vec![0, 0],
            slack: 1.0,
            seed: 0,
        }
    }
}

/// Acceptable real schools for a utility row (column 0 is the outside
/// option), best first, ties by ascending index.
pub fn preference_order(utility_row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (1..utility_row.len())
        .filter(|&c| utility_row[c] > 0.0)
        .collect();
    order.sort_by(|&a, &b| utility_row[b].total_cmp(&utility_row[a]).then(a.cmp(&b)));
    order
}

/// A deterministic matching: `assignment[s]` is a school index in `0..=m`,
/// with 0 the outside option.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteMatching {
    pub assignment: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility {
    /// `Σ_c max{|μ(c)| − q_c, 0}` over real schools.
    pub overflow: u64,
    pub feasible: bool,
}

impl DiscreteMatching {
    pub fn unassigned(n: usize) -> Self {
        DiscreteMatching {
            assignment: vec![OUTSIDE_OPTION; n],
        }
    }

    pub fn is_empty_matching(&self) -> bool {
        self.assignment.iter().all(|&c| c == OUTSIDE_OPTION)
    }

    /// Number of students at every real school (index `c - 1`).
    pub fn school_counts(&self, n_schools: usize) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; n_schools];
        for (s, &c) in self.assignment.iter().enumerate() {
            if c > n_schools {
                return Err(Error::Matching(format!(
                    "student {s} assigned to school {c} of {n_schools}"
                )));
            }
            if c != OUTSIDE_OPTION {
                counts[c - 1] += 1;
            }
        }
        Ok(counts)
    }
}

/// Aggregate over-enrollment of `matching` and whether it fits the slack.
pub fn check_feasible(matching: &DiscreteMatching, inst: &MarketInstance) -> Result<Feasibility> {
    if matching.assignment.len() != inst.n_students {
        return Err(Error::Matching(
            "one assignment per student required".into(),
        ));
    }
    let counts = matching.school_counts(inst.n_schools)?;
    let overflow = overflow_of_counts(&counts, &inst.capacities);
    Ok(Feasibility {
        overflow,
        feasible: overflow as f64 <= inst.slack,
    })
}

pub(crate) fn overflow_of_counts(counts: &[u64], capacities: &[u32]) -> u64 {
    counts
        .iter()
        .zip(capacities)
        .map(|(&n, &q)| n.saturating_sub(q as u64))
        .sum()
}

/// Pairs `(s, c)` where `s` strictly prefers `c` to their assignment and a
/// student with strictly lower priority at `c` holds a seat there.
pub fn fairness_violations(
    matching: &DiscreteMatching,
    inst: &MarketInstance,
) -> Vec<(usize, usize)> {
    let mu = &matching.assignment;
    let mut out = Vec::new();
    for s in 0..inst.n_students {
        let current = inst.utility(s, mu[s]);
        for c in 0..=inst.n_schools {
            if inst.utility(s, c) <= current {
                continue;
            }
            let displaces = (0..inst.n_students)
                .any(|t| t != s && mu[t] == c && inst.priority(t, c) < inst.priority(s, c));
            if displaces {
                out.push((s, c));
            }
        }
    }
    out
}

/// Pairs `(s, c)` where `s` strictly prefers `c` and moving `s` there alone
/// keeps the matching feasible.
pub fn waste_violations(matching: &DiscreteMatching, inst: &MarketInstance) -> Vec<(usize, usize)> {
    let mu = &matching.assignment;
    let counts = matching
        .school_counts(inst.n_schools)
        .expect("matching indices validated by caller");
    let mut out = Vec::new();
    for s in 0..inst.n_students {
        let current = inst.utility(s, mu[s]);
        for c in 0..=inst.n_schools {
            if c == mu[s] || inst.utility(s, c) <= current {
                continue;
            }
            let mut moved = counts.clone();
            if mu[s] != OUTSIDE_OPTION {
                moved[mu[s] - 1] -= 1;
            }
            if c != OUTSIDE_OPTION {
                moved[c - 1] += 1;
            }
            if overflow_of_counts(&moved, &inst.capacities) as f64 <= inst.slack {
                out.push((s, c));
            }
        }
    }
    out
}

/// Largest number of matchings [`enumerate_matchings`] will produce.
pub const MAX_ENUMERATION: u64 = 10_000_000;

/// Every assignment of students to `{c0, c1, …, cm}`, each exactly once.
pub fn enumerate_matchings(inst: &MarketInstance) -> Result<MatchingEnumerator> {
    let base = inst.n_schools as u64 + 1;
    let total = (0..inst.n_students).try_fold(1u64, |acc, _| {
        acc.checked_mul(base).filter(|&t| t <= MAX_ENUMERATION)
    });
    match total {
        Some(total) => Ok(MatchingEnumerator {
            base: inst.n_schools + 1,
            current: Some(vec![0; inst.n_students]),
            remaining: total,
        }),
        None => Err(Error::TooLarge(format!(
            "{}^{} matchings exceed {MAX_ENUMERATION}",
            base, inst.n_students
        ))),
    }
}

pub struct MatchingEnumerator {
    base: usize,
    current: Option<Vec<usize>>,
    remaining: u64,
}

impl Iterator for MatchingEnumerator {
    type Item = DiscreteMatching;

    fn next(&mut self) -> Option<DiscreteMatching> {
        let current = self.current.as_mut()?;
        let out = DiscreteMatching {
            assignment: current.clone(),
        };
        self.remaining -= 1;
        // odometer increment
        let mut i = 0;
        loop {
            if i == current.len() {
                self.current = None;
                break;
            }
            current[i] += 1;
            if current[i] < self.base {
                break;
            }
            current[i] = 0;
            i += 1;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.remaining as usize;
        (r, Some(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tiny(n: usize, m: usize) -> MarketInstance {
        let mut utilities = Matrix::zeros(n, m + 1);
        let mut priorities = Matrix::zeros(n, m + 1);
        for s in 0..n {
            for c in 1..=m {
                utilities.set(s, c, 1.0 - 0.1 * c as f64);
                priorities.set(s, c, (s + 1) as f64 / n as f64);
            }
        }
        MarketInstance {
            n_students: n,
            n_schools: m,
            utilities,
            priorities,
            capacities: vec![1; m],
            slack: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn empty_matching_is_feasible() {
        let inst = MarketInstance::misaligned_pair();
        let f = check_feasible(&DiscreteMatching::unassigned(2), &inst).unwrap();
        assert_eq!(
            f,
            Feasibility {
                overflow: 0,
                feasible: true
            }
        );
    }

    #[test]
    fn misaligned_pair_cannot_seat_both() {
        let inst = MarketInstance::misaligned_pair();
        inst.validate().unwrap();
        let both = DiscreteMatching {
            assignment: vec![2, 1],
        };
        let f = check_feasible(&both, &inst).unwrap();
        assert_eq!(f.overflow, 2);
        assert!(!f.feasible);
    }

    #[test]
    fn out_of_range_school_is_rejected() {
        let inst = MarketInstance::misaligned_pair();
        let bad = DiscreteMatching {
            assignment: vec![3, 0],
        };
        assert!(matches!(
            check_feasible(&bad, &inst),
            Err(Error::Matching(_))
        ));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_matchings(&tiny(2, 2)).unwrap().count(), 9);
        assert_eq!(enumerate_matchings(&tiny(1, 3)).unwrap().count(), 4);
        for n in 1..=4 {
            for m in 1..=3 {
                let all: HashSet<_> = enumerate_matchings(&tiny(n, m)).unwrap().collect();
                assert_eq!(all.len() as u64, (m as u64 + 1).pow(n as u32));
            }
        }
    }

    #[test]
    fn enumeration_refuses_huge_instances() {
        assert!(matches!(
            enumerate_matchings(&tiny(20, 3)),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn preference_order_breaks_ties_by_index() {
        assert_eq!(preference_order(&[0.0, 0.5, -1.0, 0.9, 0.5]), vec![3, 1, 4]);
    }

    #[test]
    fn validate_rejects_tied_priorities() {
        let mut inst = MarketInstance::misaligned_pair();
        inst.priorities.set(1, 1, 1.0);
        assert!(inst.validate().is_err());
    }

    #[test]
    fn validate_rejects_zero_utility_for_real_school() {
        let mut inst = MarketInstance::misaligned_pair();
        inst.utilities.set(0, 1, 0.0);
        assert!(inst.validate().is_err());
    }
}
