use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::instance::{DiscreteMatching, MarketInstance};

/// Heap entry ordered so the lowest-priority student sits on top.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Held {
    priority: f64,
    student: usize,
}

impl Eq for Held {}

impl Ord for Held {
    fn cmp(&self, other: &Self) -> Ordering {
        other.priority.total_cmp(&self.priority)
    }
}

impl PartialOrd for Held {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Every student's acceptable schools, best first.
pub(crate) fn preference_lists(inst: &MarketInstance) -> Vec<Vec<usize>> {
    (0..inst.n_students)
        .map(|s| inst.preference_order(s))
        .collect()
}

/// Student-proposing deferred acceptance over acceptable schools.
/// `capacities` is indexed by `c - 1`; student `skip`, if any, takes no
/// part. Returns the students held by every school at the end.
pub fn deferred_acceptance_held(
    inst: &MarketInstance,
    capacities: &[u32],
    skip: Option<usize>,
) -> Vec<Vec<usize>> {
    held_with(inst, &preference_lists(inst), capacities, skip)
        .into_iter()
        .map(|heap| heap.into_iter().map(|h| h.student).collect())
        .collect()
}

fn held_with(
    inst: &MarketInstance,
    prefs: &[Vec<usize>],
    capacities: &[u32],
    skip: Option<usize>,
) -> Vec<BinaryHeap<Held>> {
    let n = inst.n_students;
    let mut next = vec![0usize; n];
    let mut held: Vec<BinaryHeap<Held>> = capacities
        .iter()
        .map(|&q| BinaryHeap::with_capacity(q as usize + 1))
        .collect();
    let mut free: VecDeque<usize> = (0..n).filter(|&s| Some(s) != skip).collect();
    while let Some(s) = free.pop_front() {
        let Some(&c) = prefs[s].get(next[s]) else {
            continue;
        };
        next[s] += 1;
        let entry = Held {
            priority: inst.priority(s, c),
            student: s,
        };
        let heap = &mut held[c - 1];
        if heap.len() < capacities[c - 1] as usize {
            heap.push(entry);
            continue;
        }
        // full (or zero-capacity): keep the higher-priority student
        match heap.peek() {
            Some(worst) if entry.priority > worst.priority => {
                let out = heap.pop().expect("peeked").student;
                heap.push(entry);
                free.push_back(out);
            }
            _ => free.push_back(s),
        }
    }
    held
}

/// Student-proposing deferred acceptance; unmatched students get the
/// outside option.
pub fn deferred_acceptance(inst: &MarketInstance, capacities: &[u32]) -> DiscreteMatching {
    let mut mu = DiscreteMatching::unassigned(inst.n_students);
    for (c0, list) in deferred_acceptance_held(inst, capacities, None)
        .iter()
        .enumerate()
    {
        for &s in list {
            mu.assignment[s] = c0 + 1;
        }
    }
    mu
}

/// Priority a newcomer must beat to be admitted to each school after
/// deferred acceptance without student `skip`: `-∞` when a seat is free,
/// `+∞` for schools without seats, otherwise the lowest priority held.
pub fn admission_cutoffs(
    inst: &MarketInstance,
    capacities: &[u32],
    skip: Option<usize>,
) -> Vec<f64> {
    admission_cutoffs_with(inst, &preference_lists(inst), capacities, skip)
}

/// [`admission_cutoffs`] with precomputed [`preference_lists`].
pub(crate) fn admission_cutoffs_with(
    inst: &MarketInstance,
    prefs: &[Vec<usize>],
    capacities: &[u32],
    skip: Option<usize>,
) -> Vec<f64> {
    held_with(inst, prefs, capacities, skip)
        .iter()
        .zip(capacities)
        .map(|(heap, &q)| match heap.peek() {
            _ if q == 0 => f64::INFINITY,
            _ if heap.len() < q as usize => f64::NEG_INFINITY,
            Some(worst) => worst.priority,
            None => f64::NEG_INFINITY,
        })
        .collect()
}
