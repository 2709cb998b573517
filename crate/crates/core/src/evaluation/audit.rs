//! Strategy-proofness audits against sampled misreports.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{preference_order, MarketInstance, OUTSIDE_OPTION};
use crate::mechanism::{expected_utility, menu_row, MenuNetwork};

/// Families of misreports the audit samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MisreportKind {
    /// The true utilities of the acceptable schools, reassigned in random order.
    Permutation,
    /// The true top-`t` list for a random `t`; the rest declared unacceptable.
    Truncation,
    /// `a·v + b` on the acceptable schools with `a > 0`, `b ≥ 0`.
    Rescale,
    /// An unrelated random utility row.
    Arbitrary,
}

impl MisreportKind {
    pub const ALL: [MisreportKind; 4] = [
        MisreportKind::Permutation,
        MisreportKind::Truncation,
        MisreportKind::Rescale,
        MisreportKind::Arbitrary,
    ];
}

/// A misreported utility row for student `s` (outside option stays at 0).
pub fn sample_misreport<R: Rng + ?Sized>(
    inst: &MarketInstance,
    s: usize,
    kind: MisreportKind,
    rng: &mut R,
) -> Vec<f64> {
    let truth = inst.utilities.row(s);
    let mut report = truth.to_vec();
    let order = inst.preference_order(s);
    match kind {
        MisreportKind::Permutation => {
            let mut values: Vec<f64> = order.iter().map(|&c| truth[c]).collect();
            values.shuffle(rng);
            for (&c, v) in order.iter().zip(values) {
                report[c] = v;
            }
        }
        MisreportKind::Truncation => {
            let keep = rng.random_range(0..=order.len());
            for &c in &order[keep..] {
                report[c] = -truth[c];
            }
        }
        MisreportKind::Rescale => {
            let top = order.first().map_or(1.0, |&c| truth[c]);
            let a = rng.random_range(0.05..=1.0) / top;
            let b = rng.random_range(0.0..=(1.0 - a * top).max(0.0));
            for &c in &order {
                report[c] = a * truth[c] + b;
            }
        }
        MisreportKind::Arbitrary => {
            for v in report.iter_mut().skip(1) {
                let x: f64 = rng.random_range(0.01..=1.0);
                *v = if rng.random::<bool>() { x } else { -x };
            }
        }
    }
    report[OUTSIDE_OPTION] = 0.0;
    report
}

/// Largest gain `EU(misreport) − EU(truth)` over `trials` sampled
/// (student, misreport) pairs. The menu is recomputed from the misreported
/// market, so any leak of the own report into the menu would show up here.
pub fn sp_audit<R: Rng + ?Sized>(
    net: &MenuNetwork,
    inst: &MarketInstance,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Config("sp_audit needs at least one trial".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let s = rng.random_range(0..inst.n_students);
        let kind = MisreportKind::ALL[rng.random_range(0..MisreportKind::ALL.len())];
        let report = sample_misreport(inst, s, kind, rng);
        worst = worst.max(deficit(net, inst, s, &report)?);
    }
    Ok(worst)
}

fn deficit(net: &MenuNetwork, inst: &MarketInstance, s: usize, report: &[f64]) -> Result<f64> {
    let lied = inst.with_report(s, report)?;
    let menu = menu_row(net, &lied, s)?;
    let truth = inst.utilities.row(s);
    let honest = expected_utility(&menu, truth, &inst.preference_order(s));
    let gamed = expected_utility(&menu, truth, &preference_order(report));
    Ok(gamed - honest)
}

/// Number of (student, misreport) pairs whose menu row is not bit-identical
/// to the truthful one, over `students × misreports` samples.
pub fn menu_invariance_violations<R: Rng + ?Sized>(
    net: &MenuNetwork,
    inst: &MarketInstance,
    students: usize,
    misreports: usize,
    rng: &mut R,
) -> Result<usize> {
    let mut picked: Vec<usize> = (0..inst.n_students).collect();
    picked.shuffle(rng);
    picked.truncate(students);
    let mut violations = 0;
    for &s in &picked {
        let truthful = menu_row(net, inst, s)?;
        for k in 0..misreports {
            let kind = MisreportKind::ALL[k % MisreportKind::ALL.len()];
            let report = sample_misreport(inst, s, kind, rng);
            let menu = menu_row(net, &inst.with_report(s, &report)?, s)?;
            if menu
                .iter()
                .zip(&truthful)
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

/// Result of auditing a set of instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub instances: usize,
    pub students_per_instance: usize,
    pub misreports_per_student: usize,
    /// Largest observed `EU(misreport) − EU(truth)`.
    pub max_deficit: f64,
    pub menu_violations: usize,
}

/// Structural and behavioural audit: for each instance, `students` random
/// students each try `misreports` misreports cycling through every kind.
pub fn audit_set(
    net: &MenuNetwork,
    instances: &[MarketInstance],
    students: usize,
    misreports: usize,
    seed: u64,
) -> Result<AuditSummary> {
    let mut max_deficit = f64::NEG_INFINITY;
    let mut menu_violations = 0;
    for (i, inst) in instances.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut picked: Vec<usize> = (0..inst.n_students).collect();
        picked.shuffle(&mut rng);
        picked.truncate(students);
        for &s in &picked {
            let truthful = menu_row(net, inst, s)?;
            let truth = inst.utilities.row(s);
            let honest = expected_utility(&truthful, truth, &inst.preference_order(s));
            for k in 0..misreports {
                let kind = MisreportKind::ALL[k % MisreportKind::ALL.len()];
                let report = sample_misreport(inst, s, kind, &mut rng);
                let menu = menu_row(net, &inst.with_report(s, &report)?, s)?;
                if menu
                    .iter()
                    .zip(&truthful)
                    .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    menu_violations += 1;
                }
                let gamed = expected_utility(&menu, truth, &preference_order(&report));
                max_deficit = max_deficit.max(gamed - honest);
            }
        }
    }
    Ok(AuditSummary {
        instances: instances.len(),
        students_per_instance: students,
        misreports_per_student: misreports,
        max_deficit,
        menu_violations,
    })
}

/// Both sides of the adjacent-swap identity for positions `j`, `j+1` of
/// `order`: returns `(Δ − Δ′, α·p_c·p_c′·(v_c − v_c′))`, where `Δ′` is the
/// expected utility with the two schools swapped and `α` the probability
/// of reaching position `j`.
pub fn adjacent_swap_identity(
    menu: &[f64],
    utilities: &[f64],
    order: &[usize],
    j: usize,
) -> (f64, f64) {
    let mut swapped = order.to_vec();
    swapped.swap(j, j + 1);
    let lhs =
        expected_utility(menu, utilities, order) - expected_utility(menu, utilities, &swapped);
    let alpha: f64 = order[..j].iter().map(|&c| 1.0 - menu[c]).product();
    let (c, d) = (order[j], order[j + 1]);
    (
        lhs,
        alpha * menu[c] * menu[d] * (utilities[c] - utilities[d]),
    )
}
