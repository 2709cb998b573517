//! Strategy-proof comparison mechanisms: random serial dictatorship under
//! the global slack, and student-proposing deferred acceptance with the
//! slack spread over schools.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{InstabilityProfile, LossWeights};
use crate::market::{check_feasible, DiscreteMatching, MarketInstance, OUTSIDE_OPTION};

pub use crate::market::deferred_acceptance;
use crate::mechanism::AssignmentMatrix;

/// Default number of draws behind a baseline's empirical marginals.
pub const DEFAULT_DRAWS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Rsd,
    Da,
}

impl Mechanism {
    pub fn tag(self) -> &'static str {
        match self {
            Mechanism::Rsd => "RSD",
            Mechanism::Da => "DA",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rsd" => Ok(Mechanism::Rsd),
            "da" => Ok(Mechanism::Da),
            other => Err(Error::Config(format!(
                "unknown baseline `{other}` (expected rsd or da)"
            ))),
        }
    }
}

/// Which feasibility test serial dictatorship applies when seating a student.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsdRule {
    /// Aggregate overflow `Σ_c max{|μ(c)| − q_c, 0}` stays within the slack.
    #[default]
    Overflow,
    /// Only total enrollment is bounded, by `Σ_c q_c + K`.
    TotalEnrollment,
}

/// Random serial dictatorship with the overflow rule.
pub fn rsd<R: Rng + ?Sized>(inst: &MarketInstance, rng: &mut R) -> DiscreteMatching {
    rsd_with_rule(inst, RsdRule::Overflow, rng)
}

pub fn rsd_with_rule<R: Rng + ?Sized>(
    inst: &MarketInstance,
    rule: RsdRule,
    rng: &mut R,
) -> DiscreteMatching {
    let mut order: Vec<usize> = (0..inst.n_students).collect();
    order.shuffle(rng);
    serial_dictatorship(inst, &order, rule)
}

/// Students pick in `order`, each taking their best acceptable school that
/// keeps the matching feasible under `rule`.
pub fn serial_dictatorship(
    inst: &MarketInstance,
    order: &[usize],
    rule: RsdRule,
) -> DiscreteMatching {
    let mut mu = DiscreteMatching::unassigned(inst.n_students);
    let mut counts = vec![0u64; inst.n_schools];
    let mut overflow = 0u64;
    let mut enrolled = 0u64;
    let budget = inst.total_capacity() as f64 + inst.slack;
    for &s in order {
        for c in inst.preference_order(s) {
            let extra = (counts[c - 1] >= inst.capacity(c) as u64) as u64;
            let fits = match rule {
                RsdRule::Overflow => (overflow + extra) as f64 <= inst.slack,
                RsdRule::TotalEnrollment => (enrolled + 1) as f64 <= budget,
            };
            if fits {
                mu.assignment[s] = c;
                counts[c - 1] += 1;
                overflow += extra;
                enrolled += 1;
                break;
            }
        }
    }
    mu
}

/// Capacities with the slack distributed: every school gets `⌊K/m⌋` extra
/// seats and `⌊K⌋ mod m` schools, drawn without replacement, one more.
pub fn augmented_capacities<R: Rng + ?Sized>(inst: &MarketInstance, rng: &mut R) -> Vec<u32> {
    let m = inst.n_schools;
    let k = inst.slack.max(0.0).floor() as u64;
    let base = (k / m as u64) as u32;
    let mut caps: Vec<u32> = inst.capacities.iter().map(|&q| q + base).collect();
    for c in index::sample(rng, m, (k % m as u64) as usize) {
        caps[c] += 1;
    }
    caps
}

/// Deferred acceptance at randomly augmented capacities; returns the
/// matching and the capacities used.
pub fn da_with_slack<R: Rng + ?Sized>(
    inst: &MarketInstance,
    rng: &mut R,
) -> (DiscreteMatching, Vec<u32>) {
    let caps = augmented_capacities(inst, rng);
    (deferred_acceptance(inst, &caps), caps)
}

/// Pairs `(s, c)` blocking `matching` at the given capacities: `s` finds `c`
/// acceptable and better than their assignment, and `c` has a free seat or
/// holds someone of lower priority.
pub fn blocking_pairs(
    matching: &DiscreteMatching,
    inst: &MarketInstance,
    capacities: &[u32],
) -> Vec<(usize, usize)> {
    let mu = &matching.assignment;
    let mut counts = vec![0u32; inst.n_schools];
    for &c in mu {
        if c != OUTSIDE_OPTION {
            counts[c - 1] += 1;
        }
    }
    let mut out = Vec::new();
    for s in 0..inst.n_students {
        let current = inst.utility(s, mu[s]);
        for c in 1..=inst.n_schools {
            if !inst.is_acceptable(s, c) || inst.utility(s, c) <= current {
                continue;
            }
            let open = counts[c - 1] < capacities[c - 1];
            let displaces = (0..inst.n_students)
                .any(|t| mu[t] == c && inst.priority(t, c) < inst.priority(s, c));
            if open || displaces {
                out.push((s, c));
            }
        }
    }
    out
}

/// A matching is stable at `capacities` if it respects them, is
/// individually rational and has no blocking pair.
pub fn is_stable(matching: &DiscreteMatching, inst: &MarketInstance, capacities: &[u32]) -> bool {
    let Ok(counts) = matching.school_counts(inst.n_schools) else {
        return false;
    };
    let within = counts.iter().zip(capacities).all(|(&k, &q)| k <= q as u64);
    let rational = matching
        .assignment
        .iter()
        .enumerate()
        .all(|(s, &c)| c == OUTSIDE_OPTION || inst.is_acceptable(s, c));
    within && rational && blocking_pairs(matching, inst, capacities).is_empty()
}

/// Every draw of one baseline on one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRun {
    pub mechanism: Mechanism,
    pub matchings: Vec<DiscreteMatching>,
    /// Augmented capacities of each DA draw; empty for RSD.
    pub capacities: Vec<Vec<u32>>,
    pub draws: usize,
    pub seed: u64,
}

fn draw_seed(seed: u64, draw: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (draw as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn run_baseline(
    mechanism: Mechanism,
    inst: &MarketInstance,
    draws: usize,
    seed: u64,
) -> Result<BaselineRun> {
    run_baseline_with_rule(mechanism, inst, draws, seed, RsdRule::Overflow)
}

/// Runs `draws` independent draws, each from its own derived seed.
pub fn run_baseline_with_rule(
    mechanism: Mechanism,
    inst: &MarketInstance,
    draws: usize,
    seed: u64,
    rule: RsdRule,
) -> Result<BaselineRun> {
    if draws == 0 {
        return Err(Error::Config("need at least one draw".into()));
    }
    let mut matchings = Vec::with_capacity(draws);
    let mut capacities = Vec::new();
    for d in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(seed, d));
        match mechanism {
            Mechanism::Rsd => {
                let mu = rsd_with_rule(inst, rule, &mut rng);
                if rule == RsdRule::Overflow && !check_feasible(&mu, inst)?.feasible {
                    return Err(Error::Matching(format!("RSD draw {d} violates the slack")));
                }
                matchings.push(mu);
            }
            Mechanism::Da => {
                let (mu, caps) = da_with_slack(inst, &mut rng);
                matchings.push(mu);
                capacities.push(caps);
            }
        }
    }
    Ok(BaselineRun {
        mechanism,
        matchings,
        capacities,
        draws,
        seed,
    })
}

impl BaselineRun {
    /// Empirical marginal assignment probabilities.
    pub fn marginals(&self, inst: &MarketInstance) -> Result<AssignmentMatrix> {
        AssignmentMatrix::from_matchings(&self.matchings, inst.n_students, inst.n_schools)
    }
}

/// Empirical marginals of a baseline and their hard-mode instability.
pub fn evaluate_baseline(
    mechanism: Mechanism,
    inst: &MarketInstance,
    draws: usize,
    seed: u64,
    weights: &LossWeights,
) -> Result<(AssignmentMatrix, InstabilityProfile)> {
    let run = run_baseline(mechanism, inst, draws, seed)?;
    let p = run.marginals(inst)?;
    let profile = InstabilityProfile::measure(&p, inst, weights)?;
    Ok((p, profile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::market::{generate_instance, waste_violations, GenerationConfig};

    fn market(n: usize, m: usize, seed: u64) -> MarketInstance {
        let cfg = GenerationConfig {
            n_students: n,
            n_schools: m,
            top_k_acceptable: m.min(3),
            ..Default::default()
        };
        generate_instance(&cfg, seed).unwrap()
    }

    #[test]
    fn ample_slack_gives_everyone_their_top_choice() {
        let mut inst = market(30, 4, 1);
        inst.slack = 30.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mu = rsd(&inst, &mut rng);
        for s in 0..30 {
            assert_eq!(mu.assignment[s], inst.preference_order(s)[0]);
        }
    }

    #[test]
    fn misaligned_pair_serial_dictatorship() {
        let inst = MarketInstance::misaligned_pair();
        let mu = serial_dictatorship(&inst, &[1, 0], RsdRule::Overflow);
        assert_eq!(mu.assignment, vec![0, 1]);
        let mu = serial_dictatorship(&inst, &[0, 1], RsdRule::Overflow);
        assert_eq!(mu.assignment, vec![2, 0]);
    }

    #[test]
    fn rsd_is_feasible_and_non_wasteful() {
        for seed in 0..200 {
            let inst = market(25, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = rsd(&inst, &mut rng);
            assert!(check_feasible(&mu, &inst).unwrap().feasible);
            assert!(waste_violations(&mu, &inst).is_empty());
        }
    }

    #[test]
    fn literal_rule_bounds_total_enrollment() {
        let inst = market(40, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = rsd_with_rule(&inst, RsdRule::TotalEnrollment, &mut rng);
        let enrolled = mu.assignment.iter().filter(|&&c| c != 0).count() as f64;
        assert!(enrolled <= inst.total_capacity() as f64 + inst.slack);
    }

    #[test]
    fn remainder_seats_go_to_distinct_schools() {
        let mut inst = market(100, 10, 2);
        inst.slack = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let caps = augmented_capacities(&inst, &mut rng);
        let gained: Vec<u32> = caps
            .iter()
            .zip(&inst.capacities)
            .map(|(a, b)| a - b)
            .collect();
        assert_eq!(gained.iter().filter(|&&g| g == 1).count(), 5);
        assert!(gained.iter().all(|&g| g <= 1));
        inst.slack = 23.0;
        let caps = augmented_capacities(&inst, &mut rng);
        assert_eq!(
            caps.iter().sum::<u32>(),
            inst.capacities.iter().sum::<u32>() + 23
        );
    }

    #[test]
    fn zero_slack_da_is_stable() {
        for seed in 0..50 {
            let mut inst = market(30, 4, seed);
            inst.slack = 0.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mu, caps) = da_with_slack(&inst, &mut rng);
            assert_eq!(caps, inst.capacities);
            assert!(is_stable(&mu, &inst, &caps));
        }
    }

    #[test]
    fn single_draw_is_a_zero_one_matrix() {
        let inst = market(12, 3, 4);
        let run = run_baseline(Mechanism::Rsd, &inst, 1, 7).unwrap();
        let p = run.marginals(&inst).unwrap();
        for s in 0..12 {
            assert_eq!(p.row(s)[run.matchings[0].assignment[s]], 1.0);
            assert_eq!(p.row(s).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn symmetric_pair_splits_top_choice() {
        // both want the single school, which has no seat and one slack seat
        let inst = MarketInstance {
            n_students: 2,
            n_schools: 1,
            utilities: Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            priorities: Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.5]]).unwrap(),
            capacities: vec![0],
            slack: 1.0,
            seed: 0,
        };
        let run = run_baseline(Mechanism::Rsd, &inst, 10_000, 3).unwrap();
        let p = run.marginals(&inst).unwrap();
        assert!((p.row(0)[1] - 0.5).abs() < 0.02);
        assert!((p.row(1)[1] - 0.5).abs() < 0.02);
    }

    #[test]
    fn mechanism_names_parse() {
        assert_eq!("RSD".parse::<Mechanism>().unwrap(), Mechanism::Rsd);
        assert_eq!("da".parse::<Mechanism>().unwrap(), Mechanism::Da);
        assert!("x".parse::<Mechanism>().is_err());
    }
}
