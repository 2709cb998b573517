//! The survival-chain assignment rule and its ex-post realization.
//!
//! Student `s` walks down their acceptable schools in preference order; each
//! school is available independently with probability `p[s][c]`, and the
//! student takes the first available one. The probability of ending at the
//! `j`-th choice is `p_j · Π_{k<j} (1 − p_k)`, computed in the log domain.

use std::sync::Arc;

use rand::Rng;

use super::network::MenuMatrix;
use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::market::{DiscreteMatching, MarketInstance, OUTSIDE_OPTION};

/// Marginal assignment probabilities, n × (m+1); every row sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix(pub Matrix);

impl AssignmentMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.0.rows())
            .map(|s| self.0.row(s).iter().sum())
            .collect()
    }

    /// Expected number of students at every real school.
    pub fn loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.0.cols().saturating_sub(1)];
        for s in 0..self.0.rows() {
            for (l, p) in loads.iter_mut().zip(&self.0.row(s)[1..]) {
                *l += p;
            }
        }
        loads
    }

    /// Empirical marginals of a set of matchings.
    pub fn from_matchings(
        matchings: &[DiscreteMatching],
        n_students: usize,
        n_schools: usize,
    ) -> Result<Self> {
        if matchings.is_empty() {
            return Err(Error::Matching("need at least one matching".into()));
        }
        let mut p = Matrix::zeros(n_students, n_schools + 1);
        for mu in matchings {
            if mu.assignment.len() != n_students {
                return Err(Error::Matching(
                    "one assignment per student required".into(),
                ));
            }
            for (s, &c) in mu.assignment.iter().enumerate() {
                if c > n_schools {
                    return Err(Error::Matching(format!("school {c} out of range")));
                }
                p.set(s, c, p.get(s, c) + 1.0);
            }
        }
        p.scale_in_place(1.0 / matchings.len() as f64);
        Ok(AssignmentMatrix(p))
    }
}

/// Preference chains of every student as 0-based real-school columns.
pub fn chain_orders(inst: &MarketInstance) -> Vec<Vec<usize>> {
    (0..inst.n_students)
        .map(|s| {
            inst.preference_order(s)
                .into_iter()
                .map(|c| c - 1)
                .collect()
        })
        .collect()
}

/// 0/1 mask of acceptable real schools, n × m.
pub fn acceptable_mask(inst: &MarketInstance) -> Matrix {
    let mut mask = Matrix::zeros(inst.n_students, inst.n_schools);
    for s in 0..inst.n_students {
        for c in 1..=inst.n_schools {
            if inst.is_acceptable(s, c) {
                mask.set(s, c - 1, 1.0);
            }
        }
    }
    mask
}

/// Unnormalized chain probabilities for one menu row (length m+1, entry 0
/// is the outside option) and one visiting order of 1-based schools.
pub fn survival_chain(menu_row: &[f64], order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; menu_row.len()];
    let mut log_survival = 0.0;
    for &c in order {
        let p = menu_row[c];
        out[c] = (p.ln() + log_survival).exp();
        log_survival += (-p).ln_1p();
    }
    out[OUTSIDE_OPTION] = log_survival.exp();
    out
}

/// Marginal assignment probabilities induced by `menus`.
pub fn assign(menus: &MenuMatrix, inst: &MarketInstance) -> Result<AssignmentMatrix> {
    check_menus(menus, inst)?;
    let mut p = Matrix::zeros(inst.n_students, inst.n_schools + 1);
    for s in 0..inst.n_students {
        let mut row = survival_chain(menus.row(s), &inst.preference_order(s));
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        p.row_mut(s).copy_from_slice(&row);
    }
    Ok(AssignmentMatrix(p))
}

fn check_menus(menus: &MenuMatrix, inst: &MarketInstance) -> Result<()> {
    if menus.0.shape() != (inst.n_students, inst.n_schools + 1) {
        return Err(Error::shape(
            "assign",
            format!(
                "menus are {:?}, instance needs {}×{}",
                menus.0.shape(),
                inst.n_students,
                inst.n_schools + 1
            ),
        ));
    }
    menus.validate()
}

/// Differentiable version of [`assign`]: `menus` is the n × m real-school
/// block, the result is n × (m+1) with rows renormalized to 1.
pub fn assign_graph(g: &mut Graph, menus: Var, inst: &MarketInstance) -> Result<Var> {
    if g.value(menus).shape() != (inst.n_students, inst.n_schools) {
        return Err(Error::shape("assign_graph", "menus must be n × m"));
    }
    let mask = g.constant(acceptable_mask(inst));
    let orders = Arc::new(chain_orders(inst));

    let log_p = g.log(menus)?;
    let neg = g.neg(menus);
    let log_q = g.log1p(neg)?;
    let log_q = g.mul(log_q, mask)?;
    let log_survival = g.chain_cumsum(log_q, orders)?;
    let log_real = g.add(log_p, log_survival)?;
    let real = g.exp(log_real);
    let real = g.mul(real, mask)?;
    let total_log_q = g.sum_rows(log_q);
    let outside = g.exp(total_log_q);
    let p = g.concat_cols(outside, real)?;
    let sums = g.sum_rows(p);
    let inv = g.recip(sums)?;
    g.mul(p, inv)
}

/// Samples one ex-post matching: every student independently finds each
/// school on their chain open with probability `p[s][c]` and takes the
/// first open one.
pub fn realize_matching<R: Rng + ?Sized>(
    menus: &MenuMatrix,
    inst: &MarketInstance,
    rng: &mut R,
) -> Result<DiscreteMatching> {
    check_menus(menus, inst)?;
    let assignment = (0..inst.n_students)
        .map(|s| {
            let row = menus.row(s);
            inst.preference_order(s)
                .into_iter()
                .find(|&c| rng.random::<f64>() < row[c])
                .unwrap_or(OUTSIDE_OPTION)
        })
        .collect();
    Ok(DiscreteMatching { assignment })
}

/// Expected true utility of a student who applies down `report` (1-based
/// schools) against the fixed menu row. `utilities` is the student's true
/// utility row, including the outside option at index 0.
pub fn expected_utility(menu_row: &[f64], utilities: &[f64], report: &[usize]) -> f64 {
    let mut survival = 1.0;
    let mut total = 0.0;
    for &c in report {
        total += survival * menu_row[c] * utilities[c];
        survival *= 1.0 - menu_row[c];
    }
    total + survival * utilities[OUTSIDE_OPTION]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate_instance, GenerationConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn menus_from(rows: &[Vec<f64>]) -> MenuMatrix {
        MenuMatrix::from_real(&Matrix::from_rows(rows).unwrap())
    }

    fn one_student(utilities: Vec<f64>) -> MarketInstance {
        let m = utilities.len() - 1;
        MarketInstance {
            n_students: 1,
            n_schools: m,
            utilities: Matrix::from_rows(&[utilities]).unwrap(),
            priorities: Matrix::zeros(1, m + 1),
            capacities: vec![1; m],
            slack: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn certain_menu_gives_top_choice() {
        let inst = one_student(vec![0.0, 0.4, 0.9, -1.0]);
        let p = assign(&menus_from(&[vec![1.0, 1.0, 1.0]]), &inst).unwrap();
        assert_eq!(p.row(0), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_school_chain() {
        let inst = one_student(vec![0.0, 0.8]);
        let p = assign(&menus_from(&[vec![0.3]]), &inst).unwrap();
        assert!((p.row(0)[1] - 0.3).abs() < 1e-15);
        assert!((p.row(0)[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn halves_down_the_chain() {
        let inst = one_student(vec![0.0, 0.9, 0.6, 0.3]);
        let p = assign(&menus_from(&[vec![0.5, 0.5, 0.5]]), &inst).unwrap();
        for (got, want) in p.row(0).iter().zip([0.125, 0.5, 0.25, 0.125]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unacceptable_schools_get_nothing() {
        let inst = one_student(vec![0.0, -1.0, 0.5]);
        let p = assign(&menus_from(&[vec![0.9, 0.4]]), &inst).unwrap();
        assert_eq!(p.row(0)[1], 0.0);
        assert!((p.row(0)[2] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn graph_matches_direct_rule() {
        let cfg = GenerationConfig {
            n_students: 12,
            n_schools: 4,
            top_k_acceptable: 3,
            ..Default::default()
        };
        let inst = generate_instance(&cfg, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = Matrix::from_vec(
            12,
            4,
            (0..48).map(|_| rng.random_range(0.01..0.99)).collect(),
        )
        .unwrap();
        let direct = assign(&MenuMatrix::from_real(&real), &inst).unwrap();
        let mut g = Graph::new();
        let x = g.constant(real);
        let p = assign_graph(&mut g, x, &inst).unwrap();
        assert!(g.value(p).max_abs_diff(direct.matrix()) < 1e-14);
    }

    #[test]
    fn expected_utility_hand_example() {
        let v = [0.0, 0.9, 0.5];
        let p = [1.0, 0.5, 1.0];
        assert!((expected_utility(&p, &v, &[1, 2]) - 0.70).abs() < 1e-15);
        assert!((expected_utility(&p, &v, &[2, 1]) - 0.50).abs() < 1e-15);
    }

    #[test]
    fn empirical_marginals_from_matchings() {
        let a = DiscreteMatching {
            assignment: vec![1, 0],
        };
        let b = DiscreteMatching {
            assignment: vec![2, 0],
        };
        let p = AssignmentMatrix::from_matchings(&[a, b], 2, 2).unwrap();
        assert_eq!(p.row(0), &[0.0, 0.5, 0.5]);
        assert_eq!(p.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(p.loads(), vec![0.5, 0.5]);
    }
}
