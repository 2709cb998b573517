//! Leave-one-out feature encoding.
//!
//! The features of student `s` at school `c` depend on the other students'
//! utilities, the priorities, the capacities and the slack, but never on row
//! `s` of the utility matrix. Sums over "everyone but `s`" are accumulated as
//! a prefix over `0..s` plus a suffix over `s+1..n`, in a fixed order, so the
//! result is bit-identical whatever `s` reports.
//!
//! The last two features place `s` relative to the admission cutoffs of
//! deferred acceptance run on the market without `s`, once at the nominal
//! capacities and once with one extra seat per school.

use crate::autodiff::Matrix;
use crate::market::{admission_cutoffs_with, preference_lists, MarketInstance};

/// Number of features per (student, school) pair.
pub const FEATURE_COUNT: usize = 10;

/// Identifies this encoding in checkpoints; bump on any change.
pub const FEATURE_VERSION: &str = "loo-aggregate-cutoff-v2";

const MAX_PRESSURE: f64 = 10.0;
const MARGIN_RANKS: f64 = 4.0;

/// Per-school contribution of one student to the leave-one-out aggregates.
#[derive(Clone, Copy, Default)]
struct Demand {
    count: f64,
    utility: f64,
    rank: f64,
}

impl Demand {
    fn add(&mut self, other: &Demand) {
        self.count += other.count;
        self.utility += other.utility;
        self.rank += other.rank;
    }
}

/// Contribution of every student to every school, `[s][c-1]`.
fn demand_table(inst: &MarketInstance) -> Vec<Vec<Demand>> {
    let m = inst.n_schools;
    let rank_scale = (m.max(2) - 1) as f64;
    (0..inst.n_students)
        .map(|s| {
            let mut row = vec![Demand::default(); m];
            for (pos, c) in inst.preference_order(s).into_iter().enumerate() {
                row[c - 1] = Demand {
                    count: 1.0,
                    utility: inst.utility(s, c),
                    rank: pos as f64 / rank_scale,
                };
            }
            row
        })
        .collect()
}

/// Cutoffs without `s` at capacities `q` and `q + 1`, indexed `[c - 1]`.
struct Cutoffs {
    nominal: Vec<f64>,
    extended: Vec<f64>,
}

impl Cutoffs {
    fn without(inst: &MarketInstance, prefs: &[Vec<usize>], s: usize) -> Self {
        let extended_caps: Vec<u32> = inst.capacities.iter().map(|&q| q + 1).collect();
        Cutoffs {
            nominal: admission_cutoffs_with(inst, prefs, &inst.capacities, Some(s)),
            extended: admission_cutoffs_with(inst, prefs, &extended_caps, Some(s)),
        }
    }
}

/// Priority margin over a cutoff in units of `MARGIN_RANKS` rank spacings
/// (priorities are spread over `[0, 1]`, so one rank is about `1/n`),
/// clamped to `[-1, 1]`.
fn margin(priority: f64, cutoff: f64, n: usize) -> f64 {
    ((priority - cutoff) * n as f64 / MARGIN_RANKS).clamp(-1.0, 1.0)
}

fn feature_row(
    inst: &MarketInstance,
    s: usize,
    c: usize,
    others: &Demand,
    percentile: f64,
    cutoffs: &Cutoffs,
) -> [f64; FEATURE_COUNT] {
    let n = inst.n_students as f64;
    let q = inst.capacity(c) as f64;
    let demand = if inst.n_students > 1 {
        others.count / (n - 1.0)
    } else {
        0.0
    };
    let (mean_utility, mean_rank) = if others.count > 0.0 {
        (others.utility / others.count, others.rank / others.count)
    } else {
        (0.0, 1.0)
    };
    [
        q / n,
        inst.slack / n,
        demand,
        mean_utility,
        mean_rank,
        inst.priority(s, c),
        percentile,
        (demand * n / (q + 1.0)).clamp(0.0, MAX_PRESSURE),
        margin(inst.priority(s, c), cutoffs.nominal[c - 1], inst.n_students),
        margin(
            inst.priority(s, c),
            cutoffs.extended[c - 1],
            inst.n_students,
        ),
    ]
}

/// Features of student `s`: an `m × FEATURE_COUNT` matrix, one row per real
/// school.
pub fn encode_features(inst: &MarketInstance, s: usize) -> Matrix {
    let (n, m) = (inst.n_students, inst.n_schools);
    let table = demand_table(inst);
    let cutoffs = Cutoffs::without(inst, &preference_lists(inst), s);
    let mut out = Matrix::zeros(m, FEATURE_COUNT);
    for c in 1..=m {
        let mut before = Demand::default();
        for row in table.iter().take(s) {
            before.add(&row[c - 1]);
        }
        let mut after = Demand::default();
        for row in table.iter().skip(s + 1).rev() {
            after.add(&row[c - 1]);
        }
        before.add(&after);
        let u = inst.priority(s, c);
        let at_or_below = (0..n).filter(|&t| inst.priority(t, c) <= u).count();
        let f = feature_row(inst, s, c, &before, at_or_below as f64 / n as f64, &cutoffs);
        out.row_mut(c - 1).copy_from_slice(&f);
    }
    out
}

/// Features of every student, stacked student-major: row `s·m + (c-1)`.
/// Row block `s` equals [`encode_features`]`(inst, s)` exactly.
pub fn encode_all(inst: &MarketInstance) -> Matrix {
    let (n, m) = (inst.n_students, inst.n_schools);
    let table = demand_table(inst);

    // prefix[s] = Σ_{t<s}, suffix[s] = Σ_{t>s}, accumulated in the same order
    // as the single-student path.
    let mut prefix = vec![vec![Demand::default(); m]; n];
    for s in 1..n {
        for c in 0..m {
            let mut d = prefix[s - 1][c];
            d.add(&table[s - 1][c]);
            prefix[s][c] = d;
        }
    }
    let mut suffix = vec![vec![Demand::default(); m]; n];
    for s in (0..n.saturating_sub(1)).rev() {
        for c in 0..m {
            let mut d = suffix[s + 1][c];
            d.add(&table[s + 1][c]);
            suffix[s][c] = d;
        }
    }

    let sorted_priorities: Vec<Vec<f64>> = (1..=m)
        .map(|c| {
            let mut col = inst.priorities.column(c);
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();

    let prefs = preference_lists(inst);
    let mut out = Matrix::zeros(n * m, FEATURE_COUNT);
    for s in 0..n {
        let cutoffs = Cutoffs::without(inst, &prefs, s);
        for c in 1..=m {
            let mut others = prefix[s][c - 1];
            others.add(&suffix[s][c - 1]);
            let u = inst.priority(s, c);
            let at_or_below = sorted_priorities[c - 1].partition_point(|&x| x <= u);
            let f = feature_row(inst, s, c, &others, at_or_below as f64 / n as f64, &cutoffs);
            out.row_mut(s * m + c - 1).copy_from_slice(&f);
        }
    }
    out
}
