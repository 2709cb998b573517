//! Training objectives: welfare, the overflow barrier, and the aggregated
//! ex-ante envy and waste vectors.
//!
//! Every quantity is built on a [`Graph`] so training can differentiate it;
//! the plain functions evaluate the same graph on constant inputs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::market::MarketInstance;
use crate::mechanism::AssignmentMatrix;

/// Coefficients of the composite objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub welfare: f64,
    pub capacity: f64,
    pub stability: f64,
    /// Barrier slope inside the slack.
    pub alpha: f64,
    /// Quadratic barrier coefficient beyond the slack.
    pub beta: f64,
    /// Linear barrier coefficient beyond the slack.
    pub gamma: f64,
    pub envy_mse: f64,
    pub envy_max: f64,
    pub envy_var: f64,
    pub waste_mse: f64,
    pub waste_max: f64,
    pub waste_var: f64,
    pub tau_envy: f64,
    pub tau_waste: f64,
    pub tau_priority: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            welfare: 1.0,
            capacity: 1.0,
            stability: 1.0,
            alpha: 0.001,
            beta: 10.0,
            gamma: 10.0,
            envy_mse: 1.0,
            envy_max: 1.0,
            envy_var: 1.0,
            waste_mse: 1.0,
            waste_max: 1.0,
            waste_var: 1.0,
            tau_envy: 0.05,
            tau_waste: 0.05,
            tau_priority: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("welfare", self.welfare),
            ("capacity", self.capacity),
            ("stability", self.stability),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("envy_mse", self.envy_mse),
            ("envy_max", self.envy_max),
            ("envy_var", self.envy_var),
            ("waste_mse", self.waste_mse),
            ("waste_max", self.waste_max),
            ("waste_var", self.waste_var),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be non-negative, got {w}"
                )));
            }
        }
        for (name, t) in [
            ("tau_envy", self.tau_envy),
            ("tau_waste", self.tau_waste),
            ("tau_priority", self.tau_priority),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "temperature {name} must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Every weight zero: the total loss vanishes identically.
    pub fn zero() -> Self {
        LossWeights {
            welfare: 0.0,
            capacity: 0.0,
            stability: 0.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            envy_mse: 0.0,
            envy_max: 0.0,
            envy_var: 0.0,
            waste_mse: 0.0,
            waste_max: 0.0,
            waste_var: 0.0,
            ..Default::default()
        }
    }
}

/// How priorities are compared inside the envy term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorityMode {
    /// Strict indicator `u_{s,c} > u_{s',c}`; used for every reported metric.
    Hard,
    /// `sigmoid(τ (u_{s,c} − u_{s',c}))`; used during training.
    Smooth(f64),
}

/// Summary statistics of a non-negative dissatisfaction vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorStats {
    pub mean: f64,
    pub mse: f64,
    pub max: f64,
    pub var: f64,
}

impl VectorStats {
    pub fn of(x: &[f64]) -> Self {
        if x.is_empty() {
            return VectorStats::default();
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        VectorStats {
            mean,
            mse: x.iter().map(|v| v * v).sum::<f64>() / n,
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            var: x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n,
        }
    }
}

/// Envy and waste vectors of one assignment together with their aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct InstabilityProfile {
    pub envy: Vec<f64>,
    pub waste: Vec<f64>,
    pub envy_stats: VectorStats,
    pub waste_stats: VectorStats,
    /// Smooth maxima at the given temperatures.
    pub envy_smooth_max: f64,
    pub waste_smooth_max: f64,
}

impl InstabilityProfile {
    pub fn new(envy: Vec<f64>, waste: Vec<f64>, weights: &LossWeights) -> Self {
        InstabilityProfile {
            envy_stats: VectorStats::of(&envy),
            waste_stats: VectorStats::of(&waste),
            envy_smooth_max: smooth_max(&envy, weights.tau_envy),
            waste_smooth_max: smooth_max(&waste, weights.tau_waste),
            envy,
            waste,
        }
    }

    /// Hard-mode profile of an assignment.
    pub fn measure(
        p: &AssignmentMatrix,
        inst: &MarketInstance,
        weights: &LossWeights,
    ) -> Result<Self> {
        let envy = envy_vector(p, inst, PriorityMode::Hard)?;
        let waste = waste_vector(p, inst)?;
        Ok(InstabilityProfile::new(envy, waste, weights))
    }
}

fn smooth_max(x: &[f64], tau: f64) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() {
        return max;
    }
    max + tau * x.iter().map(|v| ((v - max) / tau).exp()).sum::<f64>().ln()
}

// ---- graph builders -------------------------------------------------------

fn check_assignment(g: &Graph, p: Var, inst: &MarketInstance) -> Result<()> {
    let want = (inst.n_students, inst.n_schools + 1);
    if g.value(p).shape() != want {
        return Err(Error::shape(
            "loss",
            format!("assignment is {:?}, expected {want:?}", g.value(p).shape()),
        ));
    }
    Ok(())
}

/// `V̄_s = Σ_c P[s][c] v[s][c]`, as an n × 1 column.
pub fn expected_utilities_graph(g: &mut Graph, p: Var, inst: &MarketInstance) -> Result<Var> {
    check_assignment(g, p, inst)?;
    let v = g.constant(inst.utilities.clone());
    let weighted = g.mul(p, v)?;
    Ok(g.sum_rows(weighted))
}

/// `max{v[s][c] − V̄_s, 0}` over real schools, n × m.
fn utility_gaps(g: &mut Graph, vbar: Var, inst: &MarketInstance) -> Result<Var> {
    let (n, m) = (inst.n_students, inst.n_schools);
    let mut real = Matrix::zeros(n, m);
    for s in 0..n {
        real.row_mut(s).copy_from_slice(&inst.utilities.row(s)[1..]);
    }
    let v = g.constant(real);
    let diff = g.sub(v, vbar)?;
    Ok(g.clamp_min_zero(diff))
}

/// Priority comparison kernels: `kernels[c][s][s'] = g(u_{s,c} − u_{s',c})`.
/// The diagonal is zero in both modes: nobody outranks themselves, and the
/// smooth kernel then converges to the hard one.
pub fn priority_kernels(inst: &MarketInstance, mode: PriorityMode) -> Vec<Matrix> {
    let n = inst.n_students;
    (1..=inst.n_schools)
        .map(|c| {
            let u = inst.priorities.column(c);
            let mut k = Matrix::zeros(n, n);
            for s in 0..n {
                let row = k.row_mut(s);
                for (t, kt) in row.iter_mut().enumerate() {
                    if t == s {
                        continue;
                    }
                    let d = u[s] - u[t];
                    *kt = match mode {
                        PriorityMode::Hard => (d > 0.0) as u8 as f64,
                        PriorityMode::Smooth(tau) => sigmoid(tau * d),
                    };
                }
            }
            k
        })
        .collect()
}

/// Ex-ante envy of every student, n × 1.
pub fn envy_graph(
    g: &mut Graph,
    p: Var,
    vbar: Var,
    inst: &MarketInstance,
    mode: PriorityMode,
) -> Result<Var> {
    check_assignment(g, p, inst)?;
    let gaps = utility_gaps(g, vbar, inst)?;
    let real = g.slice_cols(p, 1, inst.n_schools + 1)?;
    let outranked = g.column_mix(real, Arc::new(priority_kernels(inst, mode)))?;
    let per_school = g.mul(gaps, outranked)?;
    let total = g.sum_rows(per_school);
    Ok(g.scale(total, 1.0 / inst.n_students as f64))
}

/// Expected aggregate overflow `Ω = Σ_c max{ℓ_c − q_c, 0}`, 1 × 1, and the
/// per-school loads (1 × m).
pub fn overflow_graph(g: &mut Graph, p: Var, inst: &MarketInstance) -> Result<(Var, Var)> {
    check_assignment(g, p, inst)?;
    let real = g.slice_cols(p, 1, inst.n_schools + 1)?;
    let loads = g.sum_cols(real);
    let caps = g.constant(Matrix::row_vector(
        inst.capacities.iter().map(|&q| q as f64).collect(),
    ));
    let excess = g.sub(loads, caps)?;
    let excess = g.clamp_min_zero(excess);
    Ok((g.sum(excess), loads))
}

/// Ex-ante waste of every student, n × 1.
pub fn waste_graph(g: &mut Graph, p: Var, vbar: Var, inst: &MarketInstance) -> Result<Var> {
    let (omega, loads) = overflow_graph(g, p, inst)?;
    let caps = g.constant(Matrix::row_vector(
        inst.capacities.iter().map(|&q| q as f64).collect(),
    ));
    let local = g.sub(caps, loads)?;
    let local = g.clamp_min_zero(local);
    let k = g.constant(Matrix::scalar(inst.slack));
    let global = g.sub(k, omega)?;
    let global = g.clamp_min_zero(global);
    let open = g.add(local, global)?;
    let gate = g.clamp(open, f64::NEG_INFINITY, 1.0);
    let gaps = utility_gaps(g, vbar, inst)?;
    let per_school = g.mul(gaps, gate)?;
    let total = g.sum_rows(per_school);
    Ok(g.scale(total, 1.0 / inst.n_schools as f64))
}

/// `α Ω` within the slack, `α K + β (Ω − K)² + γ (Ω − K)` beyond it.
pub fn barrier_graph(g: &mut Graph, omega: Var, slack: f64, weights: &LossWeights) -> Result<Var> {
    let over = g.add_scalar(omega, -slack);
    let over = g.clamp_min_zero(over);
    let within = g.sub(omega, over)?;
    let linear = g.scale(within, weights.alpha);
    let sq = g.square(over);
    let quad = g.scale(sq, weights.beta);
    let tail = g.scale(over, weights.gamma);
    let b = g.add(linear, quad)?;
    g.add(b, tail)
}

/// Handles to the six aggregation terms.
#[derive(Clone, Copy, Debug)]
pub struct StabilityTerms {
    pub envy_mse: Var,
    pub envy_max: Var,
    pub envy_var: Var,
    pub waste_mse: Var,
    pub waste_max: Var,
    pub waste_var: Var,
    pub envy: Var,
    pub waste: Var,
    pub total: Var,
}

pub fn stability_graph(
    g: &mut Graph,
    envy: Var,
    waste: Var,
    weights: &LossWeights,
) -> Result<StabilityTerms> {
    let aggregate = |g: &mut Graph, x: Var, tau: f64| -> Result<(Var, Var, Var)> {
        let sq = g.square(x);
        let mse = g.mean(sq);
        let max = g.log_sum_exp(x, tau)?;
        let var = g.variance(x)?;
        Ok((mse, max, var))
    };
    let weighted = |g: &mut Graph, terms: [(Var, f64); 3]| -> Result<Var> {
        let mut acc = g.scale(terms[0].0, terms[0].1);
        for (v, w) in &terms[1..] {
            let t = g.scale(*v, *w);
            acc = g.add(acc, t)?;
        }
        Ok(acc)
    };
    let (envy_mse, envy_max, envy_var) = aggregate(g, envy, weights.tau_envy)?;
    let (waste_mse, waste_max, waste_var) = aggregate(g, waste, weights.tau_waste)?;
    let envy_loss = weighted(
        g,
        [
            (envy_mse, weights.envy_mse),
            (envy_max, weights.envy_max),
            (envy_var, weights.envy_var),
        ],
    )?;
    let waste_loss = weighted(
        g,
        [
            (waste_mse, weights.waste_mse),
            (waste_max, weights.waste_max),
            (waste_var, weights.waste_var),
        ],
    )?;
    let total = g.add(envy_loss, waste_loss)?;
    Ok(StabilityTerms {
        envy_mse,
        envy_max,
        envy_var,
        waste_mse,
        waste_max,
        waste_var,
        envy: envy_loss,
        waste: waste_loss,
        total,
    })
}

/// Handles to every term of the composite objective.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub expected_utility: Var,
    pub envy_vector: Var,
    pub waste_vector: Var,
    pub overflow: Var,
    pub welfare: Var,
    pub barrier: Var,
    pub stability: StabilityTerms,
    pub total: Var,
}

/// Builds `λ_w L_welf + λ_c L_capa + λ_s L_stab` on top of an assignment node.
pub fn loss_graph(
    g: &mut Graph,
    p: Var,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
) -> Result<LossTerms> {
    weights.validate()?;
    let vbar = expected_utilities_graph(g, p, inst)?;
    let mean_utility = g.mean(vbar);
    let welfare = g.neg(mean_utility);
    let envy = envy_graph(g, p, vbar, inst, mode)?;
    let waste = waste_graph(g, p, vbar, inst)?;
    let (overflow, _) = overflow_graph(g, p, inst)?;
    let barrier = barrier_graph(g, overflow, inst.slack, weights)?;
    let stability = stability_graph(g, envy, waste, weights)?;
    let a = g.scale(welfare, weights.welfare);
    let b = g.scale(barrier, weights.capacity);
    let c = g.scale(stability.total, weights.stability);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms {
        expected_utility: vbar,
        envy_vector: envy,
        waste_vector: waste,
        overflow,
        welfare,
        barrier,
        stability,
        total,
    })
}

/// Scalar values of every loss term, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub welfare: f64,
    pub barrier: f64,
    pub stability: f64,
    pub envy: f64,
    pub waste: f64,
    pub envy_mse: f64,
    pub envy_max: f64,
    pub envy_var: f64,
    pub waste_mse: f64,
    pub waste_max: f64,
    pub waste_var: f64,
    pub overflow: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 13] = [
        "total",
        "welfare",
        "barrier",
        "stability",
        "envy",
        "waste",
        "envy_mse",
        "envy_max",
        "envy_var",
        "waste_mse",
        "waste_max",
        "waste_var",
        "overflow",
    ];

    pub fn read(g: &Graph, t: &LossTerms) -> Self {
        let v = |x: Var| g.value(x).item();
        LossBreakdown {
            total: v(t.total),
            welfare: v(t.welfare),
            barrier: v(t.barrier),
            stability: v(t.stability.total),
            envy: v(t.stability.envy),
            waste: v(t.stability.waste),
            envy_mse: v(t.stability.envy_mse),
            envy_max: v(t.stability.envy_max),
            envy_var: v(t.stability.envy_var),
            waste_mse: v(t.stability.waste_mse),
            waste_max: v(t.stability.waste_max),
            waste_var: v(t.stability.waste_var),
            overflow: v(t.overflow),
        }
    }

    pub fn values(&self) -> [f64; 13] {
        [
            self.total,
            self.welfare,
            self.barrier,
            self.stability,
            self.envy,
            self.waste,
            self.envy_mse,
            self.envy_max,
            self.envy_var,
            self.waste_mse,
            self.waste_max,
            self.waste_var,
            self.overflow,
        ]
    }

    /// Entry-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut acc = [0.0; 13];
        for b in items {
            for (a, v) in acc.iter_mut().zip(b.values()) {
                *a += v;
            }
        }
        let n = items.len().max(1) as f64;
        let a = acc.map(|x| x / n);
        LossBreakdown {
            total: a[0],
            welfare: a[1],
            barrier: a[2],
            stability: a[3],
            envy: a[4],
            waste: a[5],
            envy_mse: a[6],
            envy_max: a[7],
            envy_var: a[8],
            waste_mse: a[9],
            waste_max: a[10],
            waste_var: a[11],
            overflow: a[12],
        }
    }
}

// ---- plain evaluation -----------------------------------------------------

fn with_assignment<T>(
    p: &AssignmentMatrix,
    build: impl FnOnce(&mut Graph, Var) -> Result<T>,
) -> Result<T> {
    let mut g = Graph::new();
    let pv = g.constant(p.0.clone());
    build(&mut g, pv)
}

fn column(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

pub fn expected_utilities(p: &AssignmentMatrix, inst: &MarketInstance) -> Result<Vec<f64>> {
    with_assignment(p, |g, pv| {
        let v = expected_utilities_graph(g, pv, inst)?;
        Ok(column(g, v))
    })
}

/// Negative mean expected utility.
pub fn welfare_loss(p: &AssignmentMatrix, inst: &MarketInstance) -> Result<f64> {
    let eu = expected_utilities(p, inst)?;
    Ok(-eu.iter().sum::<f64>() / inst.n_students as f64)
}

pub fn envy_vector(
    p: &AssignmentMatrix,
    inst: &MarketInstance,
    mode: PriorityMode,
) -> Result<Vec<f64>> {
    with_assignment(p, |g, pv| {
        let vbar = expected_utilities_graph(g, pv, inst)?;
        let e = envy_graph(g, pv, vbar, inst, mode)?;
        Ok(column(g, e))
    })
}

pub fn waste_vector(p: &AssignmentMatrix, inst: &MarketInstance) -> Result<Vec<f64>> {
    with_assignment(p, |g, pv| {
        let vbar = expected_utilities_graph(g, pv, inst)?;
        let w = waste_graph(g, pv, vbar, inst)?;
        Ok(column(g, w))
    })
}

/// Expected aggregate overflow of an assignment.
pub fn overflow(p: &AssignmentMatrix, inst: &MarketInstance) -> Result<f64> {
    with_assignment(p, |g, pv| {
        let (o, _) = overflow_graph(g, pv, inst)?;
        Ok(g.value(o).item())
    })
}

/// The barrier as a function of `Ω` alone.
pub fn barrier_value(omega: f64, slack: f64, weights: &LossWeights) -> f64 {
    if omega <= slack {
        weights.alpha * omega
    } else {
        let d = omega - slack;
        weights.alpha * slack + weights.beta * d * d + weights.gamma * d
    }
}

pub fn capacity_barrier(
    p: &AssignmentMatrix,
    inst: &MarketInstance,
    weights: &LossWeights,
) -> Result<f64> {
    Ok(barrier_value(overflow(p, inst)?, inst.slack, weights))
}

/// Stability loss of given vectors with its six components.
pub fn stability_loss(envy: &[f64], waste: &[f64], weights: &LossWeights) -> Result<LossBreakdown> {
    if envy.is_empty() || waste.is_empty() {
        return Err(Error::shape("stability_loss", "empty vector"));
    }
    let mut g = Graph::new();
    let e = g.constant(Matrix::column_vector(envy.to_vec()));
    let w = g.constant(Matrix::column_vector(waste.to_vec()));
    let t = stability_graph(&mut g, e, w, weights)?;
    let v = |x: Var| g.value(x).item();
    Ok(LossBreakdown {
        total: v(t.total),
        stability: v(t.total),
        envy: v(t.envy),
        waste: v(t.waste),
        envy_mse: v(t.envy_mse),
        envy_max: v(t.envy_max),
        envy_var: v(t.envy_var),
        waste_mse: v(t.waste_mse),
        waste_max: v(t.waste_max),
        waste_var: v(t.waste_var),
        ..Default::default()
    })
}

pub fn total_loss(
    p: &AssignmentMatrix,
    inst: &MarketInstance,
    weights: &LossWeights,
    mode: PriorityMode,
) -> Result<LossBreakdown> {
    with_assignment(p, |g, pv| {
        let t = loss_graph(g, pv, inst, weights, mode)?;
        Ok(LossBreakdown::read(g, &t))
    })
}

/// Violation found by [`check_random_assignment`].
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibilityViolation {
    /// Row `student` sums to `1 + margin`.
    RowSum { student: usize, margin: f64 },
    /// Entry outside `[0, 1]` by `margin`.
    Entry {
        student: usize,
        school: usize,
        margin: f64,
    },
    /// Expected overflow exceeds the slack by `margin`.
    Overflow { margin: f64 },
}

/// Membership check for the set of feasible random assignments: rows are
/// probability vectors and the expected overflow is within the slack.
pub fn check_random_assignment(
    p: &AssignmentMatrix,
    inst: &MarketInstance,
    tol: f64,
) -> Result<Vec<FeasibilityViolation>> {
    let mut out = Vec::new();
    for (s, total) in p.row_sums().into_iter().enumerate() {
        if (total - 1.0).abs() > tol {
            out.push(FeasibilityViolation::RowSum {
                student: s,
                margin: total - 1.0,
            });
        }
        for (c, &x) in p.row(s).iter().enumerate() {
            let margin = if x < 0.0 { -x } else { x - 1.0 };
            if margin > tol {
                out.push(FeasibilityViolation::Entry {
                    student: s,
                    school: c,
                    margin,
                });
            }
        }
    }
    let omega = overflow(p, inst)?;
    if omega > inst.slack + tol {
        out.push(FeasibilityViolation::Overflow {
            margin: omega - inst.slack,
        });
    }
    Ok(out)
}
