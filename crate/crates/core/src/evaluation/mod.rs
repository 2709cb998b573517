//! Metrics, strategy-proofness audits and mechanism comparisons.

mod audit;
mod compare;
mod plots;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{evaluate_baseline, Mechanism};
use crate::error::{Error, Result};
use crate::losses::{barrier_value, expected_utilities, overflow, InstabilityProfile, LossWeights};
use crate::market::MarketInstance;
use crate::mechanism::{assign, generate_menus, AssignmentMatrix, MenuNetwork, NetworkMetadata};
use crate::training::map_instances;

pub use audit::{
    adjacent_swap_identity, audit_set, menu_invariance_violations, sample_misreport, sp_audit,
    AuditSummary, MisreportKind,
};
pub use compare::{
    compare, paired_difference, Comparison, Headline, MetricSummary, PairedDifference,
};
pub use plots::{bar_chart_svg, overflow_histogram_svg, write_plots};

/// Tag used for the learned mechanism in reports.
pub const MENUNET: &str = "MenuNet";

/// Frozen column order of `metrics.csv`.
pub const METRIC_COLUMNS: [&str; 15] = [
    "mechanism",
    "instance",
    "seed",
    "envy_mean",
    "envy_mse",
    "envy_max",
    "envy_var",
    "waste_mean",
    "waste_mse",
    "waste_max",
    "waste_var",
    "welfare",
    "overflow",
    "slack",
    "barrier",
];

/// Numeric metrics, in column order, that get aggregated.
pub const NUMERIC_METRICS: [&str; 11] = [
    "envy_mean",
    "envy_mse",
    "envy_max",
    "envy_var",
    "waste_mean",
    "waste_mse",
    "waste_max",
    "waste_var",
    "welfare",
    "overflow",
    "barrier",
];

/// Hard-mode metrics of one mechanism on one instance. `welfare` is the
/// mean expected utility (higher is better).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mechanism: String,
    pub instance: usize,
    pub seed: u64,
    pub envy_mean: f64,
    pub envy_mse: f64,
    pub envy_max: f64,
    pub envy_var: f64,
    pub waste_mean: f64,
    pub waste_mse: f64,
    pub waste_max: f64,
    pub waste_var: f64,
    pub welfare: f64,
    pub overflow: f64,
    pub slack: f64,
    pub barrier: f64,
}

impl MetricRow {
    pub fn from_assignment(
        mechanism: &str,
        index: usize,
        p: &AssignmentMatrix,
        inst: &MarketInstance,
        weights: &LossWeights,
    ) -> Result<Self> {
        let profile = InstabilityProfile::measure(p, inst, weights)?;
        let eu = expected_utilities(p, inst)?;
        let omega = overflow(p, inst)?;
        let (e, w) = (profile.envy_stats, profile.waste_stats);
        Ok(MetricRow {
            mechanism: mechanism.to_string(),
            instance: index,
            seed: inst.seed,
            envy_mean: e.mean,
            envy_mse: e.mse,
            envy_max: e.max,
            envy_var: e.var,
            waste_mean: w.mean,
            waste_mse: w.mse,
            waste_max: w.max,
            waste_var: w.var,
            welfare: eu.iter().sum::<f64>() / eu.len().max(1) as f64,
            overflow: omega,
            slack: inst.slack,
            barrier: barrier_value(omega, inst.slack, weights),
        })
    }

    /// Value of a numeric metric by column name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "envy_mean" => self.envy_mean,
            "envy_mse" => self.envy_mse,
            "envy_max" => self.envy_max,
            "envy_var" => self.envy_var,
            "waste_mean" => self.waste_mean,
            "waste_mse" => self.waste_mse,
            "waste_max" => self.waste_max,
            "waste_var" => self.waste_var,
            "welfare" => self.welfare,
            "overflow" => self.overflow,
            "slack" => self.slack,
            "barrier" => self.barrier,
            _ => return None,
        })
    }
}

/// Overflow behaviour of one mechanism across a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverflowSummary {
    pub mechanism: String,
    pub mean: f64,
    pub max: f64,
    /// Share of instances with Ω > K.
    pub above_slack: f64,
    /// Share of instances with Ω ≤ 1.05 K.
    pub within_tolerance: f64,
}

/// Per-instance rows of any number of mechanisms plus an optional audit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
    pub audit: Option<AuditSummary>,
}

/// Sample mean and standard error (n − 1 denominator; 0 for a single value).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl EvaluationReport {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        EvaluationReport { rows, audit: None }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends the rows of another report; the audit is kept if present.
    pub fn merge(&mut self, other: EvaluationReport) {
        self.rows.extend(other.rows);
        if other.audit.is_some() {
            self.audit = other.audit;
        }
    }

    /// Mechanism tags in first-appearance order.
    pub fn mechanisms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.mechanism) {
                out.push(r.mechanism.clone());
            }
        }
        out
    }

    pub fn rows_of<'a>(&'a self, mechanism: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.mechanism == mechanism)
    }

    pub fn values(&self, mechanism: &str, metric: &str) -> Vec<f64> {
        self.rows_of(mechanism)
            .filter_map(|r| r.metric(metric))
            .collect()
    }

    /// Mean ± standard error of every numeric metric per mechanism.
    pub fn summaries(&self) -> Vec<MetricSummary> {
        let mut out = Vec::new();
        for mech in self.mechanisms() {
            for metric in NUMERIC_METRICS {
                let xs = self.values(&mech, metric);
                let (mean, std_error) = mean_and_se(&xs);
                out.push(MetricSummary {
                    mechanism: mech.clone(),
                    metric: metric.to_string(),
                    mean,
                    std_error,
                    count: xs.len(),
                });
            }
        }
        out
    }

    pub fn overflow_summary(&self, mechanism: &str) -> Option<OverflowSummary> {
        let rows: Vec<&MetricRow> = self.rows_of(mechanism).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let share =
            |f: &dyn Fn(&MetricRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        Some(OverflowSummary {
            mechanism: mechanism.to_string(),
            mean: rows.iter().map(|r| r.overflow).sum::<f64>() / n,
            max: rows
                .iter()
                .map(|r| r.overflow)
                .fold(f64::NEG_INFINITY, f64::max),
            above_slack: share(&|r| r.overflow > r.slack),
            within_tolerance: share(&|r| r.overflow <= 1.05 * r.slack),
        })
    }

    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            w.write_record(METRIC_COLUMNS).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
        let header: Vec<String> = r
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(str::to_string)
            .collect();
        if header != METRIC_COLUMNS {
            return Err(Error::Format(format!(
                "unexpected metrics header {header:?}"
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricRow>, _>>()
            .map_err(csv_error)?;
        Ok(EvaluationReport::new(rows))
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        let summaries = self.summaries();
        for s in &summaries {
            w.serialize(s).map_err(csv_error)?;
        }
        if summaries.is_empty() {
            w.write_record(["mechanism", "metric", "mean", "std_error", "count"])
                .map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Fails unless the network was trained on markets of this instance's size.
pub fn check_trained_shape(meta: &NetworkMetadata, inst: &MarketInstance) -> Result<()> {
    let want = (meta.n_students, meta.n_schools);
    let ok =
        want.0.is_none_or(|n| n == inst.n_students) && want.1.is_none_or(|m| m == inst.n_schools);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            "evaluate",
            format!(
                "network trained on n={:?}, m={:?}; instance has n={}, m={}",
                want.0, want.1, inst.n_students, inst.n_schools
            ),
        ))
    }
}

/// One forward pass per test instance: menus → assignment → hard metrics.
pub fn evaluate_menunet(
    net: &MenuNetwork,
    test: &[MarketInstance],
    weights: &LossWeights,
) -> Result<EvaluationReport> {
    if let Some(first) = test.first() {
        if let Some(bad) = test
            .iter()
            .find(|i| (i.n_students, i.n_schools) != (first.n_students, first.n_schools))
        {
            return Err(Error::shape(
                "evaluate",
                format!(
                    "mixed market sizes: {}×{} and {}×{}",
                    first.n_students, first.n_schools, bad.n_students, bad.n_schools
                ),
            ));
        }
    }
    let indexed: Vec<&MarketInstance> = test.iter().collect();
    let assignments = map_instances(&indexed, |inst| assign(&generate_menus(net, inst)?, inst))?;
    let rows = assignments
        .iter()
        .zip(test)
        .enumerate()
        .map(|(i, (p, inst))| MetricRow::from_assignment(MENUNET, i, p, inst, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::new(rows))
}

/// Seed of the baseline draws on test instance `index`.
pub fn baseline_seed(master_seed: u64, inst: &MarketInstance) -> u64 {
    master_seed ^ inst.seed.rotate_left(17)
}

/// Empirical marginals of `draws` baseline runs per instance.
pub fn evaluate_baseline_set(
    mechanism: Mechanism,
    test: &[MarketInstance],
    draws: usize,
    master_seed: u64,
    weights: &LossWeights,
) -> Result<EvaluationReport> {
    let indexed: Vec<&MarketInstance> = test.iter().collect();
    let assignments = map_instances(&indexed, |inst| {
        evaluate_baseline(
            mechanism,
            inst,
            draws,
            baseline_seed(master_seed, inst),
            weights,
        )
        .map(|(p, _)| p)
    })?;
    let rows = assignments
        .iter()
        .zip(test)
        .enumerate()
        .map(|(i, (p, inst))| MetricRow::from_assignment(mechanism.tag(), i, p, inst, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::losses::{envy_vector, waste_vector, PriorityMode};
    use crate::market::{generate_split, GenerationConfig, Split};

    fn hand_instance() -> MarketInstance {
        MarketInstance {
            n_students: 3,
            n_schools: 2,
            utilities: Matrix::from_rows(&[
                vec![0.0, 0.9, 0.4],
                vec![0.0, 0.6, 0.8],
                vec![0.0, 0.7, 0.2],
            ])
            .unwrap(),
            priorities: Matrix::from_rows(&[
                vec![0.0, 0.3, 0.9],
                vec![0.0, 0.8, 0.1],
                vec![0.0, 0.5, 0.5],
            ])
            .unwrap(),
            capacities: vec![1, 1],
            slack: 0.5,
            seed: 4,
        }
    }

    #[test]
    fn empty_test_set_gives_empty_report() {
        let net = MenuNetwork::new(8, 0);
        let report = evaluate_menunet(&net, &[], &LossWeights::default()).unwrap();
        assert!(report.is_empty());
        assert!(report.summaries().is_empty());
    }

    #[test]
    fn row_matches_loss_oracles_on_hand_instance() {
        let inst = hand_instance();
        let p = AssignmentMatrix(
            Matrix::from_rows(&[
                vec![0.2, 0.5, 0.3],
                vec![0.1, 0.3, 0.6],
                vec![0.4, 0.4, 0.2],
            ])
            .unwrap(),
        );
        let w = LossWeights::default();
        let row = MetricRow::from_assignment("X", 0, &p, &inst, &w).unwrap();
        let envy = envy_vector(&p, &inst, PriorityMode::Hard).unwrap();
        let waste = waste_vector(&p, &inst).unwrap();
        assert!((row.envy_mean - envy.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!((row.waste_max - waste.iter().copied().fold(0.0, f64::max)).abs() < 1e-15);
        // loads 1.2 and 1.1 → Ω = 0.3
        assert!((row.overflow - 0.3).abs() < 1e-12);
        let eu = (0.5 * 0.9 + 0.3 * 0.4 + 0.3 * 0.6 + 0.6 * 0.8 + 0.4 * 0.7 + 0.2 * 0.2) / 3.0;
        assert!((row.welfare - eu).abs() < 1e-15);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let cfg = GenerationConfig {
            n_students: 12,
            n_schools: 3,
            top_k_acceptable: 2,
            ..Default::default()
        };
        let test = generate_split(&cfg, 2, Split::Test, 5).unwrap();
        let report =
            evaluate_menunet(&MenuNetwork::new(8, 1), &test, &LossWeights::default()).unwrap();
        for s in report.summaries() {
            let xs = report.values(&s.mechanism, &s.metric);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((s.mean - mean).abs() < 1e-12);
            assert_eq!(s.count, 5);
        }
    }

    #[test]
    fn mixed_sizes_rejected() {
        let small = GenerationConfig {
            n_students: 10,
            n_schools: 2,
            top_k_acceptable: 2,
            ..Default::default()
        };
        let big = GenerationConfig {
            n_students: 12,
            ..small.clone()
        };
        let mut test = generate_split(&small, 0, Split::Test, 1).unwrap();
        test.extend(generate_split(&big, 0, Split::Test, 1).unwrap());
        assert!(evaluate_menunet(&MenuNetwork::new(8, 0), &test, &LossWeights::default()).is_err());
    }

    #[test]
    fn trained_shape_check() {
        let net = MenuNetwork::new(8, 0);
        let meta = net
            .to_checkpoint(Some(3), Some(2), serde_json::Value::Null)
            .metadata;
        assert!(check_trained_shape(&meta, &hand_instance()).is_ok());
        let other = net
            .to_checkpoint(Some(4), Some(2), serde_json::Value::Null)
            .metadata;
        assert!(check_trained_shape(&other, &hand_instance()).is_err());
    }

    #[test]
    fn standard_error_of_known_sample() {
        let (mean, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn overflow_summary_fractions() {
        let mut rows = Vec::new();
        for (i, omega) in [1.0, 5.0, 5.2, 6.0].into_iter().enumerate() {
            let p = AssignmentMatrix(Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap());
            let mut r = MetricRow::from_assignment(
                "X",
                i,
                &p,
                &hand_instance_one(),
                &LossWeights::default(),
            )
            .unwrap();
            r.overflow = omega;
            r.slack = 5.0;
            rows.push(r);
        }
        let s = EvaluationReport::new(rows).overflow_summary("X").unwrap();
        assert_eq!(s.above_slack, 0.5);
        assert_eq!(s.within_tolerance, 0.75);
        assert_eq!(s.max, 6.0);
    }

    fn hand_instance_one() -> MarketInstance {
        MarketInstance {
            n_students: 1,
            n_schools: 2,
            utilities: Matrix::from_rows(&[vec![0.0, 0.5, 0.2]]).unwrap(),
            priorities: Matrix::from_rows(&[vec![0.0, 1.0, 1.0]]).unwrap(),
            capacities: vec![1, 1],
            slack: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("menunet-eval-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let inst = hand_instance();
        let report =
            evaluate_menunet(&MenuNetwork::new(8, 3), &[inst], &LossWeights::default()).unwrap();
        let path = dir.join("metrics.csv");
        report.write_metrics_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRIC_COLUMNS.join(","));
        let back = EvaluationReport::read_metrics_csv(&path).unwrap();
        assert_eq!(back.rows, report.rows);
        std::fs::remove_dir_all(dir).ok();
    }
}
