//! Mechanism-versus-mechanism tables and the two headline comparisons.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_error, mean_and_se, EvaluationReport, MENUNET, NUMERIC_METRICS};
use crate::error::{Error, Result};

/// Mean ± standard error of one metric for one mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mechanism: String,
    pub metric: String,
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

/// `candidate − reference` on one metric over a shared instance set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub candidate: String,
    pub reference: String,
    pub metric: String,
    pub candidate_mean: f64,
    pub reference_mean: f64,
    pub difference: f64,
    /// Standard error of the per-instance differences.
    pub paired_se: f64,
    /// `sqrt(se_a² + se_b²)`, ignoring the pairing.
    pub unpaired_se: f64,
}

impl PairedDifference {
    /// The candidate is lower by more than two standard errors, using the
    /// larger of the paired and unpaired estimates.
    pub fn significantly_lower(&self) -> bool {
        -self.difference > 2.0 * self.paired_se.max(self.unpaired_se)
    }
}

/// Per-instance difference of a metric between two mechanisms.
pub fn paired_difference(
    report: &EvaluationReport,
    candidate: &str,
    reference: &str,
    metric: &str,
) -> Result<PairedDifference> {
    if !NUMERIC_METRICS.contains(&metric) {
        return Err(Error::Config(format!("unknown metric `{metric}`")));
    }
    let a: Vec<_> = report.rows_of(candidate).collect();
    let b: Vec<_> = report.rows_of(reference).collect();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(format!(
            "no rows for `{candidate}` or `{reference}`"
        )));
    }
    let key = |r: &&super::MetricRow| (r.instance, r.seed);
    let mut a_keys: Vec<_> = a.iter().map(key).collect();
    let mut b_keys: Vec<_> = b.iter().map(key).collect();
    a_keys.sort_unstable();
    b_keys.sort_unstable();
    if a_keys != b_keys {
        return Err(Error::Config(format!(
            "`{candidate}` and `{reference}` were evaluated on different instances"
        )));
    }
    let value = |r: &super::MetricRow| r.metric(metric).expect("numeric metric");
    let mut diffs = Vec::with_capacity(a.len());
    for ra in &a {
        let rb = b
            .iter()
            .find(|rb| key(rb) == key(ra))
            .expect("same key set");
        diffs.push(value(ra) - value(rb));
    }
    let (ma, sa) = mean_and_se(&a.iter().map(|r| value(r)).collect::<Vec<_>>());
    let (mb, sb) = mean_and_se(&b.iter().map(|r| value(r)).collect::<Vec<_>>());
    let (diff, paired_se) = mean_and_se(&diffs);
    Ok(PairedDifference {
        candidate: candidate.to_string(),
        reference: reference.to_string(),
        metric: metric.to_string(),
        candidate_mean: ma,
        reference_mean: mb,
        difference: diff,
        paired_se,
        unpaired_se: (sa * sa + sb * sb).sqrt(),
    })
}

/// Envy of the learned mechanism against RSD and waste against DA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub envy_vs_rsd: PairedDifference,
    pub waste_vs_da: PairedDifference,
    pub lower_envy_than_rsd: bool,
    pub lower_waste_than_da: bool,
}

/// Every pairwise difference from the first mechanism plus the headline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub summaries: Vec<MetricSummary>,
    pub differences: Vec<PairedDifference>,
    pub headline: Option<Headline>,
}

/// Compares every mechanism in `report` against every other on every
/// metric. The headline is filled when MenuNet, RSD and DA are all present.
pub fn compare(report: &EvaluationReport) -> Result<Comparison> {
    let mechs = report.mechanisms();
    let mut differences = Vec::new();
    for (i, a) in mechs.iter().enumerate() {
        for b in &mechs[i + 1..] {
            for metric in NUMERIC_METRICS {
                differences.push(paired_difference(report, a, b, metric)?);
            }
        }
    }
    let has = |m: &str| mechs.iter().any(|x| x == m);
    let headline = if has(MENUNET) && has("RSD") && has("DA") {
        let envy = paired_difference(report, MENUNET, "RSD", "envy_mean")?;
        let waste = paired_difference(report, MENUNET, "DA", "waste_mean")?;
        Some(Headline {
            lower_envy_than_rsd: envy.significantly_lower(),
            lower_waste_than_da: waste.significantly_lower(),
            envy_vs_rsd: envy,
            waste_vs_da: waste,
        })
    } else {
        None
    };
    Ok(Comparison {
        summaries: report.summaries(),
        differences,
        headline,
    })
}

impl Comparison {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for d in &self.differences {
            w.serialize(d).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Human-readable table of means ± standard errors.
    pub fn render(&self) -> String {
        let mut mechs: Vec<&str> = Vec::new();
        for s in &self.summaries {
            if !mechs.contains(&s.mechanism.as_str()) {
                mechs.push(&s.mechanism);
            }
        }
        let mut out = format!("{:<12}", "metric");
        for m in &mechs {
            out.push_str(&format!("{m:>24}"));
        }
        out.push('\n');
        for metric in NUMERIC_METRICS {
            out.push_str(&format!("{metric:<12}"));
            for m in &mechs {
                let s = self
                    .summaries
                    .iter()
                    .find(|s| s.mechanism == *m && s.metric == metric);
                match s {
                    Some(s) => out.push_str(&format!(
                        "{:>24}",
                        format!("{:.5} ± {:.5}", s.mean, s.std_error)
                    )),
                    None => out.push_str(&format!("{:>24}", "-")),
                }
            }
            out.push('\n');
        }
        if let Some(h) = &self.headline {
            out.push_str(&format!(
                "envy  {} vs RSD: {:+.5} (se {:.5}) {}\n",
                MENUNET,
                h.envy_vs_rsd.difference,
                h.envy_vs_rsd.paired_se.max(h.envy_vs_rsd.unpaired_se),
                if h.lower_envy_than_rsd {
                    "lower"
                } else {
                    "not significantly lower"
                }
            ));
            out.push_str(&format!(
                "waste {} vs DA:  {:+.5} (se {:.5}) {}\n",
                MENUNET,
                h.waste_vs_da.difference,
                h.waste_vs_da.paired_se.max(h.waste_vs_da.unpaired_se),
                if h.lower_waste_than_da {
                    "lower"
                } else {
                    "not significantly lower"
                }
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::MetricRow;

    fn row(mech: &str, instance: usize, envy: f64, waste: f64) -> MetricRow {
        MetricRow {
            mechanism: mech.into(),
            instance,
            seed: instance as u64,
            envy_mean: envy,
            envy_mse: envy * envy,
            envy_max: envy,
            envy_var: 0.0,
            waste_mean: waste,
            waste_mse: waste * waste,
            waste_max: waste,
            waste_var: 0.0,
            welfare: 0.5,
            overflow: 1.0,
            slack: 5.0,
            barrier: 0.0,
        }
    }

    #[test]
    fn self_comparison_has_zero_difference() {
        let mut rows: Vec<MetricRow> = (0..6).map(|i| row("A", i, 0.1 * i as f64, 0.2)).collect();
        rows.extend((0..6).map(|i| row("B", i, 0.1 * i as f64, 0.2)));
        let report = EvaluationReport::new(rows);
        for metric in NUMERIC_METRICS {
            let d = paired_difference(&report, "A", "B", metric).unwrap();
            assert_eq!(d.difference, 0.0);
            assert_eq!(d.paired_se, 0.0);
            assert!(!d.significantly_lower());
        }
    }

    #[test]
    fn headline_flags() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let jitter = 0.001 * (i % 3) as f64;
            rows.push(row(MENUNET, i, 0.01 + jitter, 0.05 + jitter));
            rows.push(row("RSD", i, 0.04 + jitter, 0.0));
            rows.push(row("DA", i, 0.0, 0.02 + jitter));
        }
        let c = compare(&EvaluationReport::new(rows)).unwrap();
        let h = c.headline.unwrap();
        assert!(h.lower_envy_than_rsd);
        assert!(!h.lower_waste_than_da);
        assert!((h.envy_vs_rsd.difference + 0.03).abs() < 1e-12);
        assert_eq!(c.differences.len(), 3 * NUMERIC_METRICS.len());
    }

    #[test]
    fn mismatched_instances_rejected() {
        let rows = vec![row("A", 0, 0.1, 0.1), row("B", 1, 0.1, 0.1)];
        assert!(paired_difference(&EvaluationReport::new(rows), "A", "B", "envy_mean").is_err());
    }

    #[test]
    fn render_mentions_every_mechanism() {
        let rows = vec![row("A", 0, 0.1, 0.1), row("B", 0, 0.2, 0.1)];
        let text = compare(&EvaluationReport::new(rows)).unwrap().render();
        assert!(text.contains('A') && text.contains('B') && text.contains("waste_max"));
    }
}
