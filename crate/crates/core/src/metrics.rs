//! Recall@k, NDCG@k and MRR@k with binary relevance, plus run aggregation.

use std::collections::{BTreeMap, HashSet};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::domain::ItemId;
use crate::num::{mean, sample_std};

pub const DEFAULT_CUTS: [usize; 2] = [10, 50];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ranking contains item {0} more than once")]
    DuplicateRanked(ItemId),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("run {run} is missing metric {metric}")]
    MissingMetric { run: usize, metric: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::Ndcg, Metric::Mrr];

    pub fn key(self, k: usize) -> String {
        let name = match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
        };
        format!("{name}@{k}")
    }

    pub fn label(self, k: usize) -> String {
        let name = match self {
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
            Metric::Mrr => "MRR",
        };
        format!("{name}@{k}")
    }
}

/// `metric@k` -> value.
pub type MetricMap<F> = BTreeMap<String, F>;

fn discount<F: Float>(position: usize) -> F {
    // 1-based position i contributes 1 / log2(i + 1).
    F::one() / F::from(position + 1).expect("position fits the float type").log2()
}

/// Metrics for one ranked list against its ground truth at each cut.
pub fn turn_metrics<F: Float>(ranked: &[ItemId], gt: &[ItemId], cuts: &[usize]) -> Result<MetricMap<F>, MetricsError> {
    let mut seen = HashSet::with_capacity(ranked.len());
    if let Some(dup) = ranked.iter().find(|id| !seen.insert(**id)) {
        return Err(MetricsError::DuplicateRanked(*dup));
    }
    let truth: HashSet<ItemId> = gt.iter().copied().collect();
    if truth.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let n_truth = F::from(truth.len()).expect("count fits");
    let hits: Vec<usize> = ranked.iter().enumerate().filter(|(_, id)| truth.contains(id)).map(|(i, _)| i + 1).collect();

    let mut out = MetricMap::new();
    for &k in cuts {
        let within: Vec<usize> = hits.iter().copied().filter(|&p| p <= k).collect();
        let recall = F::from(within.len()).expect("count fits") / n_truth;
        let dcg = within.iter().fold(F::zero(), |acc, &p| acc + discount::<F>(p));
        let idcg = (1..=truth.len().min(k)).fold(F::zero(), |acc, p| acc + discount::<F>(p));
        let ndcg = if idcg > F::zero() { dcg / idcg } else { F::zero() };
        let mrr = within.first().map_or(F::zero(), |&p| F::one() / F::from(p).expect("position fits"));
        out.insert(Metric::Recall.key(k), recall);
        out.insert(Metric::Ndcg.key(k), ndcg);
        out.insert(Metric::Mrr.key(k), mrr);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<F> {
    pub mean: F,
    pub std: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<F> {
    pub runs: usize,
    pub turns_per_run: Vec<usize>,
    /// Mean over runs of the per-run turn average, and its sample std.
    pub metrics: BTreeMap<String, Summary<F>>,
    pub per_run: Vec<MetricMap<F>>,
}

/// Averages turns within each run, then summarizes across runs.
pub fn aggregate<F: Float>(runs: &[Vec<MetricMap<F>>]) -> Result<Report<F>, MetricsError> {
    if runs.is_empty() || runs.iter().any(Vec::is_empty) {
        return Err(MetricsError::EmptyInput);
    }
    let keys: Vec<String> = runs[0][0].keys().cloned().collect();
    let mut per_run = Vec::with_capacity(runs.len());
    for (r, turns) in runs.iter().enumerate() {
        let mut avg = MetricMap::new();
        for key in &keys {
            let values = turns
                .iter()
                .map(|t| t.get(key).copied().ok_or_else(|| MetricsError::MissingMetric { run: r, metric: key.clone() }))
                .collect::<Result<Vec<F>, _>>()?;
            avg.insert(key.clone(), mean(&values).expect("non-empty"));
        }
        per_run.push(avg);
    }
    let metrics = keys
        .iter()
        .map(|key| {
            let values: Vec<F> = per_run.iter().map(|m| m[key]).collect();
            (key.clone(), Summary { mean: mean(&values).expect("non-empty"), std: sample_std(&values) })
        })
        .collect();
    Ok(Report { runs: runs.len(), turns_per_run: runs.iter().map(Vec::len).collect(), metrics, per_run })
}

/// Aligned text table: one row, columns grouped by metric then cut.
pub fn render_table<F: Float + std::fmt::Display>(label: &str, report: &Report<F>, cuts: &[usize]) -> String {
    let mut header = format!("{:<16}", "");
    let mut row = format!("{label:<16}");
    for metric in Metric::ALL {
        for &k in cuts {
            header.push_str(&format!(" {:>16}", metric.label(k)));
            let cell = match report.metrics.get(&metric.key(k)) {
                Some(s) if report.runs > 1 => format!("{:.3}±{:.3}", s.mean, s.std),
                Some(s) => format!("{:.3}", s.mean),
                None => "-".into(),
            };
            row.push_str(&format!(" {cell:>16}"));
        }
    }
    format!("{header}\n{row}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().copied().map(ItemId).collect()
    }

    #[test]
    fn perfect_hit() {
        let m: MetricMap<f64> = turn_metrics(&ids(&[0, 1, 2]), &ids(&[0]), &[10]).unwrap();
        assert_eq!(m["recall@10"], 1.0);
        assert_eq!(m["ndcg@10"], 1.0);
        assert_eq!(m["mrr@10"], 1.0);
    }

    #[test]
    fn second_position() {
        let m: MetricMap<f64> = turn_metrics(&ids(&[9, 0]), &ids(&[0]), &[10]).unwrap();
        assert_eq!(m["recall@10"], 1.0);
        assert!((m["ndcg@10"] - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((m["ndcg@10"] - 0.6309).abs() < 1e-4);
        assert_eq!(m["mrr@10"], 0.5);
    }

    #[test]
    fn misses_and_cutoff() {
        let ranked: Vec<ItemId> = (10..70).map(ItemId).collect();
        let m: MetricMap<f64> = turn_metrics(&ranked, &ids(&[0, 1]), &[10, 50]).unwrap();
        assert!(m.values().all(|v| *v == 0.0));
        let mut ranked: Vec<ItemId> = (10..70).map(ItemId).collect();
        ranked[20] = ItemId(0);
        let m: MetricMap<f32> = turn_metrics(&ranked, &ids(&[0, 1]), &[10, 50]).unwrap();
        assert_eq!(m["recall@10"], 0.0);
        assert_eq!(m["recall@50"], 0.5);
        assert_eq!(m["mrr@50"], 1.0 / 21.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            turn_metrics::<f64>(&ids(&[1, 1]), &ids(&[1]), &[10]),
            Err(MetricsError::DuplicateRanked(ItemId(1)))
        );
        assert_eq!(turn_metrics::<f64>(&ids(&[1]), &[], &[10]), Err(MetricsError::EmptyGroundTruth));
        assert_eq!(aggregate::<f64>(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn aggregation() {
        let t: MetricMap<f64> = turn_metrics(&ids(&[9, 0]), &ids(&[0]), &[10]).unwrap();
        let single = aggregate(&[vec![t.clone()]]).unwrap();
        assert_eq!(single.per_run[0], t);
        assert_eq!(single.metrics["mrr@10"].std, 0.0);
        let three = aggregate(&[vec![t.clone()], vec![t.clone()], vec![t.clone()]]).unwrap();
        assert!(three.metrics.values().all(|s| s.std == 0.0));
        let table = render_table("beam", &three, &[10]);
        assert!(table.contains("Recall@10") && table.contains("beam"));
    }
}
