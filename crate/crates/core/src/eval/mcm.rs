use serde::{Deserialize, Serialize};

use super::table::ResultsTable;
use super::wilcoxon::{format_p, wilcoxon_signed_rank};
use crate::error::{Error, Result};

const ALPHA: f64 = 0.05;

/// Pairwise comparison of every classifier against every other.
///
/// All matrices are indexed in `classifiers` order, which is by descending
/// mean accuracy. Entry `[a][b]` compares row `a` against row `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmReport {
    pub classifiers: Vec<String>,
    pub n_datasets: usize,
    pub mean_accuracy: Vec<f64>,
    pub mean_diff: Vec<Vec<f64>>,
    pub wins: Vec<Vec<usize>>,
    pub ties: Vec<Vec<usize>>,
    pub losses: Vec<Vec<usize>>,
    pub p_values: Vec<Vec<f64>>,
    pub significant: Vec<Vec<bool>>,
}

/// One line of the plot-ready pairwise CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub classifier_a: String,
    pub classifier_b: String,
    pub mean_diff: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub p_value: f64,
    pub p_display: String,
    pub significant: bool,
}

/// Indices of the rows of `acc` ordered by descending mean (stable).
pub fn rank_by_mean_accuracy(acc: &[Vec<f64>]) -> Vec<usize> {
    let means: Vec<f64> = acc.iter().map(|r| mean(r)).collect();
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    order
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mcm(table: &ResultsTable) -> Result<McmReport> {
    table.validate()?;
    let k = table.classifiers.len();
    if k < 2 {
        return Err(Error::Usage(format!("comparison needs at least two classifiers, got {k}")));
    }
    let n = table.datasets.len();
    if n == 0 {
        return Err(Error::Data("results table has no datasets".into()));
    }
    let order = rank_by_mean_accuracy(&table.acc);
    let rows: Vec<&[f64]> = order.iter().map(|&i| table.acc[i].as_slice()).collect();

    let mut report = McmReport {
        classifiers: order.iter().map(|&i| table.classifiers[i].clone()).collect(),
        n_datasets: n,
        mean_accuracy: rows.iter().map(|r| mean(r)).collect(),
        mean_diff: vec![vec![0.0; k]; k],
        wins: vec![vec![0; k]; k],
        ties: vec![vec![n; k]; k],
        losses: vec![vec![0; k]; k],
        p_values: vec![vec![1.0; k]; k],
        significant: vec![vec![false; k]; k],
    };
    for a in 0..k {
        for b in a + 1..k {
            let diffs: Vec<f64> = rows[a].iter().zip(rows[b]).map(|(x, y)| x - y).collect();
            let md = mean(&diffs);
            let w = rows[a].iter().zip(rows[b]).filter(|(x, y)| x > y).count();
            let l = rows[a].iter().zip(rows[b]).filter(|(x, y)| x < y).count();
            let p = wilcoxon_signed_rank(rows[a], rows[b])?.p_value;
            report.mean_diff[a][b] = md;
            report.mean_diff[b][a] = -md;
            report.wins[a][b] = w;
            report.losses[b][a] = w;
            report.losses[a][b] = l;
            report.wins[b][a] = l;
            report.ties[a][b] = n - w - l;
            report.ties[b][a] = n - w - l;
            report.p_values[a][b] = p;
            report.p_values[b][a] = p;
            report.significant[a][b] = p < ALPHA;
            report.significant[b][a] = p < ALPHA;
        }
    }
    Ok(report)
}

impl McmReport {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classifiers.iter().position(|c| c == name)
    }

    pub fn pairwise_rows(&self) -> Vec<PairwiseRow> {
        let k = self.classifiers.len();
        let mut rows = Vec::with_capacity(k * (k - 1));
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                rows.push(PairwiseRow {
                    classifier_a: self.classifiers[a].clone(),
                    classifier_b: self.classifiers[b].clone(),
                    mean_diff: self.mean_diff[a][b],
                    wins: self.wins[a][b],
                    ties: self.ties[a][b],
                    losses: self.losses[a][b],
                    p_value: self.p_values[a][b],
                    p_display: format_p(self.p_values[a][b]),
                    significant: self.significant[a][b],
                });
            }
        }
        rows
    }

    pub fn pairwise_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.pairwise_rows() {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<f64>>) -> ResultsTable {
        let k = rows.len();
        let n = rows[0].len();
        ResultsTable::new(
            (0..k).map(|i| format!("c{i}")).collect(),
            (0..n).map(|j| format!("d{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn hand_two_by_three() {
        let r = mcm(&table(vec![vec![0.9, 0.8, 0.7], vec![0.8, 0.8, 0.6]])).unwrap();
        assert_eq!(r.classifiers, vec!["c0", "c1"]);
        // (0.1 + 0 + 0.1) / 3
        assert!((r.mean_diff[0][1] - 0.2 / 3.0).abs() < 1e-12);
        assert!((r.mean_diff[0][1] - 0.0667).abs() < 1e-4);
        assert_eq!((r.wins[0][1], r.ties[0][1], r.losses[0][1]), (2, 1, 0));
        assert_eq!((r.wins[1][0], r.ties[1][0], r.losses[1][0]), (0, 1, 2));
    }

    #[test]
    fn identical_rows() {
        let r = mcm(&table(vec![vec![0.5, 0.6], vec![0.5, 0.6]])).unwrap();
        assert_eq!(r.mean_diff[0][1], 0.0);
        assert_eq!(r.ties[0][1], 2);
        assert_eq!(r.p_values[0][1], 1.0);
        assert!(!r.significant[0][1]);
    }

    #[test]
    fn ordered_by_mean_accuracy() {
        let r = mcm(&table(vec![vec![0.1, 0.2], vec![0.9, 0.8], vec![0.5, 0.5]])).unwrap();
        assert_eq!(r.classifiers, vec!["c1", "c2", "c0"]);
    }

    #[test]
    fn single_classifier_rejected() {
        assert!(matches!(mcm(&table(vec![vec![0.5]])), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_and_json_outputs() {
        let r = mcm(&table(vec![vec![0.9, 0.8, 0.7], vec![0.8, 0.8, 0.6]])).unwrap();
        let csv = r.pairwise_csv().unwrap();
        assert!(csv.starts_with("classifier_a,classifier_b,mean_diff,wins,ties,losses,p_value,p_display,significant\n"));
        assert_eq!(csv.lines().count(), 3);
        let back: McmReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
