use serde::{Deserialize, Serialize};

use super::dtw::dtw;
use crate::error::{Error, Result};
use crate::lite::LiteModel;
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLabel {
    pub model: usize,
    pub filter: usize,
}

impl FilterLabel {
    pub fn name(&self) -> String {
        format!("m{}f{}", self.model, self.filter)
    }
}

/// Pairwise DTW costs between final depthwise filters of several models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDistanceMatrix {
    pub labels: Vec<FilterLabel>,
    /// Row-major `n x n`, symmetric with a zero diagonal.
    pub d: Vec<f64>,
}

impl FilterDistanceMatrix {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n() + j]
    }

    /// Builds a matrix from arbitrary labelled series.
    pub fn from_series(labels: Vec<FilterLabel>, series: &[Vec<f64>]) -> Result<Self> {
        let n = series.len();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} series", labels.len())));
        }
        let rows: Vec<Result<Vec<f64>>> = parallel::map_indexed(n, |i| {
            (i + 1..n).map(|j| dtw(&series[i], &series[j])).collect()
        });
        let mut d = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row?.into_iter().enumerate() {
                let j = i + 1 + off;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(FilterDistanceMatrix { labels, d })
    }

    /// CSV with a label header row and a leading label column.
    pub fn to_csv(&self) -> Result<String> {
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().map(FilterLabel::name));
        w.write_record(&header).map_err(fmt)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut rec = vec![l.name()];
            rec.extend((0..self.n()).map(|j| self.get(i, j).to_string()));
            w.write_record(&rec).map_err(fmt)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// DTW between every pair of final-layer filters across `models`
/// (`channels * models.len()` filters in model order).
pub fn filter_distance_matrix(models: &[&LiteModel]) -> Result<FilterDistanceMatrix> {
    if models.is_empty() {
        return Err(Error::Usage("no models given".into()));
    }
    let banks: Vec<_> = models.iter().map(|m| m.extract_final_filters()).collect();
    let (c, k) = (banks[0].channels, banks[0].kernel_len);
    if banks.iter().any(|b| b.channels != c || b.kernel_len != k) {
        return Err(Error::Config("models have different final filter shapes".into()));
    }
    let mut labels = Vec::with_capacity(c * models.len());
    let mut series = Vec::with_capacity(c * models.len());
    for (m, bank) in banks.iter().enumerate() {
        for f in 0..c {
            labels.push(FilterLabel { model: m, filter: f });
            series.push(bank.filters.row(f).to_vec());
        }
    }
    FilterDistanceMatrix::from_series(labels, &series)
}
