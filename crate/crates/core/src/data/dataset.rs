use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STD_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_tag(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Test => "TEST",
        }
    }
}

/// Bijection between original label strings and class indices `0..C`,
/// ordered by numeric value when every label is numeric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Vec<String>,
}

/// Canonical spelling of a label: integral numbers lose their fractional
/// part so "1", "1.0" and "1.0000000e+00" coincide.
pub(crate) fn canonical_label(raw: &str) -> String {
    let raw = raw.trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        _ => raw.to_string(),
    }
}

impl LabelMap {
    pub fn from_labels<S: AsRef<str>>(raw: &[S]) -> Self {
        let mut labels: Vec<String> = raw.iter().map(|s| canonical_label(s.as_ref())).collect();
        labels.sort_unstable();
        labels.dedup();
        let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
        if let Some(vals) = numeric {
            let mut pairs: Vec<(f64, String)> = vals.into_iter().zip(labels).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            labels = pairs.into_iter().map(|(_, l)| l).collect();
        }
        LabelMap { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        let c = canonical_label(raw);
        self.labels.iter().position(|l| *l == c)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn as_map(&self) -> BTreeMap<String, usize> {
        self.labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect()
    }
}

/// A z-normalised univariate dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub split: Split,
    /// `[N, 1, T]`.
    pub x: Tensor,
    pub y: Vec<usize>,
    /// One-hot `[N, C]`.
    pub y_onehot: Tensor,
    pub label_map: LabelMap,
}

impl TimeSeriesDataset {
    /// Builds a dataset from already preprocessed equal-length series.
    pub fn from_series(
        name: &str,
        split: Split,
        series: Vec<Vec<f64>>,
        y: Vec<usize>,
        label_map: LabelMap,
    ) -> Result<Self> {
        let n = series.len();
        if n == 0 {
            return Err(Error::Data(format!("{name}: empty {split:?} split")));
        }
        if y.len() != n {
            return Err(Error::Data(format!("{name}: {n} series but {} labels", y.len())));
        }
        let t = series[0].len();
        if t == 0 || series.iter().any(|s| s.len() != t) {
            return Err(Error::Data(format!("{name}: series must share one non-zero length")));
        }
        let c = label_map.len();
        if let Some(bad) = y.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("{name}: class index {bad} outside 0..{c}")));
        }
        let x = Tensor::new(&[n, 1, t], series.concat())?;
        x.ensure_finite("dataset series")
            .map_err(|_| Error::Data(format!("{name}: non-finite values after ingestion")))?;
        let mut onehot = vec![0.0; n * c];
        for (i, &l) in y.iter().enumerate() {
            onehot[i * c + l] = 1.0;
        }
        Ok(TimeSeriesDataset {
            name: name.to_string(),
            split,
            x,
            y,
            y_onehot: Tensor::new(&[n, c], onehot)?,
            label_map,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn series(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }
}

/// `(x - mean) / std` with the population standard deviation. Constant
/// series map to zeros.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_GUARD {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - mean) / std).collect()
}

/// Fills NaN gaps by linear interpolation (leading/trailing gaps take the
/// nearest observed value).
pub(crate) fn interpolate_nan(series: &[f64]) -> Result<Vec<f64>> {
    let known: Vec<usize> = (0..series.len()).filter(|&i| !series[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Err(Error::Data("series contains no observed values".into()));
    };
    let mut out = series.to_vec();
    out[..first].fill(series[first]);
    out[last + 1..].fill(series[last]);
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *slot = series[a] + frac * (series[b] - series[a]);
        }
    }
    Ok(out)
}

/// Interpolates missing values, z-normalises, then right-pads with zeros
/// to `target_len` (the longest train series).
pub fn handle_irregular(series_set: &[Vec<f64>], target_len: usize) -> Result<Vec<Vec<f64>>> {
    series_set
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.len() > target_len {
                return Err(Error::Data(format!(
                    "series {i} has length {} beyond the train maximum {target_len}",
                    s.len()
                )));
            }
            let filled = interpolate_nan(s).map_err(|e| Error::Data(format!("series {i}: {e}")))?;
            let mut z = z_normalize(&filled);
            z.resize(target_len, 0.0);
            Ok(z)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    name: String,
    split: Split,
    n: usize,
    t: usize,
    y: Vec<usize>,
    label_map: LabelMap,
}

const CACHE_KIND: &str = "dataset-cache";

/// Persists a normalised dataset (checksummed container).
pub fn write_cache(path: &Path, ds: &TimeSeriesDataset) -> Result<()> {
    let header = CacheHeader {
        name: ds.name.clone(),
        split: ds.split,
        n: ds.len(),
        t: ds.series_len(),
        y: ds.y.clone(),
        label_map: ds.label_map.clone(),
    };
    container::write(path, CACHE_KIND, &header, &[ds.x.data()])
}

pub fn read_cache(path: &Path) -> Result<TimeSeriesDataset> {
    let (h, mut arrays): (CacheHeader, _) = container::read(path, CACHE_KIND)?;
    let data = arrays.pop().ok_or_else(|| Error::Format("dataset cache has no payload".into()))?;
    if data.len() != h.n * h.t {
        return Err(Error::Format("dataset cache payload size mismatch".into()));
    }
    let series = data.chunks(h.t).map(<[f64]>::to_vec).collect();
    TimeSeriesDataset::from_series(&h.name, h.split, series, h.y, h.label_map)
}
