use std::path::{Path, PathBuf};

use super::dataset::{handle_irregular, LabelMap, Split, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Environment variable consulted when no data root is given explicitly.
pub const DATA_ROOT_ENV: &str = "DECO_DATA_ROOT";

/// One split as it appears on disk: raw label strings and raw values
/// (missing values are NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplit {
    pub labels: Vec<String>,
    pub series: Vec<Vec<f64>>,
}

pub fn resolve_data_root(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Error::Usage(format!("no data root given and {DATA_ROOT_ENV} is unset"))),
    }
}

pub fn split_path(root: &Path, name: &str, split: Split) -> PathBuf {
    root.join(name).join(format!("{name}_{}.tsv", split.file_tag()))
}

fn parse_value(tok: &str) -> Option<f64> {
    let tok = tok.trim();
    if tok.is_empty() || tok.eq_ignore_ascii_case("nan") || tok == "?" {
        return Some(f64::NAN);
    }
    tok.parse().ok()
}

/// Parses UCR text: one series per line, label first, values separated by
/// tabs (commas are also accepted). With `variable_length` set, trailing
/// NaN padding is stripped and rows may differ in length.
pub fn parse_ucr(text: &str, variable_length: bool) -> Result<RawSplit> {
    let mut labels = Vec::new();
    let mut series = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split(['\t', ',']);
        let label = toks.next().unwrap_or_default().trim().to_string();
        let mut values = Vec::new();
        for tok in toks {
            let v = parse_value(tok).ok_or_else(|| {
                Error::Format(format!("line {}: cannot parse value {tok:?}", lineno + 1))
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Format(format!("line {}: no values after the label", lineno + 1)));
        }
        if variable_length {
            while values.last().is_some_and(|v| v.is_nan()) {
                values.pop();
            }
        } else {
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::Format(format!(
                        "line {}: {} values where earlier rows have {w}",
                        lineno + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
        }
        labels.push(label);
        series.push(values);
    }
    if series.is_empty() {
        return Err(Error::Format("file contains no series".into()));
    }
    Ok(RawSplit { labels, series })
}

pub fn load_ucr_split(root: &Path, name: &str, split: Split, variable_length: bool) -> Result<RawSplit> {
    let path = split_path(root, name, split);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_ucr(&text, variable_length).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Full ingestion of a train/test pair: a label map built from the train
/// split, NaN interpolation, per-series z-normalisation and zero padding to
/// the longest train series.
pub fn load_dataset(
    root: &Path,
    name: &str,
    variable_length: bool,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let train = load_ucr_split(root, name, Split::Train, variable_length)?;
    let test = load_ucr_split(root, name, Split::Test, variable_length)?;
    build_pair(name, train, test)
}

pub(crate) fn build_pair(
    name: &str,
    train: RawSplit,
    test: RawSplit,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let map = LabelMap::from_labels(&train.labels);
    let index = |labels: &[String], split: &str| -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                map.index_of(l).ok_or_else(|| {
                    Error::Data(format!("{name}: {split} label {l:?} never occurs in the train split"))
                })
            })
            .collect()
    };
    let y_train = index(&train.labels, "train")?;
    let y_test = index(&test.labels, "test")?;
    let max_len = train.series.iter().map(Vec::len).max().unwrap_or(0);
    let x_train = handle_irregular(&train.series, max_len).map_err(|e| Error::Data(format!("{name} train: {e}")))?;
    let x_test = handle_irregular(&test.series, max_len).map_err(|e| Error::Data(format!("{name} test: {e}")))?;
    Ok((
        TimeSeriesDataset::from_series(name, Split::Train, x_train, y_train, map.clone())?,
        TimeSeriesDataset::from_series(name, Split::Test, x_test, y_test, map)?,
    ))
}
