//! Ensemble inference, accuracy and pairwise classifier comparison.

mod mcm;
mod table;
mod wilcoxon;

pub use mcm::{mcm, rank_by_mean_accuracy, McmReport, PairwiseRow};
pub use table::ResultsTable;
pub use wilcoxon::{
    format_p, wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N, P_FLOOR,
};

use crate::error::{Error, Result};
use crate::lite::LiteModel;
use crate::parallel;
use crate::tensor::Tensor;

/// Cellwise mean of equally shaped probability tables.
///
/// The values of each cell are summed in sorted order, so the result does
/// not depend on the order of `probs`.
pub fn average_probabilities(probs: &[Tensor]) -> Result<Tensor> {
    let Some(first) = probs.first() else {
        return Err(Error::Usage("nothing to average".into()));
    };
    if let Some(bad) = probs.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::Config(format!(
            "probability tables {:?} and {:?} differ in shape",
            first.shape(),
            bad.shape()
        )));
    }
    let m = probs.len() as f64;
    let mut cell = Vec::with_capacity(probs.len());
    let data = (0..first.len())
        .map(|i| {
            cell.clear();
            cell.extend(probs.iter().map(|p| p.data()[i]));
            cell.sort_by(f64::total_cmp);
            cell.iter().sum::<f64>() / m
        })
        .collect();
    Tensor::new(first.shape(), data)
}

/// Mean of the members' softmax outputs, `[N, classes]`.
pub fn ensemble_predict(models: &[&LiteModel], x: &Tensor) -> Result<Tensor> {
    let Some(first) = models.first() else {
        return Err(Error::Usage("ensemble has no members".into()));
    };
    if models.iter().any(|m| m.n_classes() != first.n_classes()) {
        return Err(Error::Config("ensemble members disagree on the number of classes".into()));
    }
    let probs = parallel::map_indexed(models.len(), |i| models[i].predict_proba(x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    average_probabilities(&probs)
}

/// Row-wise argmax of a `[N, classes]` table; ties go to the lowest index.
pub fn predict_classes(proba: &Tensor) -> Vec<usize> {
    let k = proba.shape().last().copied().unwrap_or(1);
    proba
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Usage("accuracy of an empty prediction set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}
