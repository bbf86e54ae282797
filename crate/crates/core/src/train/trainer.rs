use std::time::Instant;

use super::loss::{sequential_orth_loss, total_loss};
use super::schedule::ReduceLrOnPlateau;
use super::{CheckpointPolicy, EpochRecord, TrainConfig, TrainLog};
use crate::data::{batches, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::lite::{LiteConfig, LiteModel};
use crate::tensor::{adam_step, AdamState, Graph, Mode};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint selected by the config's policy.
    pub model: LiteModel,
    /// Parameters after the final epoch.
    pub last: LiteModel,
    pub log: TrainLog,
    pub best_epoch: usize,
    /// Checksum of the parameters before the first update.
    pub init_checksum: u64,
}

/// Trains one model on cross-entropy alone.
pub fn train_base(data: &TimeSeriesDataset, arch: &LiteConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(data, arch, cfg, &[])
}

/// Trains one model on `alpha * CE + (1 - alpha) * orth`, where the
/// orthogonality term is averaged over the features of every model in
/// `previous`. Predecessors are only read.
pub fn train_decorrelated(
    data: &TimeSeriesDataset,
    arch: &LiteConfig,
    cfg: &TrainConfig,
    previous: &[&LiteModel],
) -> Result<TrainOutcome> {
    if previous.is_empty() {
        return Err(Error::Usage("decorrelated training needs at least one previous model".into()));
    }
    run(data, arch, cfg, previous)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(detail) => Error::Divergence { epoch, detail },
        other => other,
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn run(data: &TimeSeriesDataset, arch: &LiteConfig, cfg: &TrainConfig, previous: &[&LiteModel]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.x.shape()[1] != 1 {
        return Err(Error::Data("training expects univariate series".into()));
    }
    let mut model = LiteModel::init(arch, data.n_classes(), cfg.seed)?;
    let init_checksum = model.checksum();
    for p in previous {
        if p.n_classes() != model.n_classes() {
            return Err(Error::Config(format!(
                "previous model has {} classes, dataset has {}",
                p.n_classes(),
                model.n_classes()
            )));
        }
    }
    let orth_opts = cfg.orth_options();
    let n = data.len();
    let k = data.n_classes();
    let mut adam = AdamState::new();
    let mut sched = ReduceLrOnPlateau::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut log = TrainLog::new(previous.len());
    let mut best: Option<(f64, usize, LiteModel)> = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = sched.lr();
        let (mut ce_sum, mut orth_sum, mut total_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for idx in batches(n, cfg.batch_size, cfg.seed, epoch)? {
            let xb = data.x.select_rows(&idx)?;
            let yb = data.y_onehot.select_rows(&idx)?;
            let mut g = Graph::new();
            let xv = g.constant(xb.clone())?;
            let out = model.forward(&mut g, xv, Mode::Train, true).map_err(diverged(epoch))?;
            let ce = g.softmax_cross_entropy(out.logits, &yb).map_err(diverged(epoch))?;
            let (loss, orth) = if previous.is_empty() {
                (ce, None)
            } else {
                let new_shape = g.value(out.features).shape().to_vec();
                let mut prev_vars = Vec::with_capacity(previous.len());
                for p in previous {
                    let (_, f) = p.infer(&xb)?;
                    if f.shape() != new_shape.as_slice() {
                        return Err(Error::Config(format!(
                            "previous model features {:?} differ from new model features {new_shape:?}",
                            f.shape()
                        )));
                    }
                    prev_vars.push(g.constant(f)?);
                }
                let orth = sequential_orth_loss(&mut g, out.features, &prev_vars, &orth_opts)?;
                (total_loss(&mut g, ce, orth, cfg.alpha)?, Some(orth))
            };
            let total = g.value(loss).item()?;
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss {total}"),
                });
            }
            let bsz = idx.len() as f64;
            ce_sum += g.value(ce).item()? * bsz;
            orth_sum += orth.map_or(Ok(0.0), |o| g.value(o).item())? * bsz;
            total_sum += total * bsz;
            let logits = g.value(out.logits).data();
            for (row, &i) in logits.chunks(k).zip(&idx) {
                if argmax(row) == data.y[i] {
                    correct += 1;
                }
            }
            g.backward(loss)?;
            let grads: Vec<Option<&[f64]>> = out.params.iter().map(|&p| g.grad(p)).collect();
            adam_step(&mut model.params_mut(), &grads, &mut adam, lr, &cfg.adam)?;
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            lr,
            ce_loss: ce_sum / nf,
            orth_loss: orth_sum / nf,
            total_loss: total_sum / nf,
            train_acc: correct as f64 / nf,
            seconds: start.elapsed().as_secs_f64(),
        };
        let epoch_loss = record.total_loss;
        log.push(record)?;
        if best.as_ref().is_none_or(|(l, _, _)| epoch_loss < *l) {
            best = Some((epoch_loss, epoch, model.clone()));
        }
        sched.step(epoch_loss);
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    let (chosen, chosen_epoch) = match cfg.checkpoint_policy {
        CheckpointPolicy::BestTrainLoss => (best_model, best_epoch),
        CheckpointPolicy::LastEpoch => (model.clone(), cfg.epochs - 1),
    };
    Ok(TrainOutcome {
        model: chosen,
        last: model,
        log,
        best_epoch: chosen_epoch,
        init_checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    fn tiny() -> (TimeSeriesDataset, LiteConfig, TrainConfig) {
        let (train, _) = synthetic::two_class_pair(12, 4, 16, 1).unwrap();
        let arch = LiteConfig {
            n_filters: 4,
            first_layer_filters_per_kernel: 2,
            first_layer_kernel_sizes: vec![6, 3],
            dwsc_kernel_sizes: [4, 4],
            increasing_lengths: vec![2, 4],
            decreasing_lengths: vec![2, 4],
            peak_lengths: vec![4],
            ..LiteConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        (train, arch, cfg)
    }

    #[test]
    fn base_log_shape() {
        let (d, a, c) = tiny();
        let out = train_base(&d, &a, &c).unwrap();
        assert_eq!(out.log.records().len(), 3);
        assert!(out.log.records().iter().all(|r| r.orth_loss == 0.0 && r.ce_loss == r.total_loss));
        assert_eq!(out.log.n_previous, 0);
    }

    #[test]
    fn decorrelated_needs_predecessors() {
        let (d, a, c) = tiny();
        assert!(matches!(train_decorrelated(&d, &a, &c, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn mismatched_predecessor_features() {
        let (d, a, c) = tiny();
        let other = LiteConfig { n_filters: 6, ..a.clone() };
        let prev = LiteModel::init(&other, 2, 0).unwrap();
        assert!(matches!(train_decorrelated(&d, &a, &c, &[&prev]), Err(Error::Config(_))));
    }

    #[test]
    fn last_epoch_policy() {
        let (d, a, c) = tiny();
        let c = TrainConfig {
            checkpoint_policy: CheckpointPolicy::LastEpoch,
            ..c
        };
        let out = train_base(&d, &a, &c).unwrap();
        assert_eq!(out.model, out.last);
        assert_eq!(out.best_epoch, 2);
    }

    #[test]
    fn huge_lr_diverges_with_epoch() {
        let (d, a, c) = tiny();
        let c = TrainConfig {
            lr: 1e300,
            epochs: 20,
            ..c
        };
        match train_base(&d, &a, &c) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch < 20),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
