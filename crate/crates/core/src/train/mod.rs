//! Cross-entropy training of base models and sequential decorrelated
//! training against frozen predecessors.

mod ensemble;
mod loss;
mod schedule;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::AdamConfig;

pub use ensemble::{build_ensemble, Ensemble, EnsembleKind, Member, RunMetadata};
pub use loss::{
    orthogonality_loss, orthogonality_loss_value, sequential_orth_loss, total_loss, OrthNormalization, OrthOptions,
};
pub use schedule::ReduceLrOnPlateau;
pub use trainer::{train_base, train_decorrelated, TrainOutcome};

/// Which parameters a training run hands back as its result.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    /// Parameters after the epoch with the lowest mean training loss.
    #[default]
    BestTrainLoss,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of cross-entropy against the orthogonality term.
    pub alpha: f64,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both the parameter init and the per-epoch shuffles.
    pub seed: u64,
    pub orth_normalization: OrthNormalization,
    pub include_diagonal: bool,
    pub checkpoint_policy: CheckpointPolicy,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lr: 0.001,
            plateau_factor: 0.5,
            plateau_patience: 50,
            min_lr: 1e-4,
            epochs: 1500,
            batch_size: 64,
            seed: 0,
            orth_normalization: OrthNormalization::MeanOffDiag,
            include_diagonal: false,
            checkpoint_policy: CheckpointPolicy::BestTrainLoss,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        loss::check_alpha(self.alpha)?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.min_lr.is_nan() || self.min_lr <= 0.0 {
            return bad(format!("min_lr must be positive, got {}", self.min_lr));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }

    pub fn orth_options(&self) -> OrthOptions {
        OrthOptions {
            normalization: self.orth_normalization,
            include_diagonal: self.include_diagonal,
            ..OrthOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce_loss: f64,
    pub orth_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
    pub seconds: f64,
}

/// One record per completed epoch, in epoch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
    /// Number of frozen predecessors the orthogonality term averaged over.
    pub n_previous: usize,
}

impl TrainLog {
    pub fn new(n_previous: usize) -> Self {
        TrainLog {
            records: Vec::new(),
            n_previous,
        }
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::State(format!(
                    "epoch {} logged after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        if self.records.is_empty() {
            w.write_record(["epoch", "lr", "ce_loss", "orth_loss", "total_loss", "train_acc", "seconds"])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, n_previous: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut log = TrainLog::new(n_previous);
        for rec in r.deserialize() {
            log.push(rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?)?;
        }
        Ok(log)
    }
}
