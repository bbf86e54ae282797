use serde::{Deserialize, Serialize};

/// Halves (by `factor`) the learning rate after `patience` epochs without
/// an improvement larger than `threshold` in the monitored loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        ReduceLrOnPlateau {
            factor,
            patience,
            min_lr,
            threshold: 1e-6,
            lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's loss and returns the learning rate for the next
    /// epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}
