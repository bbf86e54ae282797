use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trainer::{train_base, train_decorrelated, TrainOutcome};
use super::TrainConfig;
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::lite::{LiteConfig, LiteModel};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    /// Independently seeded cross-entropy models.
    Base,
    /// A cross-entropy reference followed by models each decorrelated
    /// against all earlier members.
    #[serde(rename = "deco")]
    Decorrelated,
}

impl EnsembleKind {
    pub fn tag(self) -> &'static str {
        match self {
            EnsembleKind::Base => "base",
            EnsembleKind::Decorrelated => "deco",
        }
    }

    pub fn ensemble_name(self, size: usize) -> String {
        match self {
            EnsembleKind::Base => format!("LITETime-{size}"),
            EnsembleKind::Decorrelated => format!("Deco-LITETime-{size}"),
        }
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(EnsembleKind::Base),
            "deco" | "decorrelated" => Ok(EnsembleKind::Decorrelated),
            other => Err(Error::Usage(format!("unknown ensemble kind {other:?} (expected base or deco)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub seed: u64,
    pub outcome: TrainOutcome,
}

impl Member {
    pub fn model(&self) -> &LiteModel {
        &self.outcome.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset: String,
    pub kind: EnsembleKind,
    pub name: String,
    pub size: usize,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub architecture: LiteConfig,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub metadata: RunMetadata,
}

impl Ensemble {
    pub fn models(&self) -> Vec<&LiteModel> {
        self.members.iter().map(Member::model).collect()
    }
}

/// Trains an ensemble of `seeds.len()` members.
///
/// Base members are independent and train concurrently. Decorrelated
/// members train in order: member 0 on cross-entropy only, member `k` against
/// the frozen members `0..k`. Member `k` is always initialised from
/// `seeds[k]`, so it shares its starting point with the base member of the
/// same position.
pub fn build_ensemble(
    data: &TimeSeriesDataset,
    arch: &LiteConfig,
    cfg: &TrainConfig,
    kind: EnsembleKind,
    seeds: &[u64],
) -> Result<Ensemble> {
    let size = seeds.len();
    if size == 0 {
        return Err(Error::Usage("an ensemble needs at least one seed".into()));
    }
    if !(2..=5).contains(&size) {
        log::warn!("ensemble size {size} is outside the studied range 2..=5");
    }
    cfg.validate()?;
    let start = Instant::now();
    let members = match kind {
        EnsembleKind::Base => {
            let runs = parallel::map_indexed(size, |i| train_base(data, arch, &cfg.with_seed(seeds[i])));
            runs.into_iter()
                .zip(seeds)
                .map(|(r, &seed)| r.map(|outcome| Member { seed, outcome }))
                .collect::<Result<Vec<_>>>()?
        }
        EnsembleKind::Decorrelated => {
            let mut members: Vec<Member> = Vec::with_capacity(size);
            for &seed in seeds {
                let c = cfg.with_seed(seed);
                let outcome = if members.is_empty() {
                    train_base(data, arch, &c)?
                } else {
                    let prev: Vec<&LiteModel> = members.iter().map(Member::model).collect();
                    train_decorrelated(data, arch, &c, &prev)?
                };
                members.push(Member { seed, outcome });
            }
            members
        }
    };
    Ok(Ensemble {
        members,
        metadata: RunMetadata {
            dataset: data.name.clone(),
            kind,
            name: kind.ensemble_name(size),
            size,
            seeds: seeds.to_vec(),
            config: cfg.clone(),
            architecture: arch.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}
