use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LiteConfig, LiteModel};
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};

const KIND: &str = "lite-checkpoint";

#[derive(Serialize, Deserialize)]
struct Header {
    config: LiteConfig,
    n_classes: usize,
    seed: u64,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl LiteModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (header, arrays) = self.parts();
        let refs: Vec<&[f64]> = arrays.iter().map(|a| a.as_slice()).collect();
        container::encode(KIND, &header, &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, arrays) = container::decode(bytes, KIND)?;
        Self::from_parts(header, arrays)
    }

    fn parts(&self) -> (Header, Vec<Vec<f64>>) {
        let params = self.params();
        let header = Header {
            config: self.config.clone(),
            n_classes: self.n_classes,
            seed: self.seed,
            names: self.param_names(),
            shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        };
        let mut arrays: Vec<Vec<f64>> = params.iter().map(|t| t.data().to_vec()).collect();
        for bn in &self.bn {
            arrays.push(bn.running.mean.clone());
            arrays.push(bn.running.var.clone());
        }
        (header, arrays)
    }

    fn from_parts(header: Header, arrays: Vec<Vec<f64>>) -> Result<Self> {
        let mut model = LiteModel::init(&header.config, header.n_classes, header.seed)?;
        let n_params = model.params().len();
        if header.names != model.param_names() || arrays.len() != n_params + 6 {
            return Err(Error::Format("checkpoint layout does not match its config".into()));
        }
        let mut it = arrays.into_iter();
        for (slot, shape) in model.params_mut().into_iter().zip(&header.shapes) {
            let data = it.next().expect("length checked");
            let t = Tensor::new(shape, data)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor shape {:?} differs from model {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        for bn in model.bn.iter_mut() {
            let mean = it.next().expect("length checked");
            let var = it.next().expect("length checked");
            if mean.len() != bn.gamma.len() || var.len() != bn.gamma.len() {
                return Err(Error::Format("running statistics have the wrong width".into()));
            }
            bn.running = RunningStats { mean, var };
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &LiteModel, path: &Path) -> Result<()> {
    let (header, arrays) = model.parts();
    let refs: Vec<&[f64]> = arrays.iter().map(|a| a.as_slice()).collect();
    container::write(path, KIND, &header, &refs)
}

pub fn load_checkpoint(path: &Path) -> Result<LiteModel> {
    let (header, arrays) = container::read(path, KIND)?;
    LiteModel::from_parts(header, arrays)
}
