//! Frozen hand-crafted filters of the first block.
//!
//! Three families of sign-pattern kernels, each with zero mean:
//!
//! * increasing trend, even length `k`: `[-1; k/2] ++ [+1; k/2]`
//! * decreasing trend: the negation of the increasing kernel
//! * peak, length `4m`: `[-1; m] ++ [+1; 2m] ++ [-1; m]`
//!
//! The bank never sees a gradient: its kernels enter the graph as constants.

use serde::{Deserialize, Serialize};

use super::LiteConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    Increasing,
    Decreasing,
    Peak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomFilter {
    pub kind: FilterKind,
    pub kernel: Vec<f64>,
}

/// Filters grouped by length, so each group runs as one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomFilterBank {
    groups: Vec<(usize, Vec<CustomFilter>)>,
}

pub fn increasing(k: usize) -> Result<Vec<f64>> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(Error::Config(format!("trend filter length {k} must be even and positive")));
    }
    let mut v = vec![-1.0; k / 2];
    v.extend(std::iter::repeat_n(1.0, k / 2));
    Ok(v)
}

pub fn decreasing(k: usize) -> Result<Vec<f64>> {
    Ok(increasing(k)?.into_iter().map(|v| -v).collect())
}

pub fn peak(k: usize) -> Result<Vec<f64>> {
    if k == 0 || !k.is_multiple_of(4) {
        return Err(Error::Config(format!("peak filter length {k} must be a positive multiple of 4")));
    }
    let m = k / 4;
    let mut v = vec![-1.0; m];
    v.extend(std::iter::repeat_n(1.0, 2 * m));
    v.extend(std::iter::repeat_n(-1.0, m));
    Ok(v)
}

impl CustomFilterBank {
    pub fn build(config: &LiteConfig) -> Result<Self> {
        let mut all: Vec<CustomFilter> = Vec::new();
        for &k in &config.increasing_lengths {
            all.push(CustomFilter {
                kind: FilterKind::Increasing,
                kernel: increasing(k)?,
            });
        }
        for &k in &config.decreasing_lengths {
            all.push(CustomFilter {
                kind: FilterKind::Decreasing,
                kernel: decreasing(k)?,
            });
        }
        for &k in &config.peak_lengths {
            all.push(CustomFilter {
                kind: FilterKind::Peak,
                kernel: peak(k)?,
            });
        }
        let mut lengths: Vec<usize> = all.iter().map(|f| f.kernel.len()).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let groups = lengths
            .into_iter()
            .map(|len| {
                let members = all.iter().filter(|f| f.kernel.len() == len).cloned().collect();
                (len, members)
            })
            .collect();
        Ok(CustomFilterBank { groups })
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Filters in output-channel order: ascending length, then
    /// increasing/decreasing/peak within a length.
    pub fn filters(&self) -> impl Iterator<Item = &CustomFilter> {
        self.groups.iter().flat_map(|(_, g)| g.iter())
    }

    /// One `[n, 1, len]` kernel tensor per distinct length.
    pub fn kernels(&self) -> Vec<Tensor> {
        self.groups
            .iter()
            .map(|(len, g)| {
                let data = g.iter().flat_map(|f| f.kernel.iter().copied()).collect();
                Tensor::new(&[g.len(), 1, *len], data).expect("consistent group")
            })
            .collect()
    }
}
