//! Diversity-driven ensembles of LITE time series classifiers.
//!
//! Ensemble members are trained one after another; each new member is
//! pushed, through a feature-orthogonality penalty on its final
//! convolutional feature maps, away from every member trained before it.
//! The crate also carries the evaluation (ensemble accuracy, Wilcoxon
//! signed-rank test, multi-comparison matrix) and diversity analysis
//! (Fréchet distance between feature distributions, DTW between learned
//! filters, classical MDS) needed to study the resulting ensembles.

pub mod container;
pub mod data;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod lite;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Mode, Tensor, Var};
