//! UCR-archive ingestion, per-series z-normalisation and batching.

mod batches;
mod dataset;
pub mod synthetic;
mod ucr;

pub use batches::batches;
pub use dataset::{handle_irregular, read_cache, write_cache, z_normalize, LabelMap, Split, TimeSeriesDataset};
pub use ucr::{load_dataset, load_ucr_split, resolve_data_root, RawSplit, DATA_ROOT_ENV};
