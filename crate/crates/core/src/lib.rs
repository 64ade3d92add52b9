#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Semi-automatic label propagation: t-SNE projections, optimum-path forest
//! propagation with a confidence threshold, and the experiment harness around them.

pub mod archive;
pub mod data;
pub mod error;
pub mod featurize;
pub mod metrics;
pub mod opf;
pub mod pipeline;
pub mod projection;
pub mod split;
pub mod synth;

pub type SampleId = usize;
pub type Label = usize;

pub use data::{load_dataset, Dataset, FeatureMatrix, Manifest, Sample};
pub use error::{Error, ErrorClass, Result};
pub use split::{stratified_split, Split};
