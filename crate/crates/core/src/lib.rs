//! Multi-centroid memory contrastive training for unsupervised domain-adaptive
//! retrieval.
//!
//! The pipeline alternates two steps per epoch. Preparation encodes both
//! domains, clusters the unlabelled target domain into pseudo classes and
//! rebuilds the [`memory::CentroidBank`] with `K` centroids per class.
//! Optimization draws P×K mini-batches from both domains, scores each query
//! against reliable centroids (plus interpolated hard negatives for target
//! queries), backpropagates into the [`encoder::Encoder`] and finally folds the
//! queries back into their matched centroids.

pub mod assignment;
pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod datasim;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod memory;
pub mod numerics;
pub mod sweep;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use numerics::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}
