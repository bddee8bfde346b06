//! Self-supervised cross-modal food embeddings.
//!
//! Pipeline: load (or synthesize) multimodal interaction trials, extract
//! MFCC audio and proprioceptive features, reduce with PCA, mine triplets
//! by nearest neighbors in feature space, train an embedding network with
//! a triplet loss, and evaluate the embeddings on material-property
//! prediction tasks.

pub mod audiofeat;
pub mod datamodel;
pub mod embedtrain;
pub mod error;
pub mod evalharness;
pub mod features;
pub mod synthgen;
pub mod tripletmine;

pub use error::{Error, Result};
