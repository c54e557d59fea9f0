//! Partial domain adaptation on feature vectors.
//!
//! A source classifier whose weights act as class prototypes is trained on a
//! labeled source set, then frozen. An encoder and an ensemble of target
//! classifiers are adapted to an unlabeled target set whose classes are a
//! subset of the source classes.

pub mod adaptation;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod source_trainer;

pub use error::{PdaError, Result};
