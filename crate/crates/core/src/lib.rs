//! Importance tempering toolkit.
//!
//! Tempered and weighted exponential losses, gradient-descent training of
//! homogeneous predictors, a cost-sensitive hard-margin SVM oracle, the
//! unconstrained layer-peeled model, and closed-form analytics for the
//! core/spurious feature model.

pub mod datagen;
pub mod error;
pub mod layer_peeled;
pub mod losses;
mod numeric;
pub mod spurious;
pub mod svm;
pub mod trainer;

pub use error::{Error, Result};
