//! Sensitivity analysis of statistical functionals along the tangent space of a model.

pub mod education;
pub mod error;
pub mod estimation;
pub mod expr;
pub mod field;
pub mod functional;
pub mod gmm;
pub mod grid;
pub mod model_space;
pub mod sensitivity;
pub mod surface;
pub mod tangent;

pub use error::{Error, Result};
