//! Model-point grouping of insurance portfolios.
//!
//! A portfolio of term life or defined contribution contracts is replaced by a few
//! model points whose aggregate policy-value paths match the original. Model points
//! are found by gradient descent on the inputs of a frozen neural surrogate of the
//! exact valuation, starting from K-means centroids.

pub mod actuarial;
pub mod clustering;
pub mod error;
pub mod grouping;
pub mod neural;
pub mod portfolio;
pub mod sobol;
pub mod stats;
pub mod surrogate;

pub use error::{Error, Result};
