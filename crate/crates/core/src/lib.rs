//! Degrees-of-freedom laboratory.
//!
//! Fitting procedures (linear smoothers, splines, monotone splines, best
//! subset, lasso, regression trees, MARS) together with analytic, Monte
//! Carlo and search-cost decompositions of their degrees of freedom.

pub mod adaptive;
pub mod criteria;
pub mod data;
pub mod empirical;
pub mod error;
pub mod linear;
pub mod mars;
pub mod splines;
pub mod tree;

pub use data::{DataSet, DfEstimate, FitOutput, SmootherMatrix};
pub use empirical::{DfExperiment, Procedure};
pub use error::{DfError, Result};
