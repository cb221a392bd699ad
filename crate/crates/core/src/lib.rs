//! Heterogeneous stochastic finite elements for elliptic problems with
//! random coefficients.

pub mod artifact;
pub mod correct;
pub mod detsolver;
pub mod error;
pub mod field;
pub mod klbaseline;
pub mod mesh;
pub mod offline;
pub mod online;
pub mod rangefinder;
pub mod sparse;
pub mod stochastic;

pub use error::{HsfemError, Result};
