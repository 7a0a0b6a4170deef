//! Sofic approximations, their good models, and covering-number entropies.

pub mod convergence;
pub mod entropy;
pub mod error;
pub mod group;
pub mod rng;
pub mod metric;
pub mod model;
pub mod process;
pub mod sofic;

pub use error::{Error, Result};
pub use group::{GroupElement, GroupSpec, Letter, Window};
pub use sofic::SoficMap;
