pub mod asclt;
pub mod bias;
pub mod bounds;
pub mod error;
pub mod figure;
pub mod model;
pub mod montecarlo;
pub mod poisson;
pub mod quadrature;
pub mod scheme;
pub mod steps;

pub use error::{Error, Result};
