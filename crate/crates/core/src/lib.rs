//! Strategy-proof school choice under a global over-enrollment budget,
//! via learned probabilistic menus.

pub mod autodiff;
pub mod baselines;
mod error;
pub mod evaluation;
pub mod losses;
pub mod market;
pub mod mechanism;
pub mod training;

pub use error::{Error, Result};
