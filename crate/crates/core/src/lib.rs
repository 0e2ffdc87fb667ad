pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
