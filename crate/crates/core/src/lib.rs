pub mod error;
pub mod model;
pub mod numeric;
pub mod spectral;
pub mod dde;
pub mod continuation;
pub mod diagram;
pub mod cli;

pub use error::{Error, Result};
pub use model::ModelParams;
