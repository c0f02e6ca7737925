pub mod circuits;
pub mod data;
pub mod error;
pub mod explain;
pub mod models;
pub mod optimize;
pub mod qsim;
pub mod spectra;

pub use error::{Error, Result};
