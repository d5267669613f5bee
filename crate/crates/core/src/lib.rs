pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io_util;
pub mod loss;
pub mod net;
pub mod optim;
pub mod rng;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
