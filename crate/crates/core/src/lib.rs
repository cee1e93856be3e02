pub mod augment;
pub mod cli;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod model;
pub mod objectives;
pub mod probe;
pub mod rng;
pub mod signals;
pub mod train;

pub use error::{Error, Result};
