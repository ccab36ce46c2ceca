pub mod error;
pub mod glotrain;
pub mod invert;
pub mod io;
pub mod ndiff;
pub mod parallel;
pub mod priors;
pub mod reanimate;
pub mod sprites;
pub mod stylegen;

pub use error::{Error, Result};
