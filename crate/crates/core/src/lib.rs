pub mod error;
pub mod evaluation;
pub mod market;
pub mod method_one;
pub mod method_two;
pub mod nn;
pub mod oracles;
pub mod policy;
pub mod rng;
pub mod samples;

pub use error::{Error, Result};
