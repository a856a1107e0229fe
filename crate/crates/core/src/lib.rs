pub mod error;
pub mod fsutil;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tape, Tensor, Var};
pub mod fpg;
pub mod pgm;
pub mod nn;
pub mod params;
pub mod fusion;
pub mod model;
pub mod phantom;
pub mod dataset;
pub mod metrics;
pub mod inference;
pub mod trainer;
