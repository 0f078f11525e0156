pub mod attacks;
pub mod bitvec;
pub mod cost;
pub mod error;
pub mod fl;
pub mod harness;
pub mod rns;
pub mod seed;
pub mod shuffle;
pub mod stats;

pub use error::{Error, Result};
