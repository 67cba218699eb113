pub mod channels;
pub mod clifford;
pub mod config;
pub mod error;
pub mod harness;
pub mod rb;
pub mod reuse;
pub mod rng;
pub mod smc;
pub mod spsa;

pub use error::{Error, Result};
