pub mod actuation;
pub mod analysis;
pub mod compensator;
pub mod config;
pub mod disturbance;
pub mod error;
pub mod gru;
pub mod rng;
pub mod run;
pub mod sim;

pub use error::{Error, Result};
