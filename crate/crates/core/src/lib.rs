pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod markov;
pub mod math;
pub mod predict;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
