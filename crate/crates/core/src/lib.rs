pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod fsutil;
pub mod infer;
pub mod events;
pub mod loss;
pub mod run;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
