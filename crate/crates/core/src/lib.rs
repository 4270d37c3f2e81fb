//! Class-conditional sound generation through a learned discrete
//! time-frequency representation: log-mel front end, vector-quantized
//! autoencoder, autoregressive prior over code indices, and diversity and
//! quality metrics for generated sets.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod index_grid;
pub mod dsp;
pub mod geneval;
pub mod par;
pub mod pipeline;
pub mod prior;
pub mod rng;
pub mod vqvae;

pub use error::{Error, Result};
