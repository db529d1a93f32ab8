//! Multi-scale convolutional networks for pixel-wise labeling.
//!
//! The crate covers a small tensor engine with hand-written gradients
//! ([`tensor`], [`nn`]), the pyramid-based multi-scale network
//! ([`multiscale`]), training objective and optimizer ([`optim`]), the named
//! architectures ([`zoo`]), data handling ([`data`]), the scene and
//! component training pipelines ([`pipeline`]) and evaluation ([`eval`]).

pub mod classes;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod multiscale;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
