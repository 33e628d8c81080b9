//! Diffusion-augmented negative sampling for implicit-feedback recommenders.

pub mod adar;
mod binio;
pub mod data;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod export;
pub mod numkit;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
