//! Energy-based models for semi-supervised learning.

pub mod crf;
pub mod data;
pub mod diffcore;
pub mod ebm;
pub mod error;
pub mod nce;
pub mod pipelines;
pub mod potentials;
pub mod samplers;

pub use error::{Error, Result};
