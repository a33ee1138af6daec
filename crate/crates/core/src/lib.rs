//! Variable-density Noisier2Noise and SSDU self-supervised k-space
//! reconstruction at desk scale.

pub mod config;
pub mod correction;
pub mod error;
pub mod experiment;
pub mod kspace;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
pub use num_complex::Complex64;
