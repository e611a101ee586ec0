//! RF fingerprint extraction for LTE-V2X PSBCH subframes.
//!
//! The crate is a complete simulation chain: PSBCH waveform synthesis,
//! transmitter hardware impairments, a tapped-delay-line fading channel,
//! receiver synchronization and CFO correction, windowed least-squares
//! channel estimation with equalization and denoising, and a random forest
//! device classifier. The [`harness`] module ties the stages into dataset
//! generation and accuracy sweeps.

pub mod channel;
pub mod classifier;
pub mod error;
pub mod extractor;
pub mod harness;
pub mod impairments;
pub mod receiver;
pub mod seed;
pub mod waveform;

mod dft;

pub use error::{Error, Result};
pub use num_complex::Complex64;
