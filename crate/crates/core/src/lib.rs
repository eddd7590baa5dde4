//! Photoacoustic limited-view toolkit.
//!
//! Synthetic branching phantoms, a matrix-free linear-array forward model,
//! delay-and-sum beamforming (modulated and demodulated), FISTA deconvolution,
//! image-quality metrics, similarity registration, paired-dataset generation
//! and uncertainty-map aggregation.
//!
//! In-memory arithmetic is `f64`; everything written to disk goes through
//! [`tensorio`] as little-endian `f32`.

pub mod acoustics;
pub mod beamform;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod invert;
pub mod metrics;
pub mod operator;
pub mod phantom;
pub mod preview;
pub mod register;
pub mod tensorio;
pub mod uncertainty;

pub use error::{Error, Result};
pub use grid::{Grid, Image};
