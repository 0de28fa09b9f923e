//! Training-free test-time adaptation of volumetric scans by low-frequency
//! Fourier amplitude swapping.
//!
//! A target slice keeps its phase but takes the low-frequency amplitudes of
//! a source-domain "style donor" slice. Donors are ranked with SR-SIM, and
//! predictions over several donors are averaged (multi-source transfer).
//! The crate also carries the evaluation harness: surface Dice, beta grid
//! search, a classical baseline predictor and synthetic multi-domain
//! phantoms.

pub mod beta_search;
pub mod donors;
pub mod error;
pub mod evaluate;
pub mod metrics;
mod nifti;
pub mod phantom;
pub mod predictor;
pub mod spectrum;
pub mod srsim;
pub mod transfer;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use spectrum::Plane;
pub use volume::{load_volume, save_volume, ScanCollection, Volume, VolumeKind};
