//! Lightweight cone-beam CT pipeline.
//!
//! The acquisition side simulates projections ([`simulate`]), keeps every
//! N-th view ([`sparse`]) and compresses each view with a truncated SVD
//! ([`svd`]). Compressed scans travel to a compute server ([`transport`])
//! that restores the projections and reconstructs them with FDK ([`fdk`]).
//! [`metrics`] scores image quality and data reduction and [`pipeline`]
//! wires the stages together from a config file.

pub mod error;
pub mod fdk;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod simulate;
pub mod sparse;
pub mod svd;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{
    make_circular_geometry, Phantom, Primitive, ProjectionStack, ScanGeometry, Shape, Volume,
    VolumeDims,
};
