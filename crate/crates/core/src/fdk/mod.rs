//! FDK cone-beam reconstruction on the virtual detector: cosine weighting,
//! row-wise ramp filtering, then distance-weighted backprojection.

mod backproject;
mod filter;
mod weight;

pub use backproject::{backproject, FdkWeight};
pub use filter::{ramp_filter, ramp_filter_with, FilterWindow, Padding, RampFilter};
pub use weight::weight;

use crate::error::Result;
use crate::geometry::{ProjectionStack, Volume, VolumeDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FdkOptions {
    pub filter: RampFilter,
    pub weight: FdkWeight,
}

/// `weight → ramp_filter → backproject`.
pub fn reconstruct(
    stack: &ProjectionStack,
    dims: VolumeDims,
    voxel_pitch: f64,
    options: &FdkOptions,
) -> Result<Volume> {
    dims.validate()?;
    let weighted = weight(stack);
    let filtered = ramp_filter_with(&weighted, &options.filter);
    backproject(&filtered, dims, voxel_pitch, options.weight)
}
