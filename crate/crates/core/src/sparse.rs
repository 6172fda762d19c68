//! Equal-interval view subsampling.

use ndarray::{Axis, s};

use crate::error::{Error, Result};
use crate::geometry::ProjectionStack;

/// Keeps the views whose index is a multiple of `factor`.
///
/// The factor must divide the view count; a remainder would leave the kept
/// views unevenly spaced around the orbit.
pub fn sparse_sample(stack: &ProjectionStack, factor: usize) -> Result<ProjectionStack> {
    let n = stack.n_views();
    if factor == 0 || n % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "sparse factor {factor} does not divide {n} views"
        )));
    }
    if factor == 1 {
        return Ok(stack.clone());
    }
    let angles = stack
        .geometry()
        .angles()
        .iter()
        .step_by(factor)
        .copied()
        .collect();
    let geometry = stack.geometry().with_angles(angles)?;
    let data = stack.data().slice(s![..;factor, .., ..]).to_owned();
    debug_assert_eq!(data.len_of(Axis(0)), n / factor);
    ProjectionStack::new(geometry, data)
}
