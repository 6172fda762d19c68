//! Synthetic acquisition: voxelized phantoms and exact analytic cone-beam
//! line integrals.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Phantom, ProjectionStack, ScanGeometry, Shape, Volume, VolumeDims};

/// Samples the phantom at every voxel center.
pub fn voxelize(phantom: &Phantom, dims: VolumeDims, pitch: f64) -> Result<Volume> {
    dims.validate()?;
    let data = Array3::from_shape_fn((dims.nz, dims.ny, dims.nx), |(iz, iy, ix)| {
        phantom.density_at(dims.voxel_center(pitch, ix, iy, iz)) as f32
    });
    Volume::new(pitch, data)
}

/// Source position and unit direction of the ray hitting virtual-detector
/// point `(a, b)` at view angle `beta`.
pub(crate) fn ray(geometry: &ScanGeometry, beta: f64, a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let r = geometry.source_to_axis();
    let (sin, cos) = beta.sin_cos();
    let source = [-r * cos, -r * sin, 0.0];
    let target = [-a * sin, a * cos, b];
    let mut dir = [target[0] - source[0], target[1] - source[1], target[2] - source[2]];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    for d in &mut dir {
        *d /= norm;
    }
    (source, dir)
}

/// Length of the intersection of the line `origin + t·dir` (unit `dir`)
/// with a primitive.
pub fn chord_length(shape: &Shape, origin: [f64; 3], dir: [f64; 3]) -> f64 {
    match *shape {
        Shape::Sphere { center, radius } => {
            let w = sub(origin, center);
            let proj = dot(w, dir);
            let dist2 = dot(w, w) - proj * proj;
            let h2 = radius * radius - dist2;
            if h2 > 0.0 {
                2.0 * h2.sqrt()
            } else {
                0.0
            }
        }
        Shape::Box { center, half_extents } => {
            let mut t_lo = f64::NEG_INFINITY;
            let mut t_hi = f64::INFINITY;
            for i in 0..3 {
                let lo = center[i] - half_extents[i] - origin[i];
                let hi = center[i] + half_extents[i] - origin[i];
                if dir[i] == 0.0 {
                    if lo > 0.0 || hi < 0.0 {
                        return 0.0;
                    }
                    continue;
                }
                let (t0, t1) = (lo / dir[i], hi / dir[i]);
                t_lo = t_lo.max(t0.min(t1));
                t_hi = t_hi.min(t0.max(t1));
            }
            (t_hi - t_lo).max(0.0)
        }
        Shape::Cylinder {
            center,
            radius,
            half_height,
        } => {
            let wx = origin[0] - center[0];
            let wy = origin[1] - center[1];
            let qa = dir[0] * dir[0] + dir[1] * dir[1];
            let (mut t_lo, mut t_hi) = if qa == 0.0 {
                if wx * wx + wy * wy > radius * radius {
                    return 0.0;
                }
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                let qb = wx * dir[0] + wy * dir[1];
                let qc = wx * wx + wy * wy - radius * radius;
                let disc = qb * qb - qa * qc;
                if disc <= 0.0 {
                    return 0.0;
                }
                let s = disc.sqrt();
                ((-qb - s) / qa, (-qb + s) / qa)
            };
            let lo = center[2] - half_height - origin[2];
            let hi = center[2] + half_height - origin[2];
            if dir[2] == 0.0 {
                if lo > 0.0 || hi < 0.0 {
                    return 0.0;
                }
            } else {
                let (t0, t1) = (lo / dir[2], hi / dir[2]);
                t_lo = t_lo.max(t0.min(t1));
                t_hi = t_hi.min(t0.max(t1));
            }
            (t_hi - t_lo).max(0.0)
        }
    }
}

/// Exact line integrals of the phantom for every detector pixel center.
pub fn forward_project(phantom: &Phantom, geometry: &ScanGeometry) -> ProjectionStack {
    let (rows, cols) = (geometry.rows(), geometry.cols());
    let mut data = Array3::<f32>::zeros((geometry.n_views(), rows, cols));
    data.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(rows * cols)
        .zip(geometry.angles().par_iter())
        .for_each(|(view, &beta)| {
            for row in 0..rows {
                let b = geometry.detector_b(row);
                for col in 0..cols {
                    let (origin, dir) = ray(geometry, beta, geometry.detector_a(col), b);
                    let value: f64 = phantom
                        .primitives
                        .iter()
                        .map(|p| p.density * chord_length(&p.shape, origin, dir))
                        .sum();
                    view[row * cols + col] = value as f32;
                }
            }
        });
    ProjectionStack::new(geometry.clone(), data).expect("analytic projections are finite")
}

/// Adds i.i.d. Gaussian noise, deterministic for a given seed.
pub fn add_noise(stack: &ProjectionStack, sigma: f64, rng_seed: u64) -> Result<ProjectionStack> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(stack.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let data = stack
        .data()
        .mapv(|v| (v as f64 + normal.sample(&mut rng)) as f32);
    ProjectionStack::new(stack.geometry().clone(), data)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
