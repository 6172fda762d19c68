use std::f64::consts::TAU;

use ndarray::Array3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{axis_center, ProjectionStack, Volume, VolumeDims};

/// Distance weight applied during backprojection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdkWeight {
    /// `R² / U²`, the usual FDK weight.
    #[default]
    Standard,
    /// `R² / U`, kept for comparison. It is not dimensionless, so values
    /// come out scaled by roughly the source distance.
    InverseU,
}

/// A full orbit measures every line twice.
const FULL_ORBIT_REDUNDANCY: f64 = 0.5;

struct ViewTrig {
    sin: f64,
    cos: f64,
}

/// Voxel-driven weighted backprojection with bilinear detector sampling.
///
/// `f(x,y,z) = ½ Σ_β Δβ · W(U_β) · p̃_β(a, b)` with `U_β = R + x cos β + y sin β`,
/// `a = R(−x sin β + y cos β)/U_β`, `b = R z / U_β` and `Δβ = 2π / n_views`.
/// Voxels that project off the detector receive nothing from that view.
/// Each voxel sums its views in acquisition order, so the result does not
/// depend on the number of worker threads.
pub fn backproject(
    stack: &ProjectionStack,
    dims: VolumeDims,
    voxel_pitch: f64,
    weighting: FdkWeight,
) -> Result<Volume> {
    dims.validate()?;
    if !(voxel_pitch.is_finite() && voxel_pitch > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voxel pitch must be positive, got {voxel_pitch}"
        )));
    }
    let g = stack.geometry();
    let (rows, cols) = (g.rows(), g.cols());
    let r = g.source_to_axis();
    let n_views = g.n_views();
    let scale = FULL_ORBIT_REDUNDANCY * TAU / n_views as f64;

    // Column-major copy per view so that walking along z reads contiguously.
    let transposed: Vec<Vec<f32>> = (0..n_views)
        .into_par_iter()
        .map(|v| {
            let view = stack.view(v);
            let mut t = vec![0.0f32; rows * cols];
            for ((row, col), &x) in view.indexed_iter() {
                t[col * rows + row] = x;
            }
            t
        })
        .collect();
    let trig: Vec<ViewTrig> = g
        .angles()
        .iter()
        .map(|b| {
            let (sin, cos) = b.sin_cos();
            ViewTrig { sin, cos }
        })
        .collect();

    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let zs: Vec<f64> = (0..nz).map(|i| axis_center(i, nz, voxel_pitch)).collect();
    let row_center = (rows as f64 - 1.0) / 2.0;
    let col_center = (cols as f64 - 1.0) / 2.0;
    let inv_pitch = 1.0 / g.pixel_pitch();
    let max_row = (rows - 1) as f64;
    let max_col = (cols - 1) as f64;

    let planes: Vec<Vec<f64>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let y = axis_center(iy, ny, voxel_pitch);
            // acc[ix * nz + iz]
            let mut acc = vec![0.0f64; nx * nz];
            for (view, t) in transposed.iter().zip(&trig) {
                for ix in 0..nx {
                    let x = axis_center(ix, nx, voxel_pitch);
                    let u = r + x * t.cos + y * t.sin;
                    if u <= 0.0 {
                        continue;
                    }
                    let mag = r / u;
                    let a = mag * (-x * t.sin + y * t.cos);
                    let fc = (a - g.offset_col()) * inv_pitch + col_center;
                    if !(0.0..=max_col).contains(&fc) {
                        continue;
                    }
                    let c0 = (fc.floor() as usize).min(cols - 2);
                    let wc = fc - c0 as f64;
                    let col0 = &view[c0 * rows..(c0 + 1) * rows];
                    let col1 = &view[(c0 + 1) * rows..(c0 + 2) * rows];
                    let w = match weighting {
                        FdkWeight::Standard => mag * mag,
                        FdkWeight::InverseU => r * mag,
                    };
                    let out = &mut acc[ix * nz..(ix + 1) * nz];
                    for (dst, &z) in out.iter_mut().zip(&zs) {
                        let fr = (mag * z - g.offset_row()) * inv_pitch + row_center;
                        if !(0.0..=max_row).contains(&fr) {
                            continue;
                        }
                        let r0 = (fr.floor() as usize).min(rows - 2);
                        let wr = fr - r0 as f64;
                        let top = col0[r0] as f64 * (1.0 - wc) + col1[r0] as f64 * wc;
                        let bottom = col0[r0 + 1] as f64 * (1.0 - wc) + col1[r0 + 1] as f64 * wc;
                        *dst += w * (top * (1.0 - wr) + bottom * wr);
                    }
                }
            }
            acc
        })
        .collect();

    let mut data = Array3::<f32>::zeros((nz, ny, nx));
    for (iy, plane) in planes.iter().enumerate() {
        for ix in 0..nx {
            for iz in 0..nz {
                data[[iz, iy, ix]] = (scale * plane[ix * nz + iz]) as f32;
            }
        }
    }
    Volume::new(voxel_pitch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circular_geometry, ScanGeometry};

    #[test]
    fn zero_stack_gives_zero_volume() {
        let g = make_circular_geometry(8, 6, 6, 1.0, 50.0).unwrap();
        let v = backproject(&ProjectionStack::zeros(g), VolumeDims::cube(4), 1.0, FdkWeight::Standard).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scaling_is_exact_for_powers_of_two() {
        let g = make_circular_geometry(5, 6, 7, 1.5, 40.0).unwrap();
        let data = ndarray::Array3::from_shape_fn((5, 6, 7), |(v, r, c)| (v + 2 * r + 3 * c) as f32 * 0.1);
        let s = ProjectionStack::new(g.clone(), data.clone()).unwrap();
        let s2 = ProjectionStack::new(g, data.mapv(|x| 8.0 * x)).unwrap();
        let a = backproject(&s, VolumeDims::new(5, 4, 3), 1.0, FdkWeight::Standard).unwrap();
        let b = backproject(&s2, VolumeDims::new(5, 4, 3), 1.0, FdkWeight::Standard).unwrap();
        assert_eq!(b.data(), &a.data().mapv(|x| 8.0 * x));
    }

    #[test]
    fn single_view_constant_detector() {
        // One view of all-ones: every on-detector voxel gets ½·2π·R²/U².
        let r = 100.0;
        let g = ScanGeometry::new(r, 64, 64, 1.0, vec![0.0]).unwrap();
        let s = ProjectionStack::new(g, ndarray::Array3::ones((1, 64, 64))).unwrap();
        let v = backproject(&s, VolumeDims::new(3, 1, 1), 2.0, FdkWeight::Standard).unwrap();
        for ix in 0..3 {
            let x = (ix as f64 - 1.0) * 2.0;
            let expect = 0.5 * TAU * (r / (r + x)).powi(2);
            assert!((v.data()[[0, 0, ix]] as f64 - expect).abs() < 1e-5);
        }
        let p = backproject(&s, VolumeDims::new(3, 1, 1), 2.0, FdkWeight::InverseU).unwrap();
        let expect = 0.5 * TAU * r * r / (r + 2.0);
        assert!((p.data()[[0, 0, 2]] as f64 - expect).abs() < 1e-3);
    }

    #[test]
    fn off_detector_voxels_get_nothing() {
        let g = ScanGeometry::new(100.0, 4, 4, 1.0, vec![0.0]).unwrap();
        let s = ProjectionStack::new(g, ndarray::Array3::ones((1, 4, 4))).unwrap();
        let v = backproject(&s, VolumeDims::new(1, 1, 21), 1.0, FdkWeight::Standard).unwrap();
        assert_eq!(v.data()[[0, 0, 0]], 0.0);
        assert!(v.data()[[10, 0, 0]] > 0.0);
    }

    #[test]
    fn invalid_arguments() {
        let g = make_circular_geometry(2, 4, 4, 1.0, 50.0).unwrap();
        let s = ProjectionStack::zeros(g);
        assert!(backproject(&s, VolumeDims::new(0, 1, 1), 1.0, FdkWeight::Standard).is_err());
        assert!(backproject(&s, VolumeDims::cube(2), 0.0, FdkWeight::Standard).is_err());
    }
}
