//! Per-view truncated-SVD compression of projection stacks.

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;

use super::jacobi;
use crate::error::{Error, Result};
use crate::geometry::{ProjectionStack, ScanGeometry};

/// Rank-`k` factors of one `m × n` projection image.
///
/// `u` (`m × k`) and `v` (`n × k`) are column-major and hold unit-norm
/// singular vectors; the singular values carry all of the scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdView {
    rows: usize,
    cols: usize,
    u: Vec<f32>,
    sigma: Vec<f64>,
    v: Vec<f32>,
}

impl SvdView {
    pub fn new(rows: usize, cols: usize, u: Vec<f32>, sigma: Vec<f64>, v: Vec<f32>) -> Result<Self> {
        let k = sigma.len();
        if k == 0 || k > rows.min(cols) {
            return Err(Error::InvalidArgument(format!(
                "rank {k} outside 1..={} for a {rows}x{cols} view",
                rows.min(cols)
            )));
        }
        if u.len() != rows * k || v.len() != cols * k {
            return Err(Error::ShapeMismatch(format!(
                "factor lengths u={} v={} do not match {rows}x{cols} at rank {k}",
                u.len(),
                v.len()
            )));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Format("singular values must be finite and >= 0".into()));
        }
        if sigma.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Format("singular values must be non-increasing".into()));
        }
        if let Some(i) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            rows,
            cols,
            u,
            sigma,
            v,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn u_col(&self, i: usize) -> &[f32] {
        &self.u[i * self.rows..(i + 1) * self.rows]
    }

    pub fn v_col(&self, i: usize) -> &[f32] {
        &self.v[i * self.cols..(i + 1) * self.cols]
    }

    /// `Σ σ_i u_i v_iᵀ` accumulated in `f64`.
    pub fn reconstruct_f64(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.rows, self.cols));
        let mut scaled = vec![0.0f64; self.cols];
        for i in 0..self.rank() {
            let sigma = self.sigma[i];
            if sigma == 0.0 {
                continue;
            }
            for (dst, &x) in scaled.iter_mut().zip(self.v_col(i)) {
                *dst = sigma * x as f64;
            }
            for (r, &ur) in self.u_col(i).iter().enumerate() {
                if ur == 0.0 {
                    continue;
                }
                let ur = ur as f64;
                let mut row = out.row_mut(r);
                for (o, s) in row.iter_mut().zip(&scaled) {
                    *o += ur * s;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Array2<f32> {
        self.reconstruct_f64().mapv(|x| x as f32)
    }
}

/// Compressed scan: geometry plus one [`SvdView`] per projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdScan {
    geometry: ScanGeometry,
    rank: usize,
    views: Vec<SvdView>,
}

impl SvdScan {
    pub fn new(geometry: ScanGeometry, rank: usize, views: Vec<SvdView>) -> Result<Self> {
        if views.len() != geometry.n_views() {
            return Err(Error::ShapeMismatch(format!(
                "{} compressed views for {} angles",
                views.len(),
                geometry.n_views()
            )));
        }
        for (i, v) in views.iter().enumerate() {
            if (v.rows(), v.cols(), v.rank()) != (geometry.rows(), geometry.cols(), rank) {
                return Err(Error::ShapeMismatch(format!(
                    "view {i} is {}x{} rank {}, expected {}x{} rank {rank}",
                    v.rows(),
                    v.cols(),
                    v.rank(),
                    geometry.rows(),
                    geometry.cols()
                )));
            }
        }
        Ok(Self {
            geometry,
            rank,
            views,
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn views(&self) -> &[SvdView] {
        &self.views
    }
}

fn view_to_f64(view: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(view.len());
    for (i, &x) in view.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.push(x as f64);
    }
    Ok(out)
}

/// Best rank-`k` factors of a single image.
pub fn encode_view(view: ArrayView2<'_, f32>, k: usize) -> Result<SvdView> {
    let (rows, cols) = view.dim();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "rank {k} outside 1..={} for a {rows}x{cols} view",
            rows.min(cols)
        )));
    }
    let a = view_to_f64(view)?;
    let svd = jacobi::thin_svd(&a, rows, cols);
    let mut u = Vec::with_capacity(rows * k);
    let mut v = Vec::with_capacity(cols * k);
    for i in 0..k {
        // Deterministic sign: first nonzero entry of u_i is positive.
        let flip = svd
            .u_col(i)
            .iter()
            .find(|x| **x != 0.0)
            .is_some_and(|x| *x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        u.extend(svd.u_col(i).iter().map(|x| (sign * x) as f32));
        v.extend(svd.v_col(i).iter().map(|x| (sign * x) as f32));
    }
    SvdView::new(rows, cols, u, svd.s[..k].to_vec(), v)
}

/// Compresses every view independently at rank `k`.
pub fn svd_encode(stack: &ProjectionStack, k: usize) -> Result<SvdScan> {
    let g = stack.geometry();
    if k == 0 || k > g.rows().min(g.cols()) {
        return Err(Error::InvalidArgument(format!(
            "rank {k} outside 1..={}",
            g.rows().min(g.cols())
        )));
    }
    let views = (0..stack.n_views())
        .into_par_iter()
        .map(|i| encode_view(stack.view(i), k))
        .collect::<Result<Vec<_>>>()?;
    SvdScan::new(g.clone(), k, views)
}

pub fn svd_decode(scan: &SvdScan) -> Result<ProjectionStack> {
    let g = scan.geometry();
    let (rows, cols) = (g.rows(), g.cols());
    let images: Vec<Array2<f32>> = scan.views().par_iter().map(SvdView::reconstruct).collect();
    let mut data = Array3::<f32>::zeros((g.n_views(), rows, cols));
    for (i, img) in images.into_iter().enumerate() {
        if img.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch(format!("view {i} decodes to {:?}", img.dim())));
        }
        data.index_axis_mut(ndarray::Axis(0), i).assign(&img);
    }
    ProjectionStack::new(g.clone(), data)
}

/// All singular values of each view, non-increasing.
pub fn stack_singular_values(stack: &ProjectionStack) -> Result<Vec<Vec<f64>>> {
    let (rows, cols) = (stack.geometry().rows(), stack.geometry().cols());
    (0..stack.n_views())
        .into_par_iter()
        .map(|i| Ok(jacobi::singular_values(&view_to_f64(stack.view(i))?, rows, cols)))
        .collect()
}

/// Per-pixel MSE of the rank-`k` truncation, `Σ_{i>k} σ_i² / (m·n)`.
pub fn truncation_mse(sigma: &[f64], k: usize, rows: usize, cols: usize) -> f64 {
    let tail: f64 = sigma.iter().skip(k).rev().map(|s| s * s).sum();
    tail / (rows * cols) as f64
}

/// Smallest rank whose worst per-view truncation MSE is within `mse_budget`.
pub fn choose_rank(stack: &ProjectionStack, mse_budget: f64) -> Result<usize> {
    if !(mse_budget.is_finite() && mse_budget > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mse budget must be positive, got {mse_budget}"
        )));
    }
    let (rows, cols) = (stack.geometry().rows(), stack.geometry().cols());
    let spectra = stack_singular_values(stack)?;
    let full = rows.min(cols);
    (1..=full)
        .find(|&k| {
            spectra
                .iter()
                .all(|s| truncation_mse(s, k, rows, cols) <= mse_budget)
        })
        .ok_or_else(|| {
            Error::InvalidArgument(format!("mse budget {mse_budget} unreachable at full rank"))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_circular_geometry;
    use ndarray::Array3;

    fn stack_from(views: Vec<Array2<f32>>) -> ProjectionStack {
        let (rows, cols) = views[0].dim();
        let g = make_circular_geometry(views.len(), rows, cols, 1.0, 100.0).unwrap();
        let mut data = Array3::zeros((views.len(), rows, cols));
        for (i, v) in views.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), i).assign(v);
        }
        ProjectionStack::new(g, data).unwrap()
    }

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn rank_one_outer_product_exact() {
        let x = [1.0f32, -2.0, 0.5, 3.0, 1.5];
        let y = [0.25f32, 2.0, -1.0, 4.0];
        let g = Array2::from_shape_fn((5, 4), |(r, c)| x[r] * y[c]);
        let sv = encode_view(g.view(), 1).unwrap();
        let err = frob(&(&sv.reconstruct_f64() - &g.mapv(f64::from)));
        assert!(err <= 1e-6 * frob(&g.mapv(f64::from)));
    }

    #[test]
    fn diagonal_singular_values() {
        let g = Array2::from_diag(&ndarray::arr1(&[4.0f32, 3.0, 2.0, 1.0]));
        let sv = encode_view(g.view(), 4).unwrap();
        assert_eq!(sv.singular_values(), &[4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn sign_convention_first_nonzero_positive() {
        let g = Array2::from_shape_fn((6, 5), |(r, c)| ((r * 7 + c * 3) % 5) as f32 - 2.0);
        let sv = encode_view(g.view(), 5).unwrap();
        for i in 0..5 {
            if sv.singular_values()[i] > 1e-9 {
                let first = sv.u_col(i).iter().find(|x| **x != 0.0).unwrap();
                assert!(*first > 0.0);
            }
        }
    }

    #[test]
    fn rank_bounds_rejected() {
        let g = Array2::<f32>::zeros((4, 3));
        assert!(encode_view(g.view(), 0).is_err());
        assert!(encode_view(g.view(), 4).is_err());
        let mut bad = g.clone();
        bad[[1, 1]] = f32::INFINITY;
        assert!(matches!(encode_view(bad.view(), 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_singular_values_decode_to_zero() {
        let sv = SvdView::new(3, 2, vec![1.0; 6], vec![0.0, 0.0], vec![1.0; 4]).unwrap();
        let scan = SvdScan::new(make_circular_geometry(1, 3, 2, 1.0, 10.0).unwrap(), 2, vec![sv]).unwrap();
        let out = svd_decode(&scan).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn view_invariants_enforced() {
        assert!(SvdView::new(3, 2, vec![0.0; 3], vec![1.0], vec![0.0; 2]).is_ok());
        assert!(SvdView::new(3, 2, vec![0.0; 6], vec![1.0, 2.0], vec![0.0; 4]).is_err());
        assert!(SvdView::new(3, 2, vec![0.0; 6], vec![1.0, -1.0], vec![0.0; 4]).is_err());
        assert!(SvdView::new(3, 2, vec![0.0; 5], vec![2.0, 1.0], vec![0.0; 4]).is_err());
        assert!(SvdView::new(3, 2, vec![0.0; 9], vec![3.0, 2.0, 1.0], vec![0.0; 6]).is_err());
    }

    #[test]
    fn scan_rejects_mismatched_views() {
        let g = make_circular_geometry(2, 3, 2, 1.0, 10.0).unwrap();
        let sv = SvdView::new(3, 2, vec![0.0; 3], vec![1.0], vec![0.0; 2]).unwrap();
        assert!(SvdScan::new(g.clone(), 1, vec![sv.clone()]).is_err());
        assert!(SvdScan::new(g.clone(), 2, vec![sv.clone(), sv.clone()]).is_err());
        assert!(SvdScan::new(g, 1, vec![sv.clone(), sv]).is_ok());
    }

    #[test]
    fn full_rank_round_trip() {
        let views: Vec<_> = (0..3)
            .map(|s| Array2::from_shape_fn((9, 7), |(r, c)| ((r * 13 + c * 5 + s * 3) % 11) as f32 * 0.3 - 1.0))
            .collect();
        let stack = stack_from(views);
        let back = svd_decode(&svd_encode(&stack, 7).unwrap()).unwrap();
        let diff: f64 = back.data().iter().zip(stack.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let norm: f64 = stack.data().iter().map(|a| (*a as f64).powi(2)).sum();
        assert!((diff / norm).sqrt() <= 1e-5);
    }

    #[test]
    fn choose_rank_cases() {
        // Rank-2 image.
        let img = Array2::from_shape_fn((8, 6), |(r, c)| {
            (r as f32 + 1.0) * (c as f32 - 2.5) + ((r % 3) as f32) * ((c * c) as f32)
        });
        let stack = stack_from(vec![img]);
        assert_eq!(choose_rank(&stack, 1e-9).unwrap(), 2);
        let s = &stack_singular_values(&stack).unwrap()[0];
        assert_eq!(choose_rank(&stack, truncation_mse(s, 1, 8, 6) * 1.0001).unwrap(), 1);
        assert_eq!(choose_rank(&stack, 1e30).unwrap(), 1);
        assert!(choose_rank(&stack, 0.0).is_err());
        assert!(choose_rank(&stack, f64::NAN).is_err());
    }
}
