//! MSE, PSNR and single-scale SSIM.
//!
//! SSIM uses the usual 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
//! `K2 = 0.03` and a dynamic range of 1, evaluated at every position where
//! the window fits inside the image and averaged.

use std::fmt::Write as _;

use ndarray::{ArrayBase, ArrayView2, Axis, Data, Dimension};

use crate::error::{Error, Result};
use crate::geometry::Volume;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean of squared differences, accumulated in `f64`.
pub fn mse<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f32>,
    S2: Data<Elem = f32>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("mse of empty arrays".into()));
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB with the reference's value range as the peak.
pub fn psnr<S1, S2, D>(reference: &ArrayBase<S1, D>, test: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f32>,
    S2: Data<Elem = f32>,
    D: Dimension,
{
    let err = mse(reference, test)?;
    let (lo, hi) = value_range(reference.iter().copied());
    let peak = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
    Ok(psnr_from_mse(err, peak))
}

fn value_range(values: impl Iterator<Item = f32>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v as f64), hi.max(v as f64))
    })
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Separable "valid" filtering of a row-major `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, kr: &[f64], kc: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - kr.len(), w + 1 - kc.len());
    let mut rows_done = vec![0.0; h * ow];
    for r in 0..h {
        let line = &img[r * w..(r + 1) * w];
        for c in 0..ow {
            rows_done[r * ow + c] = kc.iter().zip(&line[c..]).map(|(k, x)| k * x).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (i, k) in kr.iter().enumerate() {
            let src = &rows_done[(r + i) * ow..(r + i + 1) * ow];
            for (o, x) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += k * x;
            }
        }
    }
    out
}

/// Mean SSIM of two images whose values are scaled to `[0, 1]`.
///
/// Images smaller than the window use a truncated window spanning the
/// whole short side.
pub fn ssim(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "ssim of {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("ssim of an empty image".into()));
    }
    let kr = gaussian_window(WINDOW.min(h));
    let kc = gaussian_window(WINDOW.min(w));
    let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&fa, h, w, &kr, &kc);
    let mu_b = filter_valid(&fb, h, w, &kr, &kc);
    let e_aa = filter_valid(&prod(&fa, &fa), h, w, &kr, &kc);
    let e_bb = filter_valid(&prod(&fb, &fb), h, w, &kr, &kc);
    let e_ab = filter_valid(&prod(&fa, &fb), h, w, &kr, &kc);
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceQuality {
    pub index: usize,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Volume comparison. MSE and PSNR use raw values (PSNR peak = reference
/// range); SSIM is the mean over `z` slices after mapping both volumes
/// through the reference's `[min, max] → [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub slices: Vec<SliceQuality>,
}

impl QualityReport {
    pub fn compare(reference: &Volume, test: &Volume) -> Result<Self> {
        let (ra, ta) = (reference.data(), test.data());
        let total_mse = mse(ra, ta)?;
        let (lo, hi) = value_range(ra.iter().copied());
        let span = if hi > lo { hi - lo } else { 1.0 };
        let peak = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
        let norm = |x: f32| ((x as f64 - lo) / span) as f32;
        let mut slices = Vec::with_capacity(ra.len_of(Axis(0)));
        for (index, (rs, ts)) in ra.axis_iter(Axis(0)).zip(ta.axis_iter(Axis(0))).enumerate() {
            let slice_mse = mse(&rs, &ts)?;
            let s = ssim(rs.mapv(norm).view(), ts.mapv(norm).view())?;
            slices.push(SliceQuality {
                index,
                mse: slice_mse,
                psnr: psnr_from_mse(slice_mse, peak),
                ssim: s,
            });
        }
        let ssim = slices.iter().map(|s| s.ssim).sum::<f64>() / slices.len() as f64;
        Ok(Self {
            mse: total_mse,
            psnr: psnr_from_mse(total_mse, peak),
            ssim,
            slices,
        })
    }

    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }

    /// `#`-prefixed summary followed by `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# quality report: mse {:.6e}, psnr {:.3} dB, ssim {:.6}, {} slices",
            self.mse,
            self.psnr,
            self.ssim,
            self.slices.len()
        )
        .unwrap();
        writeln!(out, "mse={:e}", self.mse).unwrap();
        writeln!(out, "rmse={:e}", self.rmse()).unwrap();
        writeln!(out, "psnr_db={}", self.psnr).unwrap();
        writeln!(out, "ssim={}", self.ssim).unwrap();
        writeln!(out, "slices={}", self.slices.len()).unwrap();
        for s in &self.slices {
            writeln!(out, "slice.{}={:e},{},{}", s.index, s.mse, s.psnr, s.ssim).unwrap();
        }
        out
    }
}
