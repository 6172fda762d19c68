//! Image quality and data-volume accounting.

mod compression;
mod curve;
mod quality;

pub use compression::{
    binary_gb, cr_svd, cr_svd_ratio, cr_total, cr_total_ratio, cr_total_table_style,
    storage_bytes, svz_bytes, CompressionReport,
};
pub use curve::{curve_csv, mse_curve};
pub use quality::{mse, psnr, psnr_from_mse, ssim, QualityReport, SliceQuality};
