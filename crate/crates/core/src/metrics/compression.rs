use std::fmt::Write as _;

use num_rational::Ratio;

use crate::error::{Error, Result};

fn check_rank(m: usize, n: usize, k: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("bad image size {m}x{n}")));
    }
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {k} outside 1..={}",
            m.min(n)
        )));
    }
    Ok(())
}

fn check_views(views: usize, full_views: usize) -> Result<()> {
    if views == 0 || full_views == 0 || full_views % views != 0 {
        return Err(Error::InvalidArgument(format!(
            "{views} views must divide the full scan of {full_views}"
        )));
    }
    Ok(())
}

/// `m·n / (k·(m+n+1))` as an exact fraction.
pub fn cr_svd_ratio(m: usize, n: usize, k: usize) -> Result<Ratio<u128>> {
    check_rank(m, n, k)?;
    Ok(Ratio::new(
        (m * n) as u128,
        (k as u128) * (m + n + 1) as u128,
    ))
}

pub fn cr_svd(m: usize, n: usize, k: usize) -> Result<f64> {
    cr_svd_ratio(m, n, k).map(to_f64)
}

/// Rank-`k` SVD ratio times the view reduction `full_views / views`.
pub fn cr_total_ratio(
    m: usize,
    n: usize,
    k: usize,
    views: usize,
    full_views: usize,
) -> Result<Ratio<u128>> {
    check_views(views, full_views)?;
    Ok(cr_svd_ratio(m, n, k)? * Ratio::new(full_views as u128, views as u128))
}

pub fn cr_total(m: usize, n: usize, k: usize, views: usize, full_views: usize) -> Result<f64> {
    cr_total_ratio(m, n, k, views, full_views).map(to_f64)
}

/// Total ratio computed from the SVD ratio rounded to two decimals first,
/// the way summary tables are often filled in (31.11 × 12 = 373.32).
pub fn cr_total_table_style(
    m: usize,
    n: usize,
    k: usize,
    views: usize,
    full_views: usize,
) -> Result<f64> {
    check_views(views, full_views)?;
    let rounded = (cr_svd(m, n, k)? * 100.0).round() / 100.0;
    Ok(rounded * (full_views / views) as f64)
}

fn to_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Raw projection bytes: `views·m·n·bytes_per_px`.
pub fn storage_bytes(views: usize, m: usize, n: usize, bytes_per_px: usize) -> u64 {
    (views * m * n * bytes_per_px) as u64
}

/// Factor bytes at 4 bytes per stored value: `views·k·(m+n+1)·4`.
pub fn svz_bytes(views: usize, m: usize, n: usize, k: usize) -> u64 {
    (views * k * (m + n + 1) * 4) as u64
}

/// Bytes expressed in units of 2³⁰.
pub fn binary_gb(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub views: usize,
    pub full_views: usize,
    pub cr_svd: f64,
    pub cr_sparse: f64,
    pub cr_total: f64,
    /// `cr_total` recomputed from the two-decimal SVD ratio.
    pub cr_total_table: f64,
    pub bytes_raw: u64,
    pub bytes_sparse: u64,
    pub bytes_compressed: u64,
}

impl CompressionReport {
    pub fn new(rows: usize, cols: usize, rank: usize, views: usize, full_views: usize) -> Result<Self> {
        Ok(Self {
            rows,
            cols,
            rank,
            views,
            full_views,
            cr_svd: cr_svd(rows, cols, rank)?,
            cr_sparse: full_views as f64 / views as f64,
            cr_total: cr_total(rows, cols, rank, views, full_views)?,
            cr_total_table: cr_total_table_style(rows, cols, rank, views, full_views)?,
            bytes_raw: storage_bytes(full_views, rows, cols, 4),
            bytes_sparse: storage_bytes(views, rows, cols, 4),
            bytes_compressed: svz_bytes(views, rows, cols, rank),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# compression report\n");
        writeln!(out, "# detector {}x{}, rank {}, {} of {} views", self.rows, self.cols, self.rank, self.views, self.full_views).unwrap();
        writeln!(out, "cr_svd={:.6}", self.cr_svd).unwrap();
        writeln!(out, "cr_sparse={:.6}", self.cr_sparse).unwrap();
        writeln!(out, "cr_total={:.6}", self.cr_total).unwrap();
        writeln!(out, "cr_total_table={:.2}", self.cr_total_table).unwrap();
        writeln!(out, "bytes_raw={}", self.bytes_raw).unwrap();
        writeln!(out, "bytes_sparse={}", self.bytes_sparse).unwrap();
        writeln!(out, "bytes_compressed={}", self.bytes_compressed).unwrap();
        writeln!(out, "gb_raw={:.4}", binary_gb(self.bytes_raw)).unwrap();
        writeln!(out, "gb_sparse={:.4}", binary_gb(self.bytes_sparse)).unwrap();
        writeln!(out, "gb_compressed={:.4}", binary_gb(self.bytes_compressed)).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_ratio_values() {
        assert!((cr_svd(2048, 1716, 30).unwrap() - 31.11).abs() <= 0.005);
        assert_eq!(cr_svd(4, 3, 1).unwrap(), 1.5);
        assert!(cr_svd(64, 64, 64).unwrap() < 1.0);
        assert!(cr_svd(4, 3, 0).is_err());
        assert!(cr_svd(4, 3, 4).is_err());
    }

    #[test]
    fn total_ratio_values() {
        let exact = cr_total(2048, 1716, 30, 60, 720).unwrap();
        assert!((exact - 373.37).abs() <= 0.01, "{exact}");
        let table = cr_total_table_style(2048, 1716, 30, 60, 720).unwrap();
        assert!((table - 373.32).abs() < 1e-9);
        assert_eq!(cr_total(64, 64, 64, 720, 720).unwrap(), cr_svd(64, 64, 64).unwrap());
        let r360 = cr_total_ratio(100, 80, 5, 360, 720).unwrap();
        let r720 = cr_total_ratio(100, 80, 5, 720, 720).unwrap();
        assert_eq!(r360, r720 * Ratio::from_integer(2));
        assert!(cr_total(100, 80, 5, 7, 720).is_err());
        assert!(cr_total(100, 80, 5, 0, 720).is_err());
    }

    #[test]
    fn total_times_views_is_svd_times_full() {
        for views in [1, 2, 3, 4, 6, 8, 12, 60, 720] {
            let total = cr_total_ratio(2048, 1716, 30, views, 720).unwrap();
            let svd = cr_svd_ratio(2048, 1716, 30).unwrap();
            assert_eq!(total * Ratio::from_integer(views as u128), svd * Ratio::from_integer(720));
        }
    }

    #[test]
    fn storage_accounting() {
        assert!((binary_gb(storage_bytes(720, 2048, 1716, 4)) - 9.4263).abs() <= 1e-4);
        assert!((binary_gb(storage_bytes(60, 2048, 1716, 4)) - 0.7855).abs() <= 1e-4);
        assert!((binary_gb(svz_bytes(60, 2048, 1716, 30)) - 0.0252).abs() <= 1e-4);
    }

    #[test]
    fn report_is_consistent() {
        let r = CompressionReport::new(2048, 1716, 30, 60, 720).unwrap();
        assert_eq!(r.cr_sparse, 12.0);
        assert!((r.cr_total - r.cr_svd * r.cr_sparse).abs() < 1e-9);
        assert!((r.bytes_sparse as f64 / r.bytes_compressed as f64 - r.cr_svd).abs() < 1e-9);
        let text = r.to_text();
        assert!(text.contains("cr_total_table=373.32"));
        assert!(text.contains("gb_raw=9.4263"));
    }
}
