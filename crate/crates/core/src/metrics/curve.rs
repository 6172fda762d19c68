use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::ProjectionStack;
use crate::svd::{stack_singular_values, truncation_mse};

/// Mean (over views) truncation MSE for each rank in `ks`, taken directly
/// from the singular values.
pub fn mse_curve(stack: &ProjectionStack, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let (rows, cols) = (stack.geometry().rows(), stack.geometry().cols());
    let full = rows.min(cols);
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty rank list".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("ranks must be strictly ascending".into()));
    }
    if ks[0] == 0 || ks[ks.len() - 1] > full {
        return Err(Error::InvalidArgument(format!("ranks must lie in 1..={full}")));
    }
    let spectra = stack_singular_values(stack)?;
    let n = spectra.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let total: f64 = spectra.iter().map(|s| truncation_mse(s, k, rows, cols)).sum();
            (k, total / n)
        })
        .collect())
}

pub fn curve_csv(points: &[(usize, f64)]) -> String {
    let mut out = String::from("k,mse\n");
    for (k, m) in points {
        writeln!(out, "{k},{m:e}").unwrap();
    }
    out
}
