use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::ProjectionStack;

/// Apodization applied on top of the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterWindow {
    #[default]
    None,
    Hann,
}

/// How a detector row is extended to the FFT length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zero,
    /// Repeat the edge pixels; suppresses the ramp response to truncation.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RampFilter {
    pub window: FilterWindow,
    pub padding: Padding,
}

impl RampFilter {
    /// FFT length: twice the next power of two of the row length.
    pub fn padded_len(cols: usize) -> usize {
        2 * cols.next_power_of_two()
    }

    /// Frequency response `|f|` (cycles/mm) on the DFT bins, band-limited at
    /// Nyquist, times the window.
    pub fn response(&self, len: usize, pitch: f64) -> Vec<f64> {
        let half = (len / 2) as f64;
        (0..len)
            .map(|k| {
                let bin = k.min(len - k) as f64;
                let ramp = bin / (len as f64 * pitch);
                let window = match self.window {
                    FilterWindow::None => 1.0,
                    FilterWindow::Hann => 0.5 * (1.0 + (PI * bin / half).cos()),
                };
                ramp * window
            })
            .collect()
    }
}

/// Ramp filter along detector rows with the default settings.
pub fn ramp_filter(stack: &ProjectionStack) -> ProjectionStack {
    ramp_filter_with(stack, &RampFilter::default())
}

pub fn ramp_filter_with(stack: &ProjectionStack, filter: &RampFilter) -> ProjectionStack {
    let g = stack.geometry();
    let cols = g.cols();
    let len = RampFilter::padded_len(cols);
    // The 1/len of the inverse transform is folded into the response.
    let response: Vec<f64> = filter
        .response(len, g.pixel_pitch())
        .into_iter()
        .map(|h| h / len as f64)
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(len);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(len);

    let mut data = stack.data().as_standard_layout().into_owned();
    data.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(cols)
        .for_each_init(
            || {
                let scratch = forward
                    .get_inplace_scratch_len()
                    .max(inverse.get_inplace_scratch_len());
                (
                    vec![Complex64::default(); len],
                    vec![Complex64::default(); scratch],
                )
            },
            |(buf, scratch), row| {
                fill_padded(buf, row, filter.padding);
                forward.process_with_scratch(buf, scratch);
                for (x, h) in buf.iter_mut().zip(&response) {
                    *x *= *h;
                }
                inverse.process_with_scratch(buf, scratch);
                for (dst, x) in row.iter_mut().zip(buf.iter()) {
                    *dst = x.re as f32;
                }
            },
        );
    stack.with_data(data)
}

fn fill_padded(buf: &mut [Complex64], row: &[f32], padding: Padding) {
    let n = row.len();
    for (dst, &x) in buf.iter_mut().zip(row) {
        *dst = Complex64::new(x as f64, 0.0);
    }
    let pad = buf.len() - n;
    let (right, left) = match padding {
        Padding::Zero => (0.0, 0.0),
        Padding::Edge => (row[n - 1] as f64, row[0] as f64),
    };
    // Circular layout: the first half of the pad continues the right edge,
    // the second half precedes the left edge.
    for (i, dst) in buf[n..].iter_mut().enumerate() {
        let v = if i < pad / 2 { right } else { left };
        *dst = Complex64::new(v, 0.0);
    }
}
