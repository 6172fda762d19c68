use crate::geometry::ProjectionStack;

/// Cosine pre-weighting `p · R / sqrt(R² + a² + b²)` with `(a, b)` in mm on
/// the virtual detector.
pub fn weight(stack: &ProjectionStack) -> ProjectionStack {
    let g = stack.geometry();
    let r = g.source_to_axis();
    let mut data = stack.data().clone();
    for ((_, row, col), value) in data.indexed_iter_mut() {
        let a = g.detector_a(col);
        let b = g.detector_b(row);
        *value = (*value as f64 * r / (r * r + a * a + b * b).sqrt()) as f32;
    }
    stack.with_data(data)
}
