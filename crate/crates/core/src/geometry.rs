//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates: the rotation axis is `z`, the volume is centered on the axis
//! and the detector is described on a virtual plane through the axis, so
//! detector coordinates `(a, b)` are in millimetres with the source-to-axis
//! distance `R` playing the role of the focal length. `a` runs along detector
//! columns (horizontal), `b` along rows (parallel to `z`).
//!
//! The source sits at `(-R cos β, -R sin β, 0)` and rotates counterclockwise
//! with increasing `β`; the central ray points along `(cos β, sin β, 0)`.

use std::f64::consts::TAU;

use ndarray::{Array3, ArrayView2};

use crate::error::{Error, Result};

/// Circular cone-beam acquisition description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    source_to_axis: f64,
    rows: usize,
    cols: usize,
    pixel_pitch: f64,
    angles: Vec<f64>,
    offset_row: f64,
    offset_col: f64,
}

impl ScanGeometry {
    pub fn new(
        source_to_axis: f64,
        rows: usize,
        cols: usize,
        pixel_pitch: f64,
        angles: Vec<f64>,
    ) -> Result<Self> {
        Self::with_offsets(source_to_axis, rows, cols, pixel_pitch, angles, 0.0, 0.0)
    }

    pub fn with_offsets(
        source_to_axis: f64,
        rows: usize,
        cols: usize,
        pixel_pitch: f64,
        angles: Vec<f64>,
        offset_row: f64,
        offset_col: f64,
    ) -> Result<Self> {
        if !(source_to_axis.is_finite() && source_to_axis > 0.0) {
            return Err(Error::Geometry(format!(
                "source_to_axis_distance must be positive, got {source_to_axis}"
            )));
        }
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(Error::Geometry(format!(
                "pixel_pitch must be positive, got {pixel_pitch}"
            )));
        }
        if rows < 2 || cols < 2 {
            return Err(Error::Geometry(format!(
                "detector must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if !(offset_row.is_finite() && offset_col.is_finite()) {
            return Err(Error::Geometry("detector offsets must be finite".into()));
        }
        if angles.is_empty() {
            return Err(Error::Geometry("angle list is empty".into()));
        }
        for (i, &beta) in angles.iter().enumerate() {
            if !(0.0..TAU).contains(&beta) {
                return Err(Error::Geometry(format!(
                    "angle {i} = {beta} outside [0, 2pi)"
                )));
            }
            if i > 0 && beta <= angles[i - 1] {
                return Err(Error::Geometry(format!(
                    "angles must be strictly increasing (index {i})"
                )));
            }
        }
        Ok(Self {
            source_to_axis,
            rows,
            cols,
            pixel_pitch,
            angles,
            offset_row,
            offset_col,
        })
    }

    pub fn source_to_axis(&self) -> f64 {
        self.source_to_axis
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn offset_row(&self) -> f64 {
        self.offset_row
    }

    pub fn offset_col(&self) -> f64 {
        self.offset_col
    }

    /// Horizontal virtual-detector coordinate (mm) of a column center.
    pub fn detector_a(&self, col: usize) -> f64 {
        (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.pixel_pitch + self.offset_col
    }

    /// Vertical virtual-detector coordinate (mm) of a row center.
    pub fn detector_b(&self, row: usize) -> f64 {
        (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.pixel_pitch + self.offset_row
    }

    /// Same detector, different angle list.
    pub fn with_angles(&self, angles: Vec<f64>) -> Result<Self> {
        Self::with_offsets(
            self.source_to_axis,
            self.rows,
            self.cols,
            self.pixel_pitch,
            angles,
            self.offset_row,
            self.offset_col,
        )
    }
}

/// Full circular orbit with `n_views` equally spaced angles `2πi/n`.
pub fn make_circular_geometry(
    n_views: usize,
    rows: usize,
    cols: usize,
    pitch: f64,
    r_axis: f64,
) -> Result<ScanGeometry> {
    if n_views == 0 {
        return Err(Error::Geometry("n_views must be at least 1".into()));
    }
    let angles = (0..n_views)
        .map(|i| TAU * i as f64 / n_views as f64)
        .collect();
    ScanGeometry::new(r_axis, rows, cols, pitch, angles)
}

/// Projection images indexed `(view, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    geometry: ScanGeometry,
    data: Array3<f32>,
}

impl ProjectionStack {
    pub fn new(geometry: ScanGeometry, data: Array3<f32>) -> Result<Self> {
        let expected = (geometry.n_views(), geometry.rows(), geometry.cols());
        if data.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "projection data {:?} does not match geometry {:?}",
                data.dim(),
                expected
            )));
        }
        check_finite(data.iter())?;
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        let dim = (geometry.n_views(), geometry.rows(), geometry.cols());
        Self {
            geometry,
            data: Array3::zeros(dim),
        }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_parts(self) -> (ScanGeometry, Array3<f32>) {
        (self.geometry, self.data)
    }

    pub fn n_views(&self) -> usize {
        self.geometry.n_views()
    }

    pub fn view(&self, index: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), index)
    }

    /// Elementwise map producing a new stack on the same geometry.
    ///
    /// Callers must keep values finite; this is only used internally by
    /// linear operators whose outputs are finite for finite inputs.
    pub(crate) fn with_data(&self, data: Array3<f32>) -> Self {
        debug_assert_eq!(data.dim(), self.data.dim());
        Self {
            geometry: self.geometry.clone(),
            data,
        }
    }
}

/// Reconstructed volume. Storage order is `(z, y, x)`; voxel centers are
/// symmetric about the rotation axis and the mid-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxel_pitch: f64,
    data: Array3<f32>,
}

impl Volume {
    pub fn new(voxel_pitch: f64, data: Array3<f32>) -> Result<Self> {
        if !(voxel_pitch.is_finite() && voxel_pitch > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "voxel pitch must be positive, got {voxel_pitch}"
            )));
        }
        let (nz, ny, nx) = data.dim();
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument("volume dims must be >= 1".into()));
        }
        check_finite(data.iter())?;
        Ok(Self { voxel_pitch, data })
    }

    pub fn zeros(dims: VolumeDims, voxel_pitch: f64) -> Result<Self> {
        dims.validate()?;
        Self::new(voxel_pitch, Array3::zeros((dims.nz, dims.ny, dims.nx)))
    }

    pub fn dims(&self) -> VolumeDims {
        let (nz, ny, nx) = self.data.dim();
        VolumeDims { nx, ny, nz }
    }

    pub fn voxel_pitch(&self) -> f64 {
        self.voxel_pitch
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Center of voxel `(ix, iy, iz)` in mm.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        self.dims().voxel_center(self.voxel_pitch, ix, iy, iz)
    }
}

/// Voxel grid extent `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl VolumeDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "volume dims must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn voxel_center(&self, pitch: f64, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            axis_center(ix, self.nx, pitch),
            axis_center(iy, self.ny, pitch),
            axis_center(iz, self.nz, pitch),
        ]
    }
}

pub(crate) fn axis_center(i: usize, n: usize, pitch: f64) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) * pitch
}

/// One solid in a [`Phantom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box given by its half extents.
    Box { center: [f64; 3], half_extents: [f64; 3] },
    /// Finite cylinder with its axis parallel to `z`.
    Cylinder { center: [f64; 3], radius: f64, half_height: f64 },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let (center, sizes): ([f64; 3], Vec<f64>) = match *self {
            Shape::Sphere { center, radius } => (center, vec![radius]),
            Shape::Box { center, half_extents } => (center, half_extents.to_vec()),
            Shape::Cylinder {
                center,
                radius,
                half_height,
            } => (center, vec![radius, half_height]),
        };
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("primitive center must be finite".into()));
        }
        if sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "primitive size parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
                d <= radius * radius
            }
            Shape::Box { center, half_extents } => {
                (0..3).all(|i| (p[i] - center[i]).abs() <= half_extents[i])
            }
            Shape::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius && (p[2] - center[2]).abs() <= half_height
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Additive attenuation density (per mm).
    pub density: f64,
}

impl Primitive {
    pub fn new(shape: Shape, density: f64) -> Result<Self> {
        shape.validate()?;
        if !density.is_finite() {
            return Err(Error::InvalidArgument("density must be finite".into()));
        }
        Ok(Self { shape, density })
    }

    pub fn sphere(center: [f64; 3], radius: f64, density: f64) -> Result<Self> {
        Self::new(Shape::Sphere { center, radius }, density)
    }

    pub fn cuboid(center: [f64; 3], half_extents: [f64; 3], density: f64) -> Result<Self> {
        Self::new(Shape::Box { center, half_extents }, density)
    }

    pub fn cylinder(center: [f64; 3], radius: f64, half_height: f64, density: f64) -> Result<Self> {
        Self::new(
            Shape::Cylinder {
                center,
                radius,
                half_height,
            },
            density,
        )
    }
}

/// Sum of additive primitives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Phantom {
    pub primitives: Vec<Primitive>,
}

impl Phantom {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self { primitives }
    }

    pub fn density_at(&self, p: [f64; 3]) -> f64 {
        self.primitives
            .iter()
            .filter(|prim| prim.shape.contains(p))
            .map(|prim| prim.density)
            .sum()
    }

    /// Same solids with every density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            primitives: self
                .primitives
                .iter()
                .map(|p| Primitive {
                    shape: p.shape,
                    density: p.density * factor,
                })
                .collect(),
        }
    }
}

pub(crate) fn check_finite<'a>(values: impl Iterator<Item = &'a f32>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_geometry_720_has_half_degree_step() {
        let g = make_circular_geometry(720, 4, 4, 1.0, 100.0).unwrap();
        assert_eq!(g.n_views(), 720);
        let step = g.angles()[1] - g.angles()[0];
        assert!((step.to_degrees() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_view_geometry() {
        let g = make_circular_geometry(1, 2, 2, 1.0, 100.0).unwrap();
        assert_eq!(g.angles(), &[0.0]);
    }

    #[test]
    fn sixty_views_six_degrees() {
        let g = make_circular_geometry(60, 2, 2, 1.0, 100.0).unwrap();
        assert_eq!(g.n_views(), 60);
        for w in g.angles().windows(2) {
            assert!(((w[1] - w[0]).to_degrees() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_circular_geometry(0, 4, 4, 1.0, 100.0).is_err());
        assert!(make_circular_geometry(4, 1, 4, 1.0, 100.0).is_err());
        assert!(make_circular_geometry(4, 4, 0, 1.0, 100.0).is_err());
        assert!(make_circular_geometry(4, 4, 4, 0.0, 100.0).is_err());
        assert!(make_circular_geometry(4, 4, 4, 1.0, -1.0).is_err());
        assert!(ScanGeometry::new(100.0, 4, 4, 1.0, vec![0.5, 0.5]).is_err());
        assert!(ScanGeometry::new(100.0, 4, 4, 1.0, vec![0.5, 0.1]).is_err());
        assert!(ScanGeometry::new(100.0, 4, 4, 1.0, vec![TAU]).is_err());
        assert!(ScanGeometry::new(100.0, 4, 4, 1.0, vec![-0.1]).is_err());
    }

    #[test]
    fn detector_coordinates_are_centered() {
        let g = make_circular_geometry(1, 4, 5, 0.5, 100.0).unwrap();
        assert_eq!(g.detector_a(2), 0.0);
        assert_eq!(g.detector_b(0), -0.75);
    }

    #[test]
    fn stack_rejects_mismatch_and_nan() {
        let g = make_circular_geometry(2, 2, 3, 1.0, 100.0).unwrap();
        assert!(ProjectionStack::new(g.clone(), Array3::zeros((2, 3, 2))).is_err());
        let mut data = Array3::zeros((2, 2, 3));
        data[[1, 0, 2]] = f32::NAN;
        assert!(matches!(
            ProjectionStack::new(g, data),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn primitives_validate_sizes() {
        assert!(Primitive::sphere([0.0; 3], 0.0, 1.0).is_err());
        assert!(Primitive::cuboid([0.0; 3], [1.0, -1.0, 1.0], 1.0).is_err());
        assert!(Primitive::cylinder([0.0; 3], 1.0, 0.0, 1.0).is_err());
        assert!(Primitive::sphere([0.0; 3], 1.0, f64::NAN).is_err());
    }

    #[test]
    fn voxel_centers_symmetric() {
        let d = VolumeDims::new(4, 3, 2);
        assert_eq!(d.voxel_center(1.0, 0, 0, 0), [-1.5, -1.0, -0.5]);
        assert_eq!(d.voxel_center(1.0, 3, 2, 1), [1.5, 1.0, 0.5]);
    }

    proptest::proptest! {
        #[test]
        fn circular_max_gap_is_step(n in 1usize..2000) {
            let g = make_circular_geometry(n, 2, 2, 1.0, 10.0).unwrap();
            let a = g.angles();
            let mut max_gap = TAU - a[n - 1] + a[0];
            for w in a.windows(2) {
                max_gap = max_gap.max(w[1] - w[0]);
            }
            proptest::prop_assert!((max_gap - TAU / n as f64).abs() < 1e-12);
        }
    }
}
