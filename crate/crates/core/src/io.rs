//! File formats.
//!
//! Raw arrays are header-less little-endian `f32` in C order: projections are
//! `(view, row, col)`, volumes `(z, y, x)`. Each array file `X` is paired with
//! a plain-text sidecar `X.hdr` of `key=value` lines; projection sidecars
//! reference a third file `X.angles` holding one angle (radians) per line.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.
//!
//! Phantom files hold one primitive per line, `#` starts a comment:
//!
//! ```text
//! sphere   cx cy cz radius density
//! box      cx cy cz half_x half_y half_z density
//! cylinder cx cy cz radius half_height density
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::geometry::{Phantom, Primitive, ProjectionStack, ScanGeometry, Shape, Volume};

/// Parsed `key=value` sidecar text. Keys keep their first occurrence order
/// irrelevant; duplicates are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    entries: BTreeMap<String, String>,
}

impl Sidecar {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Format(format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("missing key {key:?}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value for {key:?}: {raw:?}")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        parse_list(self.require(key)?, key)
    }
}

pub(crate) fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad list item for {key:?}: {s:?}")))
        })
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    let mut out = String::new();
    for (i, v) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
    out
}

fn write_detector_keys(out: &mut String, g: &ScanGeometry) {
    writeln!(out, "detector_rows={}", g.rows()).unwrap();
    writeln!(out, "detector_cols={}", g.cols()).unwrap();
    writeln!(out, "pixel_pitch={}", g.pixel_pitch()).unwrap();
    writeln!(out, "source_to_axis={}", g.source_to_axis()).unwrap();
    writeln!(out, "offset_row={}", g.offset_row()).unwrap();
    writeln!(out, "offset_col={}", g.offset_col()).unwrap();
}

/// Geometry as self-contained sidecar text with the angle list inline.
pub fn geometry_block(g: &ScanGeometry) -> String {
    let mut out = String::new();
    write_detector_keys(&mut out, g);
    writeln!(out, "angles={}", join(g.angles())).unwrap();
    out
}

/// Rebuilds a geometry from sidecar keys. Angles come from the inline
/// `angles` key or, failing that, from `angles_file` resolved against `base`.
pub fn geometry_from_sidecar(sc: &Sidecar, base: Option<&Path>) -> Result<ScanGeometry> {
    let angles: Vec<f64> = if let Some(inline) = sc.get("angles") {
        parse_list(inline, "angles")?
    } else {
        let name = sc.require("angles_file")?;
        let path = match base {
            Some(dir) => dir.join(name),
            None => PathBuf::from(name),
        };
        read_angles(&path)?
    };
    let offset_row = match sc.get("offset_row") {
        Some(_) => sc.parse_value("offset_row")?,
        None => 0.0,
    };
    let offset_col = match sc.get("offset_col") {
        Some(_) => sc.parse_value("offset_col")?,
        None => 0.0,
    };
    ScanGeometry::with_offsets(
        sc.parse_value("source_to_axis")?,
        sc.parse_value("detector_rows")?,
        sc.parse_value("detector_cols")?,
        sc.parse_value("pixel_pitch")?,
        angles,
        offset_row,
        offset_col,
    )
}

pub fn parse_geometry_block(text: &str) -> Result<ScanGeometry> {
    geometry_from_sidecar(&Sidecar::parse(text)?, None)
}

fn read_angles(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse()
                .map_err(|_| Error::Format(format!("bad angle {l:?} in {}", path.display())))
        })
        .collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    append_ext(path, "hdr")
}

pub fn angles_path(path: &Path) -> PathBuf {
    append_ext(path, "angles")
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn f32_to_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "raw payload length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = append_ext(path, "tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn projection_sidecar(stack: &ProjectionStack, angles_file: &str) -> String {
    let g = stack.geometry();
    let mut out = String::from("kind=projection\n");
    writeln!(out, "dims={},{},{}", g.n_views(), g.rows(), g.cols()).unwrap();
    write_detector_keys(&mut out, g);
    writeln!(out, "angles_file={angles_file}").unwrap();
    out
}

pub fn write_projections(path: &Path, stack: &ProjectionStack) -> Result<()> {
    let angles = angles_path(path);
    let angles_name = angles
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad path {}", path.display())))?
        .to_string();
    let mut angle_text = String::new();
    for a in stack.geometry().angles() {
        writeln!(angle_text, "{a}").unwrap();
    }
    fs::write(&angles, angle_text)?;
    fs::write(sidecar_path(path), projection_sidecar(stack, &angles_name))?;
    fs::write(path, f32_to_le_bytes(stack.data().iter().copied()))?;
    Ok(())
}

pub fn read_projections(path: &Path) -> Result<ProjectionStack> {
    let sc = Sidecar::parse(&fs::read_to_string(sidecar_path(path))?)?;
    if sc.get("kind") != Some("projection") {
        return Err(Error::Format(format!(
            "{} is not a projection sidecar",
            sidecar_path(path).display()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let geometry = geometry_from_sidecar(&sc, Some(base))?;
    let dims: Vec<usize> = sc.parse_list("dims")?;
    let expected = [geometry.n_views(), geometry.rows(), geometry.cols()];
    if dims != expected {
        return Err(Error::Format(format!(
            "dims {dims:?} disagree with geometry {expected:?}"
        )));
    }
    let values = f32_from_le_bytes(&fs::read(path)?)?;
    let data = Array3::from_shape_vec((expected[0], expected[1], expected[2]), values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    ProjectionStack::new(geometry, data)
}

pub fn volume_sidecar(volume: &Volume) -> String {
    let d = volume.dims();
    format!(
        "kind=volume\ndims={},{},{}\nvoxel_pitch={}\norder=z,y,x\n",
        d.nx,
        d.ny,
        d.nz,
        volume.voxel_pitch()
    )
}

pub fn volume_from_parts(sidecar: &str, raw: &[u8]) -> Result<Volume> {
    let sc = Sidecar::parse(sidecar)?;
    if sc.get("kind") != Some("volume") {
        return Err(Error::Format("not a volume sidecar".into()));
    }
    let dims: Vec<usize> = sc.parse_list("dims")?;
    let [nx, ny, nz] = dims[..] else {
        return Err(Error::Format(format!("volume dims must have 3 entries: {dims:?}")));
    };
    let values = f32_from_le_bytes(raw)?;
    let data = Array3::from_shape_vec((nz, ny, nx), values)
        .map_err(|e| Error::Format(format!("volume payload: {e}")))?;
    Volume::new(sc.parse_value("voxel_pitch")?, data)
}

pub fn write_volume(path: &Path, volume: &Volume) -> Result<()> {
    fs::write(sidecar_path(path), volume_sidecar(volume))?;
    fs::write(path, f32_to_le_bytes(volume.data().iter().copied()))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let sidecar = fs::read_to_string(sidecar_path(path))?;
    volume_from_parts(&sidecar, &fs::read(path)?)
}

pub fn parse_phantom(text: &str) -> Result<Phantom> {
    let mut primitives = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let kind = tokens.next().unwrap_or_default();
        let nums: Vec<f64> = tokens
            .map(|t| {
                t.parse().map_err(|_| {
                    Error::Format(format!("phantom line {}: bad number {t:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        let arity_err = |n: usize| {
            Error::Format(format!(
                "phantom line {}: {kind} takes {n} numbers, got {}",
                lineno + 1,
                nums.len()
            ))
        };
        let prim = match kind {
            "sphere" => {
                let [cx, cy, cz, r, d] = nums[..] else { return Err(arity_err(5)) };
                Primitive::sphere([cx, cy, cz], r, d)?
            }
            "box" => {
                let [cx, cy, cz, hx, hy, hz, d] = nums[..] else { return Err(arity_err(7)) };
                Primitive::cuboid([cx, cy, cz], [hx, hy, hz], d)?
            }
            "cylinder" => {
                let [cx, cy, cz, r, hh, d] = nums[..] else { return Err(arity_err(6)) };
                Primitive::cylinder([cx, cy, cz], r, hh, d)?
            }
            other => {
                return Err(Error::Format(format!(
                    "phantom line {}: unknown shape {other:?}",
                    lineno + 1
                )))
            }
        };
        primitives.push(prim);
    }
    Ok(Phantom::new(primitives))
}

pub fn format_phantom(phantom: &Phantom) -> String {
    let mut out = String::new();
    for p in &phantom.primitives {
        match p.shape {
            Shape::Sphere { center: c, radius } => {
                writeln!(out, "sphere {} {} {} {} {}", c[0], c[1], c[2], radius, p.density)
            }
            Shape::Box { center: c, half_extents: h } => writeln!(
                out,
                "box {} {} {} {} {} {} {}",
                c[0], c[1], c[2], h[0], h[1], h[2], p.density
            ),
            Shape::Cylinder { center: c, radius, half_height } => writeln!(
                out,
                "cylinder {} {} {} {} {} {}",
                c[0], c[1], c[2], radius, half_height, p.density
            ),
        }
        .unwrap();
    }
    out
}

pub fn read_phantom(path: &Path) -> Result<Phantom> {
    parse_phantom(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circular_geometry, VolumeDims};

    #[test]
    fn projection_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = ScanGeometry::with_offsets(
            123.456,
            3,
            4,
            0.37,
            vec![0.0, 0.1234567890123, 3.0],
            0.25,
            -1.0 / 3.0,
        )
        .unwrap();
        let data = Array3::from_shape_fn((3, 3, 4), |(v, r, c)| {
            (v as f32 + 0.1) * (r as f32 - 1.7) / (c as f32 + 0.3)
        });
        let stack = ProjectionStack::new(g, data).unwrap();
        let path = dir.path().join("scan.proj");
        write_projections(&path, &stack).unwrap();
        let back = read_projections(&path).unwrap();
        assert_eq!(back, stack);
        assert_eq!(
            fs::metadata(&path).unwrap().len(),
            3 * 3 * 4 * 4,
            "raw file is header-less f32"
        );
    }

    #[test]
    fn volume_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((2, 3, 4), |(z, y, x)| (100 * z + 10 * y + x) as f32);
        let vol = Volume::new(0.5, data).unwrap();
        let path = dir.path().join("v.vol");
        write_volume(&path, &vol).unwrap();
        assert_eq!(read_volume(&path).unwrap(), vol);
        let raw = fs::read(&path).unwrap();
        // C order (z, y, x): the second value is x = 1.
        assert_eq!(f32::from_le_bytes(raw[4..8].try_into().unwrap()), 1.0);
        assert_eq!(vol.dims(), VolumeDims::new(4, 3, 2));
    }

    #[test]
    fn geometry_block_round_trip() {
        let g = make_circular_geometry(720, 215, 256, 0.8, 500.0).unwrap();
        assert_eq!(parse_geometry_block(&geometry_block(&g)).unwrap(), g);
    }

    #[test]
    fn sidecar_rejects_garbage() {
        assert!(Sidecar::parse("no equals here").is_err());
        assert!(Sidecar::parse("a=1\na=2").is_err());
        let sc = Sidecar::parse("# comment\n\nx = 3\n").unwrap();
        assert_eq!(sc.parse_value::<u32>("x").unwrap(), 3);
        assert!(sc.require("y").is_err());
    }

    #[test]
    fn phantom_grammar() {
        let text = "# demo\nsphere 0 0 0 20 1\nbox 1 2 3 4 5 6 0.5 # trailing\ncylinder 0 0 0 5 10 -0.25\n";
        let p = parse_phantom(text).unwrap();
        assert_eq!(p.primitives.len(), 3);
        assert_eq!(parse_phantom(&format_phantom(&p)).unwrap(), p);
        assert!(parse_phantom("sphere 0 0 0 1").is_err());
        assert!(parse_phantom("cone 0 0 0 1 1").is_err());
        assert!(parse_phantom("sphere 0 0 0 -1 1").is_err());
    }
}
