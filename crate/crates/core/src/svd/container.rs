//! SVZ container.
//!
//! ```text
//! "SVZ1" | u16 version=1 | u32 n_views | u32 m | u32 n | u32 k
//! | u32 geometry_len | geometry text (key=value lines, angles inline)
//! | per view: m·k f32 (U, column-major) | k f64 (σ) | n·k f32 (V, column-major)
//! ```
//!
//! All integers and floats are little-endian.

use super::codec::{SvdScan, SvdView};
use crate::error::{Error, Result};
use crate::io::{geometry_block, parse_geometry_block};

pub const MAGIC: &[u8; 4] = b"SVZ1";
pub const VERSION: u16 = 1;
/// Bytes before the geometry text.
pub const FIXED_HEADER_LEN: usize = 4 + 2 + 4 * 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvzHeader {
    pub n_views: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
}

impl SvzHeader {
    pub fn view_len(&self) -> usize {
        view_len(self.rows, self.cols, self.rank)
    }
}

/// Serialized size of one view's factors.
pub fn view_len(rows: usize, cols: usize, rank: usize) -> usize {
    4 * rank * (rows + cols) + 8 * rank
}

fn u32_le(value: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(value)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::InvalidArgument(format!("{what} {value} exceeds u32")))
}

/// Header and geometry block, everything that precedes the view data.
pub fn encode_header(scan: &SvdScan) -> Result<Vec<u8>> {
    let g = scan.geometry();
    let text = geometry_block(g);
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN + text.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_le(g.n_views(), "n_views")?);
    out.extend_from_slice(&u32_le(g.rows(), "m")?);
    out.extend_from_slice(&u32_le(g.cols(), "n")?);
    out.extend_from_slice(&u32_le(scan.rank(), "k")?);
    out.extend_from_slice(&u32_le(text.len(), "geometry length")?);
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

pub fn encode_view(view: &SvdView) -> Vec<u8> {
    let mut out = Vec::with_capacity(view_len(view.rows(), view.cols(), view.rank()));
    out.extend(view.u().iter().flat_map(|x| x.to_le_bytes()));
    out.extend(view.singular_values().iter().flat_map(|x| x.to_le_bytes()));
    out.extend(view.v().iter().flat_map(|x| x.to_le_bytes()));
    out
}

pub fn write_svz(scan: &SvdScan) -> Result<Vec<u8>> {
    let mut out = encode_header(scan)?;
    for view in scan.views() {
        out.extend(encode_view(view));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated SVZ data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Parses the header. Returns the header, the geometry text and the number
/// of bytes consumed.
pub fn decode_header(bytes: &[u8]) -> Result<(SvzHeader, String, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad SVZ magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SVZ version {version}")));
    }
    let header = SvzHeader {
        n_views: r.u32()?,
        rows: r.u32()?,
        cols: r.u32()?,
        rank: r.u32()?,
    };
    let text_len = r.u32()?;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::Format("geometry block is not UTF-8".into()))?
        .to_string();
    Ok((header, text, r.pos))
}

pub fn decode_view(bytes: &[u8], rows: usize, cols: usize, rank: usize) -> Result<SvdView> {
    if bytes.len() != view_len(rows, cols, rank) {
        return Err(Error::Format(format!(
            "view payload is {} bytes, expected {}",
            bytes.len(),
            view_len(rows, cols, rank)
        )));
    }
    let (u_bytes, rest) = bytes.split_at(4 * rows * rank);
    let (s_bytes, v_bytes) = rest.split_at(8 * rank);
    let f32s = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let sigma = s_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SvdView::new(rows, cols, f32s(u_bytes), sigma, f32s(v_bytes))
}

pub fn read_svz(bytes: &[u8]) -> Result<SvdScan> {
    let (header, text, mut pos) = decode_header(bytes)?;
    let geometry = parse_geometry_block(&text)?;
    if (geometry.n_views(), geometry.rows(), geometry.cols())
        != (header.n_views, header.rows, header.cols)
    {
        return Err(Error::Format(format!(
            "SVZ header {header:?} disagrees with its geometry block"
        )));
    }
    let len = header.view_len();
    let expected = pos + header.n_views * len;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "SVZ is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut views = Vec::with_capacity(header.n_views);
    for _ in 0..header.n_views {
        views.push(decode_view(&bytes[pos..pos + len], header.rows, header.cols, header.rank)?);
        pos += len;
    }
    SvdScan::new(geometry, header.rank, views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_circular_geometry;
    use crate::svd::codec::svd_encode;
    use crate::geometry::ProjectionStack;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn small_scan(views: usize, rows: usize, cols: usize, k: usize, seed: u32) -> SvdScan {
        let g = make_circular_geometry(views, rows, cols, 0.5, 80.0).unwrap();
        let data = Array3::from_shape_fn((views, rows, cols), |(v, r, c)| {
            let h = (v as u32 * 7919 + r as u32 * 104729 + c as u32 * 1299709) ^ seed;
            (h % 1000) as f32 / 250.0 - 2.0
        });
        svd_encode(&ProjectionStack::new(g, data).unwrap(), k).unwrap()
    }

    #[test]
    fn golden_header_layout() {
        let scan = small_scan(2, 3, 2, 1, 0);
        let bytes = write_svz(&scan).unwrap();
        assert_eq!(&bytes[..4], b"SVZ1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[3, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &[2, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &[1, 0, 0, 0]);
        let text_len = u32::from_le_bytes(bytes[22..26].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[26..26 + text_len]).unwrap();
        assert!(text.starts_with("detector_rows=3\ndetector_cols=2\n"));
        assert_eq!(bytes.len(), 26 + text_len + 2 * (4 * (3 + 2) + 8));
        // First view: U column, then sigma as f64, then V column.
        let off = 26 + text_len;
        let u0 = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        assert_eq!(u0, scan.views()[0].u()[0]);
        let s0 = f64::from_le_bytes(bytes[off + 12..off + 20].try_into().unwrap());
        assert_eq!(s0, scan.views()[0].singular_values()[0]);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = write_svz(&small_scan(2, 4, 3, 2, 1)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_svz(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(read_svz(&bad).is_err());
        assert!(read_svz(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_svz(&long).is_err());
        let mut bad = bytes;
        bad[6] = 3; // n_views no longer matches geometry
        assert!(read_svz(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_read_write_is_bit_identical(
            views in 1usize..4, rows in 2usize..7, cols in 2usize..7, seed in any::<u32>(), kf in 0.0f64..1.0
        ) {
            let k = 1 + ((rows.min(cols) - 1) as f64 * kf) as usize;
            let scan = small_scan(views, rows, cols, k, seed);
            let bytes = write_svz(&scan).unwrap();
            let back = read_svz(&bytes).unwrap();
            prop_assert_eq!(&back, &scan);
            prop_assert_eq!(write_svz(&back).unwrap(), bytes);
        }
    }
}
