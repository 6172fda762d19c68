//! Payload layouts for each frame type. All integers little-endian.
//!
//! | frame | payload |
//! |-------|---------|
//! | HELLO | `u16 version, u8 intent (0 new upload, 1 resume, 2 query), u64 scan_id` |
//! | SCAN_META | SVZ header and geometry block, byte-identical to the file prefix |
//! | VIEW_DATA | `u32 view index`, then the view's SVZ bytes |
//! | END_SCAN | empty |
//! | ACK | `u32 acknowledged frame type`, then a type-specific body |
//! | ERR | `u32 error code`, UTF-8 message |
//! | FETCH | `u64 scan_id, u8 kind (0 SVZ, 1 volume)`; volumes add `u32 nx, ny, nz, f64 pitch, u8 window, u8 weight` |
//! | RESULT | SVZ bytes, or `u32 sidecar length, sidecar text, f32 volume data` |
//!
//! ACK bodies: HELLO → `u64 scan_id, u32 expected_views, bitmap`;
//! SCAN_META and END_SCAN → `u64 scan_id`; VIEW_DATA → `u32 view index`.

use std::fmt;

use crate::fdk::{FdkOptions, FdkWeight, FilterWindow, RampFilter};
use crate::geometry::VolumeDims;

pub const PROTOCOL_VERSION: u16 = 1;

/// Server-issued token naming one uploaded scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScanId(pub u64);

impl fmt::Display for ScanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for ScanId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim(), 16).map(ScanId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ErrorCode {
    Malformed = 1,
    ProtocolOrder = 2,
    DuplicateView = 3,
    UnknownType = 4,
    UnknownScan = 5,
    Incomplete = 6,
    Storage = 7,
    InvalidScan = 8,
    Reconstruction = 9,
    Version = 10,
    Busy = 11,
}

impl ErrorCode {
    pub fn from_u32(code: u32) -> Option<Self> {
        use ErrorCode::*;
        [
            Malformed,
            ProtocolOrder,
            DuplicateView,
            UnknownType,
            UnknownScan,
            Incomplete,
            Storage,
            InvalidScan,
            Reconstruction,
            Version,
            Busy,
        ]
        .into_iter()
        .find(|c| *c as u32 == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelloIntent {
    Upload,
    Resume(ScanId),
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub version: u16,
    pub intent: HelloIntent,
}

#[derive(Debug)]
pub struct PayloadError(pub String);

impl fmt::Display for PayloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

type Parsed<T> = Result<T, PayloadError>;

/// Cursor over a payload.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Parsed<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PayloadError(format!(
                "payload truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Parsed<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Parsed<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Parsed<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Parsed<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Parsed<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }

    pub(crate) fn finish(&self) -> Parsed<()> {
        if self.pos != self.bytes.len() {
            return Err(PayloadError(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let (intent, id) = match self.intent {
            HelloIntent::Upload => (0u8, 0u64),
            HelloIntent::Resume(id) => (1, id.0),
            HelloIntent::Query => (2, 0),
        };
        let mut out = self.version.to_le_bytes().to_vec();
        out.push(intent);
        out.extend_from_slice(&id.to_le_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Parsed<Self> {
        let mut c = Cursor::new(payload);
        let version = c.u16()?;
        let intent = c.u8()?;
        let id = c.u64()?;
        c.finish()?;
        let intent = match intent {
            0 => HelloIntent::Upload,
            1 => HelloIntent::Resume(ScanId(id)),
            2 => HelloIntent::Query,
            other => return Err(PayloadError(format!("unknown HELLO intent {other}"))),
        };
        Ok(Self { version, intent })
    }
}

/// Upload progress reported in the ACK to HELLO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionStatus {
    pub scan_id: ScanId,
    /// Zero until SCAN_META has been accepted.
    pub expected_views: u32,
    pub received: Vec<bool>,
}

impl SessionStatus {
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = self.scan_id.0.to_le_bytes().to_vec();
        out.extend_from_slice(&self.expected_views.to_le_bytes());
        let mut bitmap = vec![0u8; self.received.len().div_ceil(8)];
        for (i, &got) in self.received.iter().enumerate() {
            if got {
                bitmap[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend(bitmap);
        out
    }

    pub fn decode(body: &[u8]) -> Parsed<Self> {
        Self::decode_body(&mut Cursor::new(body))
    }

    pub(crate) fn decode_body(c: &mut Cursor<'_>) -> Parsed<Self> {
        let scan_id = ScanId(c.u64()?);
        let expected_views = c.u32()?;
        let bitmap = c.take((expected_views as usize).div_ceil(8))?;
        c.finish()?;
        let received = (0..expected_views as usize)
            .map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        Ok(Self {
            scan_id,
            expected_views,
            received,
        })
    }
}

pub fn ack_payload(acked: u32, body: &[u8]) -> Vec<u8> {
    let mut out = acked.to_le_bytes().to_vec();
    out.extend_from_slice(body);
    out
}

pub fn err_payload(code: ErrorCode, message: &str) -> Vec<u8> {
    let mut out = (code as u32).to_le_bytes().to_vec();
    out.extend_from_slice(message.as_bytes());
    out
}

pub fn decode_err(payload: &[u8]) -> Parsed<(u32, String)> {
    let mut c = Cursor::new(payload);
    let code = c.u32()?;
    Ok((code, String::from_utf8_lossy(c.rest()).into_owned()))
}

pub fn view_payload(index: u32, view_bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + view_bytes.len());
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(view_bytes);
    out
}

/// Parameters for a server-side reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconParams {
    pub dims: VolumeDims,
    pub voxel_pitch: f64,
    pub options: FdkOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FetchRequest {
    Svz(ScanId),
    Volume(ScanId, ReconParams),
}

impl FetchRequest {
    pub fn scan_id(&self) -> ScanId {
        match *self {
            FetchRequest::Svz(id) | FetchRequest::Volume(id, _) => id,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.scan_id().0.to_le_bytes().to_vec();
        match self {
            FetchRequest::Svz(_) => out.push(0),
            FetchRequest::Volume(_, p) => {
                out.push(1);
                for n in [p.dims.nx, p.dims.ny, p.dims.nz] {
                    out.extend_from_slice(&(n as u32).to_le_bytes());
                }
                out.extend_from_slice(&p.voxel_pitch.to_le_bytes());
                out.push(match p.options.filter.window {
                    FilterWindow::None => 0,
                    FilterWindow::Hann => 1,
                });
                out.push(match p.options.weight {
                    FdkWeight::Standard => 0,
                    FdkWeight::InverseU => 1,
                });
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Parsed<Self> {
        let mut c = Cursor::new(payload);
        let id = ScanId(c.u64()?);
        let req = match c.u8()? {
            0 => FetchRequest::Svz(id),
            1 => {
                let dims = VolumeDims::new(c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
                let voxel_pitch = c.f64()?;
                let window = match c.u8()? {
                    0 => FilterWindow::None,
                    1 => FilterWindow::Hann,
                    w => return Err(PayloadError(format!("unknown filter window {w}"))),
                };
                let weight = match c.u8()? {
                    0 => FdkWeight::Standard,
                    1 => FdkWeight::InverseU,
                    w => return Err(PayloadError(format!("unknown fdk weight {w}"))),
                };
                FetchRequest::Volume(
                    id,
                    ReconParams {
                        dims,
                        voxel_pitch,
                        options: FdkOptions {
                            filter: RampFilter {
                                window,
                                ..RampFilter::default()
                            },
                            weight,
                        },
                    },
                )
            }
            k => return Err(PayloadError(format!("unknown fetch kind {k}"))),
        };
        c.finish()?;
        Ok(req)
    }
}
