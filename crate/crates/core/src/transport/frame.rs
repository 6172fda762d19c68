//! Wire framing: `u32 LE type | u32 LE length | payload`.

use std::io::{self, Read, Write};

pub const HEADER_LEN: usize = 8;
/// Upper bound on a single payload; larger lengths are treated as corrupt.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum FrameType {
    Hello = 1,
    ScanMeta = 2,
    ViewData = 3,
    EndScan = 4,
    Ack = 5,
    Err = 6,
    Fetch = 7,
    Result = 8,
}

impl FrameType {
    pub fn from_u32(code: u32) -> Option<Self> {
        Some(match code {
            1 => Self::Hello,
            2 => Self::ScanMeta,
            3 => Self::ViewData,
            4 => Self::EndScan,
            5 => Self::Ack,
            6 => Self::Err,
            7 => Self::Fetch,
            8 => Self::Result,
            _ => return None,
        })
    }
}

/// A frame as read off the wire. The type code is kept raw so that unknown
/// codes can be answered instead of dropping the connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub code: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Self {
            code: kind as u32,
            payload,
        }
    }

    pub fn kind(&self) -> Option<FrameType> {
        FrameType::from_u32(self.code)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.code.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Writes one frame, returning the bytes put on the wire.
pub fn write_frame<W: Write>(w: &mut W, kind: FrameType, payload: &[u8]) -> io::Result<usize> {
    if payload.len() > MAX_PAYLOAD {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("payload of {} bytes exceeds frame limit", payload.len()),
        ));
    }
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&(kind as u32).to_le_bytes());
    header[4..].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(HEADER_LEN + payload.len())
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Frame> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let code = u32::from_le_bytes(header[..4].try_into().unwrap());
    let len = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Frame { code, payload })
}
