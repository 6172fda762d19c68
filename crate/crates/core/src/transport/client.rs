//! Scanner-side client with resumable uploads.

use std::io::{self, BufReader, BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::frame::{read_frame, write_frame, Frame, FrameType};
use super::message::{
    decode_err, view_payload, FetchRequest, Hello, HelloIntent, ReconParams, ScanId,
    SessionStatus, PROTOCOL_VERSION,
};
use crate::geometry::Volume;
use crate::io::volume_from_parts;
use crate::svd::container::decode_header;
use crate::svd::{write_svz, SvdScan};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    /// Connection-level failure; the operation may be retried.
    #[error("connection error: {0}")]
    Transient(#[from] io::Error),
    #[error("server error {code}: {message}")]
    Server { code: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Data(#[from] crate::Error),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        matches!(self, TransportError::Transient(_))
    }
}

pub type TransportResult<T> = std::result::Result<T, TransportError>;

/// An acknowledgement as received: the frame type it answers and its body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckRecord {
    pub acked: u32,
    pub body: Vec<u8>,
}

impl AckRecord {
    /// View index for a VIEW_DATA acknowledgement.
    pub fn view_index(&self) -> Option<u32> {
        (self.acked == FrameType::ViewData as u32 && self.body.len() == 4)
            .then(|| u32::from_le_bytes(self.body[..4].try_into().unwrap()))
    }
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    bytes_sent: u64,
    frames_sent: u64,
    acks: Vec<AckRecord>,
}

fn protocol(msg: impl Into<String>) -> TransportError {
    TransportError::Protocol(msg.into())
}

impl Client {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> TransportResult<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            bytes_sent: 0,
            frames_sent: 0,
            acks: Vec::new(),
        })
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn acks(&self) -> &[AckRecord] {
        &self.acks
    }

    pub fn send(&mut self, kind: FrameType, payload: &[u8]) -> TransportResult<()> {
        self.bytes_sent += write_frame(&mut self.writer, kind, payload)? as u64;
        self.frames_sent += 1;
        Ok(())
    }

    pub fn recv(&mut self) -> TransportResult<Frame> {
        match read_frame(&mut self.reader) {
            Ok(f) => Ok(f),
            Err(e) if e.kind() == ErrorKind::InvalidData => Err(protocol(e.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    /// Sends a frame and waits for its ACK, returning the ACK body.
    fn exchange(&mut self, kind: FrameType, payload: &[u8]) -> TransportResult<Vec<u8>> {
        self.send(kind, payload)?;
        let reply = self.recv()?;
        match reply.kind() {
            Some(FrameType::Ack) => {
                if reply.payload.len() < 4 {
                    return Err(protocol("short ACK"));
                }
                let acked = u32::from_le_bytes(reply.payload[..4].try_into().unwrap());
                if acked != kind as u32 {
                    return Err(protocol(format!("ACK for type {acked}, expected {}", kind as u32)));
                }
                let body = reply.payload[4..].to_vec();
                self.acks.push(AckRecord {
                    acked,
                    body: body.clone(),
                });
                Ok(body)
            }
            Some(FrameType::Err) => Err(server_error(&reply.payload)),
            _ => Err(protocol(format!("unexpected reply type {}", reply.code))),
        }
    }

    fn hello(&mut self, intent: HelloIntent) -> TransportResult<Vec<u8>> {
        let hello = Hello {
            version: PROTOCOL_VERSION,
            intent,
        };
        self.exchange(FrameType::Hello, &hello.encode())
    }

    pub fn hello_new(&mut self) -> TransportResult<SessionStatus> {
        let body = self.hello(HelloIntent::Upload)?;
        SessionStatus::decode(&body).map_err(|e| protocol(e.to_string()))
    }

    pub fn hello_resume(&mut self, id: ScanId) -> TransportResult<SessionStatus> {
        let body = self.hello(HelloIntent::Resume(id))?;
        SessionStatus::decode(&body).map_err(|e| protocol(e.to_string()))
    }

    pub fn hello_query(&mut self) -> TransportResult<()> {
        self.hello(HelloIntent::Query).map(drop)
    }

    /// Sends the container header and geometry block.
    pub fn send_meta(&mut self, header: &[u8]) -> TransportResult<()> {
        self.exchange(FrameType::ScanMeta, header).map(drop)
    }

    pub fn send_view(&mut self, index: u32, view: &[u8]) -> TransportResult<()> {
        let body = self.exchange(FrameType::ViewData, &view_payload(index, view))?;
        if body != index.to_le_bytes() {
            return Err(protocol(format!("ACK does not match view {index}")));
        }
        Ok(())
    }

    pub fn end_scan(&mut self) -> TransportResult<()> {
        self.exchange(FrameType::EndScan, &[]).map(drop)
    }

    fn fetch(&mut self, req: &FetchRequest) -> TransportResult<Vec<u8>> {
        self.send(FrameType::Fetch, &req.encode())?;
        let reply = self.recv()?;
        match reply.kind() {
            Some(FrameType::Result) => Ok(reply.payload),
            Some(FrameType::Err) => Err(server_error(&reply.payload)),
            _ => Err(protocol(format!("unexpected reply type {}", reply.code))),
        }
    }

    pub fn fetch_svz(&mut self, id: ScanId) -> TransportResult<Vec<u8>> {
        self.fetch(&FetchRequest::Svz(id))
    }

    pub fn fetch_volume(&mut self, id: ScanId, params: ReconParams) -> TransportResult<Volume> {
        let bytes = self.fetch(&FetchRequest::Volume(id, params))?;
        if bytes.len() < 4 {
            return Err(protocol("short RESULT"));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let sidecar = bytes
            .get(4..4 + n)
            .ok_or_else(|| protocol("RESULT sidecar truncated"))?;
        let sidecar = std::str::from_utf8(sidecar).map_err(|_| protocol("sidecar is not UTF-8"))?;
        Ok(volume_from_parts(sidecar, &bytes[4 + n..])?)
    }
}

fn server_error(payload: &[u8]) -> TransportError {
    match decode_err(payload) {
        Ok((code, message)) => TransportError::Server { code, message },
        Err(e) => protocol(format!("malformed ERR: {e}")),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UploadOptions {
    /// Connection attempts before giving up.
    pub max_attempts: usize,
    pub timeout: Duration,
    /// Delay before the first retry, doubled on each further one.
    pub backoff: Duration,
}

impl Default for UploadOptions {
    fn default() -> Self {
        Self {
            max_attempts: 8,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadReport {
    pub scan_id: ScanId,
    /// Every ACK received, across all attempts.
    pub acks: Vec<AckRecord>,
    pub bytes_sent: u64,
    pub frames_sent: u64,
    pub attempts: usize,
}

pub fn upload<A: ToSocketAddrs>(
    addr: A,
    scan: &SvdScan,
    opts: &UploadOptions,
) -> TransportResult<UploadReport> {
    upload_bytes(addr, &write_svz(scan)?, opts)
}

/// Uploads an encoded container, reconnecting and resuming after connection
/// failures. Views already held by the server are not sent again.
pub fn upload_bytes<A: ToSocketAddrs>(
    addr: A,
    svz: &[u8],
    opts: &UploadOptions,
) -> TransportResult<UploadReport> {
    let (header, _, header_len) = decode_header(svz)?;
    let view_len = header.view_len();
    if svz.len() != header_len + header.n_views * view_len {
        return Err(crate::Error::Format("container length does not match header".into()).into());
    }
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(ErrorKind::InvalidInput, "no address"))?;

    let mut report = UploadReport {
        scan_id: ScanId(0),
        acks: Vec::new(),
        bytes_sent: 0,
        frames_sent: 0,
        attempts: 0,
    };
    let mut scan_id: Option<ScanId> = None;
    let mut backoff = opts.backoff;
    loop {
        report.attempts += 1;
        let mut client = None;
        let result = (|| {
            let c = client.insert(Client::connect(addr, opts.timeout)?);
            let status = match scan_id {
                None => c.hello_new()?,
                Some(id) => c.hello_resume(id)?,
            };
            scan_id = Some(status.scan_id);
            if status.expected_views == 0 {
                c.send_meta(&svz[..header_len])?;
            } else if status.expected_views as usize != header.n_views {
                return Err(protocol("server holds a different scan under this id"));
            }
            for i in 0..header.n_views {
                if status.received.get(i).copied().unwrap_or(false) {
                    continue;
                }
                let start = header_len + i * view_len;
                c.send_view(i as u32, &svz[start..start + view_len])?;
            }
            c.end_scan()
        })();
        if let Some(c) = client {
            report.bytes_sent += c.bytes_sent;
            report.frames_sent += c.frames_sent;
            report.acks.extend(c.acks);
        }
        match result {
            Ok(()) => {
                report.scan_id = scan_id.expect("set by HELLO");
                return Ok(report);
            }
            Err(e) if e.is_transient() && report.attempts < opts.max_attempts => {
                warn!("upload attempt {} failed: {e}; retrying", report.attempts);
                thread::sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
            Err(e) => {
                debug!("upload gave up after {} attempts", report.attempts);
                return Err(e);
            }
        }
    }
}
