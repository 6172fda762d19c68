//! Compute-side service: stores uploaded scans and reconstructs on request.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::frame::{read_frame, write_frame, Frame, FrameType};
use super::message::{
    ack_payload, err_payload, ErrorCode, FetchRequest, Hello, HelloIntent, ScanId, SessionStatus,
    PROTOCOL_VERSION,
};
use super::session::{ScanSession, SessionState, Transition};
use crate::fdk::reconstruct;
use crate::io::{f32_to_le_bytes, parse_geometry_block, volume_sidecar, write_atomic};
use crate::svd::container::{decode_header, decode_view, SvzHeader};
use crate::svd::{read_svz, svd_decode};

struct Upload {
    session: ScanSession,
    header: Option<(SvzHeader, Vec<u8>)>,
    views: Vec<Option<Vec<u8>>>,
    /// Bumped whenever a connection attaches; stale writers detect the change.
    generation: u64,
}

#[derive(Default)]
struct State {
    uploads: HashMap<ScanId, Upload>,
    trace: Vec<Transition>,
}

struct Shared {
    store_dir: PathBuf,
    state: Mutex<State>,
    /// Reconstructions run one at a time; each one already uses the whole
    /// worker pool.
    recon_slot: Mutex<()>,
    shutdown: AtomicBool,
    io_timeout: Option<Duration>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn store_path(&self, id: ScanId) -> PathBuf {
        self.store_dir.join(format!("{id}.svz"))
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

/// Handle to a server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, store_dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(store_dir)?;
        let probe = store_dir.join(".write-probe");
        std::fs::write(&probe, b"")?;
        std::fs::remove_file(&probe)?;
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                store_dir: store_dir.to_path_buf(),
                state: Mutex::new(State::default()),
                recon_slot: Mutex::new(()),
                shutdown: AtomicBool::new(false),
                io_timeout: Some(Duration::from_secs(600)),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until shut down, one thread per connection.
    pub fn run(self) {
        for conn in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let shared = Arc::clone(&self.shared);
                    thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = handle_connection(stream, &shared) {
                            debug!("connection {peer:?} ended: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shared = Arc::clone(&self.shared);
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            shared,
            thread: Some(thread),
        })
    }
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn store_dir(&self) -> &Path {
        &self.shared.store_dir
    }

    pub fn store_path(&self, id: ScanId) -> PathBuf {
        self.shared.store_path(id)
    }

    pub fn sessions(&self) -> Vec<ScanSession> {
        let mut out: Vec<_> = self
            .shared
            .lock()
            .uploads
            .values()
            .map(|u| u.session.clone())
            .collect();
        out.sort_by_key(|s| s.scan_id);
        out
    }

    pub fn session(&self, id: ScanId) -> Option<ScanSession> {
        self.shared.lock().uploads.get(&id).map(|u| u.session.clone())
    }

    /// Every session state change so far, in order.
    pub fn transitions(&self) -> Vec<Transition> {
        self.shared.lock().trace.clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds and serves forever.
pub fn serve<A: ToSocketAddrs>(listen_addr: A, store_dir: &Path) -> io::Result<()> {
    let server = Server::bind(listen_addr, store_dir)?;
    info!("listening on {}", server.local_addr()?);
    server.run();
    Ok(())
}

enum Conn {
    AwaitHello,
    Query,
    Upload { id: ScanId, generation: u64 },
}

/// Outcome of handling one frame.
enum Reply {
    Frame(FrameType, Vec<u8>),
    /// Send the frame, then drop the connection.
    Close(FrameType, Vec<u8>),
}

fn err(code: ErrorCode, msg: impl AsRef<str>) -> Reply {
    Reply::Frame(FrameType::Err, err_payload(code, msg.as_ref()))
}

fn fatal(code: ErrorCode, msg: impl AsRef<str>) -> Reply {
    Reply::Close(FrameType::Err, err_payload(code, msg.as_ref()))
}

fn ack(acked: FrameType, body: &[u8]) -> Reply {
    Reply::Frame(FrameType::Ack, ack_payload(acked as u32, body))
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_read_timeout(shared.io_timeout)?;
    stream.set_write_timeout(shared.io_timeout)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut conn = Conn::AwaitHello;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) if e.kind() == ErrorKind::InvalidData => {
                fail_current(shared, &conn, "oversized frame");
                write_frame(&mut writer, FrameType::Err, &err_payload(ErrorCode::Malformed, &e.to_string()))?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if shared.shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match handle_frame(shared, &mut conn, frame) {
            Reply::Frame(kind, payload) => {
                write_frame(&mut writer, kind, &payload)?;
            }
            Reply::Close(kind, payload) => {
                write_frame(&mut writer, kind, &payload)?;
                return Ok(());
            }
        }
    }
}

fn fail_current(shared: &Shared, conn: &Conn, reason: &str) {
    if let Conn::Upload { id, generation } = conn {
        let mut guard = shared.lock();
        let state = &mut *guard;
        if let Some(up) = state.uploads.get_mut(id) {
            if up.generation == *generation {
                record_upload(&mut state.trace, up, SessionState::Failed, reason);
            }
        }
    }
}

fn record_upload(trace: &mut Vec<Transition>, up: &mut Upload, to: SessionState, reason: &str) {
    if let Some(t) = up.session.transition(to, reason) {
        info!("scan {}: {:?} -> {:?} ({reason})", t.scan_id, t.from, t.to);
        trace.push(t);
        // Factors are no longer needed once the scan is settled.
        up.views = Vec::new();
    }
}

fn handle_frame(shared: &Shared, conn: &mut Conn, frame: Frame) -> Reply {
    let Some(kind) = frame.kind() else {
        return err(ErrorCode::UnknownType, format!("unknown frame type {}", frame.code));
    };
    match (kind, &*conn) {
        (FrameType::Hello, Conn::AwaitHello) => on_hello(shared, conn, &frame.payload),
        (FrameType::Hello, _) => fatal(ErrorCode::ProtocolOrder, "HELLO sent twice"),
        (_, Conn::AwaitHello) => fatal(ErrorCode::ProtocolOrder, "expected HELLO first"),
        (FrameType::Fetch, _) => on_fetch(shared, &frame.payload),
        (FrameType::ScanMeta | FrameType::ViewData | FrameType::EndScan, Conn::Upload { id, generation }) => {
            let (id, generation) = (*id, *generation);
            on_upload_frame(shared, id, generation, kind, &frame.payload)
        }
        (FrameType::ScanMeta | FrameType::ViewData | FrameType::EndScan, Conn::Query) => {
            fatal(ErrorCode::ProtocolOrder, "upload frame on a query connection")
        }
        (FrameType::Ack | FrameType::Err | FrameType::Result, _) => {
            fail_current(shared, conn, "client sent a server-only frame");
            fatal(ErrorCode::ProtocolOrder, "server-only frame type from client")
        }
    }
}

fn on_hello(shared: &Shared, conn: &mut Conn, payload: &[u8]) -> Reply {
    let hello = match Hello::decode(payload) {
        Ok(h) => h,
        Err(e) => return fatal(ErrorCode::Malformed, e.to_string()),
    };
    if hello.version != PROTOCOL_VERSION {
        return fatal(
            ErrorCode::Version,
            format!("protocol version {} not supported", hello.version),
        );
    }
    let mut state = shared.lock();
    match hello.intent {
        HelloIntent::Query => {
            *conn = Conn::Query;
            ack(FrameType::Hello, &[])
        }
        HelloIntent::Upload => {
            let id = loop {
                let candidate = ScanId(rand::random::<u64>() | 1);
                if !state.uploads.contains_key(&candidate) && !shared.store_path(candidate).exists() {
                    break candidate;
                }
            };
            state.uploads.insert(
                id,
                Upload {
                    session: ScanSession::new(id),
                    header: None,
                    views: Vec::new(),
                    generation: 0,
                },
            );
            info!("scan {id}: opened");
            *conn = Conn::Upload { id, generation: 0 };
            let status = SessionStatus {
                scan_id: id,
                expected_views: 0,
                received: Vec::new(),
            };
            ack(FrameType::Hello, &status.encode_body())
        }
        HelloIntent::Resume(id) => {
            let Some(up) = state.uploads.get_mut(&id) else {
                return fatal(ErrorCode::UnknownScan, format!("no upload {id}"));
            };
            if up.session.state == SessionState::Failed {
                return fatal(ErrorCode::UnknownScan, format!("upload {id} failed, not resumable"));
            }
            up.generation += 1;
            *conn = Conn::Upload {
                id,
                generation: up.generation,
            };
            info!(
                "scan {id}: resumed with {}/{} views",
                up.session.received_views, up.session.expected_views
            );
            let status = SessionStatus {
                scan_id: id,
                expected_views: up.session.expected_views as u32,
                received: if up.session.state == SessionState::Complete {
                    vec![true; up.session.expected_views]
                } else {
                    up.views.iter().map(Option::is_some).collect()
                },
            };
            ack(FrameType::Hello, &status.encode_body())
        }
    }
}

fn on_upload_frame(
    shared: &Shared,
    id: ScanId,
    generation: u64,
    kind: FrameType,
    payload: &[u8],
) -> Reply {
    let mut guard = shared.lock();
    let state = &mut *guard;
    let Some(up) = state.uploads.get_mut(&id) else {
        return fatal(ErrorCode::UnknownScan, format!("no upload {id}"));
    };
    if up.generation != generation {
        return fatal(ErrorCode::Busy, "another connection took over this upload");
    }
    if up.session.state == SessionState::Complete && kind == FrameType::EndScan {
        // The previous END_SCAN was stored but its ACK may have been lost.
        return ack(FrameType::EndScan, &id.0.to_le_bytes());
    }
    if up.session.state != SessionState::Open {
        return fatal(
            ErrorCode::ProtocolOrder,
            format!("upload {id} is {:?}", up.session.state),
        );
    }
    let trace = &mut state.trace;
    match kind {
        FrameType::ScanMeta => {
            if up.header.is_some() {
                record_upload(trace, up, SessionState::Failed, "duplicate SCAN_META");
                return fatal(ErrorCode::ProtocolOrder, "SCAN_META already received");
            }
            let parsed = decode_header(payload).and_then(|(h, text, used)| {
                if h.n_views == 0 {
                    return Ok(h);
                }
                let g = parse_geometry_block(&text)?;
                if used != payload.len() {
                    return Err(crate::Error::Format("trailing bytes after geometry".into()));
                }
                if (g.n_views(), g.rows(), g.cols()) != (h.n_views, h.rows, h.cols) {
                    return Err(crate::Error::Format("header disagrees with geometry".into()));
                }
                if h.rank == 0 || h.rank > h.rows.min(h.cols) {
                    return Err(crate::Error::Format(format!("rank {} out of range", h.rank)));
                }
                Ok(h)
            });
            let header = match parsed {
                Ok(h) if h.n_views == 0 => {
                    record_upload(trace, up, SessionState::Failed, "zero-view scan");
                    return fatal(ErrorCode::InvalidScan, "scan has no views");
                }
                Ok(h) => h,
                Err(e) => {
                    record_upload(trace, up, SessionState::Failed, "bad SCAN_META");
                    return fatal(ErrorCode::InvalidScan, e.to_string());
                }
            };
            up.session.expected_views = header.n_views;
            up.views = vec![None; header.n_views];
            up.header = Some((header, payload.to_vec()));
            ack(FrameType::ScanMeta, &id.0.to_le_bytes())
        }
        FrameType::ViewData => {
            let Some((header, _)) = up.header else {
                record_upload(trace, up, SessionState::Failed, "VIEW_DATA before SCAN_META");
                return fatal(ErrorCode::ProtocolOrder, "VIEW_DATA before SCAN_META");
            };
            if payload.len() < 4 {
                record_upload(trace, up, SessionState::Failed, "short VIEW_DATA");
                return fatal(ErrorCode::Malformed, "VIEW_DATA without index");
            }
            let index = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
            let body = &payload[4..];
            if index >= header.n_views {
                record_upload(trace, up, SessionState::Failed, "view index out of range");
                return fatal(ErrorCode::Malformed, format!("view index {index} out of range"));
            }
            if up.views[index].is_some() {
                return err(ErrorCode::DuplicateView, format!("view {index} already received"));
            }
            if let Err(e) = decode_view(body, header.rows, header.cols, header.rank) {
                record_upload(trace, up, SessionState::Failed, "bad view payload");
                return fatal(ErrorCode::Malformed, format!("view {index}: {e}"));
            }
            up.views[index] = Some(body.to_vec());
            up.session.received_views += 1;
            ack(FrameType::ViewData, &(index as u32).to_le_bytes())
        }
        FrameType::EndScan => {
            let Some((_, header_bytes)) = &up.header else {
                record_upload(trace, up, SessionState::Failed, "END_SCAN before SCAN_META");
                return fatal(ErrorCode::ProtocolOrder, "END_SCAN before SCAN_META");
            };
            if up.session.received_views != up.session.expected_views {
                return err(
                    ErrorCode::Incomplete,
                    format!(
                        "{} of {} views received",
                        up.session.received_views, up.session.expected_views
                    ),
                );
            }
            let mut bytes = header_bytes.clone();
            for v in up.views.iter().flatten() {
                bytes.extend_from_slice(v);
            }
            if let Err(e) = write_atomic(&shared.store_path(id), &bytes) {
                warn!("scan {id}: store failed: {e}");
                return err(ErrorCode::Storage, format!("store failed ({:?}): {e}", e.kind()));
            }
            record_upload(trace, up, SessionState::Complete, "stored");
            ack(FrameType::EndScan, &id.0.to_le_bytes())
        }
        _ => unreachable!(),
    }
}

fn on_fetch(shared: &Shared, payload: &[u8]) -> Reply {
    let req = match FetchRequest::decode(payload) {
        Ok(r) => r,
        Err(e) => return err(ErrorCode::Malformed, e.to_string()),
    };
    let id = req.scan_id();
    let bytes = match std::fs::read(shared.store_path(id)) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return err(ErrorCode::UnknownScan, format!("no completed scan {id}"))
        }
        Err(e) => return err(ErrorCode::Storage, format!("read failed ({:?}): {e}", e.kind())),
    };
    match req {
        FetchRequest::Svz(_) => Reply::Frame(FrameType::Result, bytes),
        FetchRequest::Volume(_, params) => {
            let _slot = shared.recon_slot.lock().unwrap_or_else(|p| p.into_inner());
            let volume = read_svz(&bytes)
                .and_then(|scan| svd_decode(&scan))
                .and_then(|stack| {
                    reconstruct(&stack, params.dims, params.voxel_pitch, &params.options)
                });
            match volume {
                Ok(v) => {
                    let sidecar = volume_sidecar(&v);
                    let mut out = (sidecar.len() as u32).to_le_bytes().to_vec();
                    out.extend_from_slice(sidecar.as_bytes());
                    out.extend(f32_to_le_bytes(v.data().iter().copied()));
                    Reply::Frame(FrameType::Result, out)
                }
                Err(e) => err(ErrorCode::Reconstruction, e.to_string()),
            }
        }
    }
}
