//! Framed TCP protocol between scanner and compute service.
//!
//! Every frame is `u32 type | u32 length | payload`, little-endian. Uploads
//! are stop-and-wait: each frame is acknowledged before the next is sent.

pub mod client;
pub mod frame;
pub mod message;
pub mod server;
pub mod session;

pub use client::{upload, upload_bytes, AckRecord, Client, TransportError, UploadOptions, UploadReport};
pub use frame::{read_frame, write_frame, Frame, FrameType};
pub use message::{ErrorCode, FetchRequest, HelloIntent, ReconParams, ScanId, SessionStatus};
pub use server::{serve, Server, ServerHandle};
pub use session::{ScanSession, SessionState, Transition};
