//! Session back end: NDJSON over TCP and WebSocket.

pub mod backend;
pub mod client;
pub mod queue;
pub mod reorder;
pub mod transport;

pub use backend::{start, BackendConfig, BackendHandle, ServerError, Status};
