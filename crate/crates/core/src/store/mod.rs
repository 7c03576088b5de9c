//! UUID-keyed data and metadata tables, the TCP server in front of them and
//! a blocking admin client.

mod admin;
mod backend;
mod server;

pub use admin::AdminClient;
pub use backend::{check_pair, put_sample_atomic, MemoryBackend, StoreBackend, TableKind, TableSpec};
pub use server::{execute, serve, ServerConfig, ServerHandle, ServerStats};

use thiserror::Error;

use crate::wire::Status;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("duplicate key: {0}")]
    DuplicateKey(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("server startup failed: {0}")]
    Startup(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("connection: {0}")]
    Connect(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    /// Response status reporting this error.
    pub fn status(&self) -> Status {
        match self {
            StoreError::NotFound(_) => Status::NotFound,
            StoreError::DuplicateKey(_) | StoreError::InvalidInput(_) | StoreError::Protocol(_) => Status::BadRequest,
            _ => Status::ServerError,
        }
    }

    /// Rebuilds an error from a non-OK response.
    pub fn from_response(status: Status, msg: &str) -> Self {
        let strip = |p: &str| msg.strip_prefix(p).unwrap_or(msg).to_owned();
        match status {
            Status::NotFound => StoreError::NotFound(strip("not found: ")),
            Status::BadRequest if msg.starts_with("duplicate key: ") => StoreError::DuplicateKey(strip("duplicate key: ")),
            Status::BadRequest if msg.starts_with("invalid input: ") => StoreError::InvalidInput(strip("invalid input: ")),
            Status::BadRequest => StoreError::Protocol(msg.to_owned()),
            _ => StoreError::Backend(msg.to_owned()),
        }
    }
}
