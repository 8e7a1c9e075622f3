//! Distributes the similarity computation over TCP.
//!
//! One coordinator owns the standardized feature matrix, splits the row
//! range into tasks, and hands them out to however many workers connect.
//! Each worker receives the full dataset once, then computes similarity
//! rows task by task and streams the results back. Assembly is keyed by
//! row index, so the finished matrix is bit-identical to a single-process
//! run no matter how tasks land on workers or in what order results
//! arrive.

mod coordinator;
mod protocol;
mod worker;

pub use coordinator::{
    coordinate, Coordinator, CoordinatorConfig, WorkerSession, WorkerState,
};
pub use protocol::{
    encode_frame, plan_tasks, write_message, FrameReader, Message, TaskDescriptor,
    MAX_FRAME_LEN, PROTOCOL_VERSION,
};
pub use worker::serve_worker;

/// Failures of the wire protocol and of coordination.
#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds the 64 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("connection closed by peer")]
    ConnectionClosed,
    #[error("expected {expected}, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },
    #[error("dataset shape mismatch: {0}")]
    BadDataset(String),
    #[error("peer reported error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("no worker connected within {0:?}")]
    StartupTimeout(std::time::Duration),
    #[error("all workers lost with {pending} tasks pending")]
    AllWorkersLost { pending: usize },
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
