//! Frame and message layer of the wire protocol, plus task planning.
//!
//! A frame is a 4-byte big-endian payload length followed by that many
//! bytes of UTF-8 JSON; the JSON object carries a `type` field naming the
//! message. Floating-point values travel as shortest round-trip decimals
//! and reparse to the identical bit pattern, which is what lets a
//! distributed run reproduce a local one exactly.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::NetError;

/// Version token carried in the handshake. Peers with different tokens
/// refuse to talk.
pub const PROTOCOL_VERSION: &str = "1";

/// Upper bound on a frame payload, in bytes.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

/// One message of the coordinator/worker conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    /// Worker greeting; the coordinator checks the version before anything
    /// else.
    Hello { worker_id: String, version: String },
    /// Coordinator's acknowledgement of a compatible worker.
    Welcome { session_id: String },
    /// The full standardized feature matrix, sent once per worker.
    Dataset {
        n: usize,
        dim: usize,
        rows: Vec<Vec<f64>>,
    },
    /// A block of similarity rows to compute.
    Task {
        task_id: u64,
        row_start: usize,
        row_end: usize,
    },
    /// Computed rows for one task; entry `k` holds the similarities of row
    /// `row_start + k` to every later row.
    #[serde(rename = "result")]
    TaskResult { task_id: u64, rows: Vec<Vec<f64>> },
    /// No work remains; the worker exits cleanly.
    Done,
    /// Protocol-level failure report; the sender closes after this.
    Error { code: String, message: String },
}

impl Message {
    /// Wire name of the message type.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Welcome { .. } => "welcome",
            Message::Dataset { .. } => "dataset",
            Message::Task { .. } => "task",
            Message::TaskResult { .. } => "result",
            Message::Done => "done",
            Message::Error { .. } => "error",
        }
    }
}

/// Encodes one message as a length-prefixed frame.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, NetError> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME_LEN {
        return Err(NetError::FrameTooLarge(body.len()));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Writes one framed message and flushes.
pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), NetError> {
    let frame = encode_frame(msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Incremental frame decoder. Partial frames stay buffered across calls,
/// so a caller may poll a socket that has a read timeout set.
pub struct FrameReader<R> {
    inner: R,
    header: [u8; 4],
    header_filled: usize,
    body: Vec<u8>,
    /// Payload length, known once the header is complete.
    expected: Option<usize>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> FrameReader<R> {
        FrameReader {
            inner,
            header: [0; 4],
            header_filled: 0,
            body: Vec::new(),
            expected: None,
        }
    }

    /// Tries to complete one frame. `Ok(None)` means the underlying reader
    /// timed out first; the next call resumes from the buffered bytes.
    pub fn poll_message(&mut self) -> Result<Option<Message>, NetError> {
        loop {
            match self.expected {
                None => {
                    while self.header_filled < 4 {
                        match self.inner.read(&mut self.header[self.header_filled..]) {
                            Ok(0) => return Err(NetError::ConnectionClosed),
                            Ok(k) => self.header_filled += k,
                            Err(e) if is_poll_timeout(&e) => return Ok(None),
                            Err(e) => return Err(NetError::Io(e)),
                        }
                    }
                    let len = u32::from_be_bytes(self.header) as usize;
                    if len > MAX_FRAME_LEN {
                        return Err(NetError::FrameTooLarge(len));
                    }
                    self.body.clear();
                    self.body.reserve(len);
                    self.expected = Some(len);
                }
                Some(len) => {
                    while self.body.len() < len {
                        let mut chunk = [0u8; 16 * 1024];
                        let want = (len - self.body.len()).min(chunk.len());
                        match self.inner.read(&mut chunk[..want]) {
                            Ok(0) => return Err(NetError::ConnectionClosed),
                            Ok(k) => self.body.extend_from_slice(&chunk[..k]),
                            Err(e) if is_poll_timeout(&e) => return Ok(None),
                            Err(e) => return Err(NetError::Io(e)),
                        }
                    }
                    let msg = serde_json::from_slice(&self.body)?;
                    self.header_filled = 0;
                    self.body.clear();
                    self.expected = None;
                    return Ok(Some(msg));
                }
            }
        }
    }

    /// Blocks until a whole frame arrives. Use on readers without a
    /// timeout.
    pub fn read_message(&mut self) -> Result<Message, NetError> {
        loop {
            if let Some(msg) = self.poll_message()? {
                return Ok(msg);
            }
        }
    }
}

fn is_poll_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
    )
}

/// A contiguous block of similarity rows for one worker to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskDescriptor {
    pub task_id: u64,
    pub row_start: usize,
    pub row_end: usize,
}

/// Splits `[0, n)` into contiguous tasks of `ceil(n / (4 * worker_count))`
/// rows (floored at two rows per task; the final task takes whatever
/// remains), with ids ascending from 0.
pub fn plan_tasks(n: usize, worker_count: usize) -> Vec<TaskDescriptor> {
    assert!(n >= 2, "need at least two rows to plan");
    assert!(worker_count >= 1, "need at least one worker to plan");
    let chunk = n.div_ceil(4 * worker_count).max(2);
    let mut tasks = Vec::with_capacity(n.div_ceil(chunk));
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        tasks.push(TaskDescriptor {
            task_id: tasks.len() as u64,
            row_start: start,
            row_end: end,
        });
        start = end;
    }
    tasks
}
