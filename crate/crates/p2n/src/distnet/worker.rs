//! Worker side: connect, hold the dataset, answer row tasks until the
//! coordinator says stop.

use std::net::{TcpStream, ToSocketAddrs};

use crate::features::FeatureMatrix;
use crate::metrics::similarity_rows;

use super::protocol::{write_message, FrameReader, Message, PROTOCOL_VERSION};
use super::NetError;

/// Runs one worker loop against the coordinator at `endpoint`, returning
/// once the coordinator sends `done`.
pub fn serve_worker<A: ToSocketAddrs>(endpoint: A) -> Result<(), NetError> {
    let stream = TcpStream::connect(endpoint)?;
    let _ = stream.set_nodelay(true);
    let mut writer = stream.try_clone()?;
    let mut reader = FrameReader::new(stream);

    write_message(
        &mut writer,
        &Message::Hello {
            worker_id: format!("pid-{}", std::process::id()),
            version: PROTOCOL_VERSION.to_string(),
        },
    )?;
    match reader.read_message()? {
        Message::Welcome { .. } => {}
        Message::Error { code, message } => return Err(NetError::Remote { code, message }),
        other => {
            return Err(NetError::UnexpectedMessage {
                expected: "welcome",
                got: other.kind(),
            })
        }
    }

    let matrix = match reader.read_message()? {
        Message::Dataset { n, dim, rows } => {
            if rows.len() != n {
                return Err(NetError::BadDataset(format!(
                    "expected {n} rows, got {}",
                    rows.len()
                )));
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                return Err(NetError::BadDataset(format!(
                    "expected {dim} columns, got a row with {}",
                    bad.len()
                )));
            }
            FeatureMatrix::from_standardized_rows(rows)
        }
        Message::Error { code, message } => return Err(NetError::Remote { code, message }),
        other => {
            return Err(NetError::UnexpectedMessage {
                expected: "dataset",
                got: other.kind(),
            })
        }
    };

    loop {
        match reader.read_message()? {
            Message::Task {
                task_id,
                row_start,
                row_end,
            } => {
                let rows = similarity_rows(&matrix, row_start, row_end)?;
                write_message(&mut writer, &Message::TaskResult { task_id, rows })?;
            }
            Message::Done => return Ok(()),
            Message::Error { code, message } => return Err(NetError::Remote { code, message }),
            other => {
                return Err(NetError::UnexpectedMessage {
                    expected: "task or done",
                    got: other.kind(),
                })
            }
        }
    }
}
