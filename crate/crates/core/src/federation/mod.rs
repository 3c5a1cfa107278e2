//! Coordinator/client message protocol, transports and the privacy audit.
//!
//! Every message travels as one frame: a 4-byte big-endian payload length
//! followed by a JSON object tagged by `"type"`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::client::ClientParams;
use crate::dual::{Batch, ClientReport, ReportValues, Selection};

mod audit;
mod channel;
mod log;
mod pool;
mod tcp;

pub use audit::{privacy_audit, AuditFailure, AuditReport, BYTES_OVERHEAD, BYTES_PER_ENTRY, UPSTREAM_FIELDS};
pub use channel::{solve_in_process, spawn_channel_clients, ChannelClients};
pub use log::{Direction, LogRecord, RoundLog};
pub use pool::{run_client, ClientData, ClientLink, ClientSummary, FrameSink, Inbound, RemotePool};
pub use tcp::{accept_clients, connect_client, serve_tcp, solve_tcp, TcpLink};

/// Bytes in the length prefix.
pub const HEADER_LEN: usize = 4;

/// Largest accepted payload.
pub const MAX_FRAME: usize = 64 << 20;

/// Default straggler deadline.
pub const DEFAULT_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    Incomplete { needed: usize, available: usize },
    #[error("malformed frame at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("client {client} timed out in round {round}")]
    Timeout { client: usize, round: u64 },
    #[error("client {client} disconnected")]
    Disconnected { client: usize },
    #[error("coordinator closed the connection")]
    CoordinatorClosed,
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Message {
    /// Upstream: the requested client id. Downstream: `K` and the step
    /// parameters clients need.
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_id: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<ClientParams>,
    },
    Report {
        round: u64,
        client_id: usize,
        t: ReportValues,
    },
    Broadcast {
        round: u64,
        /// Selection flags as 0/1.
        gamma: Vec<u8>,
        /// Set on the last broadcast of a run; clients take no step.
        theta0_done: bool,
        /// Batch of the next round when it is not the full candidate set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch: Option<Vec<usize>>,
    },
    Stop {
        reason: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Report { .. } => "report",
            Message::Broadcast { .. } => "broadcast",
            Message::Stop { .. } => "stop",
        }
    }

    pub fn round(&self) -> Option<u64> {
        match self {
            Message::Report { round, .. } | Message::Broadcast { round, .. } => Some(*round),
            _ => None,
        }
    }

    pub fn report(report: &ClientReport) -> Self {
        Message::Report {
            round: report.round,
            client_id: report.client_id,
            t: report.t.clone(),
        }
    }

    pub fn broadcast(round: u64, gamma: &Selection, next_batch: Option<&Batch>) -> Self {
        Message::Broadcast {
            round,
            gamma: gamma.flags().iter().map(|&g| g as u8).collect(),
            theta0_done: next_batch.is_none(),
            batch: next_batch.and_then(|b| b.indices().map(<[usize]>::to_vec)),
        }
    }
}

/// Frame bytes for `msg`.
pub fn encode(msg: &Message) -> Vec<u8> {
    let payload = serde_json::to_vec(msg).expect("messages serialize");
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

/// Payload length announced by a complete header.
fn payload_len(bytes: &[u8]) -> Result<usize, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Incomplete {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..HEADER_LEN].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::TooLarge(len));
    }
    Ok(len)
}

/// Parses exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let len = payload_len(bytes)?;
    let end = HEADER_LEN + len;
    if bytes.len() < end {
        return Err(ProtocolError::Incomplete {
            needed: end,
            available: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(ProtocolError::Malformed {
            offset: end,
            reason: "trailing bytes after frame".into(),
        });
    }
    decode_payload(&bytes[HEADER_LEN..])
}

fn decode_payload(payload: &[u8]) -> Result<Message, ProtocolError> {
    let msg: Message = serde_json::from_slice(payload).map_err(|e| {
        // payloads are single-line, so the column is the byte position
        let column = if e.line() <= 1 { e.column().saturating_sub(1) } else { 0 };
        ProtocolError::Malformed {
            offset: HEADER_LEN + column.min(payload.len()),
            reason: e.to_string(),
        }
    })?;
    if let Message::Broadcast { gamma, .. } = &msg {
        if let Some(pos) = gamma.iter().position(|&g| g > 1) {
            return Err(ProtocolError::Malformed {
                offset: HEADER_LEN,
                reason: format!("gamma[{pos}] = {} is not a bit", gamma[pos]),
            });
        }
    }
    Ok(msg)
}

/// Reads one whole frame. `Ok(None)` on a clean end of stream before the
/// first header byte.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::Incomplete {
                    needed: HEADER_LEN,
                    available: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = payload_len(&header)?;
    let mut frame = vec![0u8; HEADER_LEN + len];
    frame[..HEADER_LEN].copy_from_slice(&header);
    let mut filled = HEADER_LEN;
    while filled < frame.len() {
        match reader.read(&mut frame[filled..]) {
            Ok(0) => {
                return Err(ProtocolError::Incomplete {
                    needed: frame.len(),
                    available: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(frame))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &[u8]) -> Result<(), ProtocolError> {
    writer.write_all(frame)?;
    writer.flush()?;
    Ok(())
}
