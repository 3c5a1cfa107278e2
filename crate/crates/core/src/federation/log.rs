use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client to coordinator.
    Up,
    /// Coordinator to client.
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub dir: Direction,
    pub round: u64,
    /// Frame size including the length prefix.
    pub bytes: usize,
    /// JSON payload text.
    pub msg: String,
}

impl LogRecord {
    pub fn parse(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::from_str(&self.msg)
    }
}

#[derive(Deserialize)]
struct Line {
    dir: Direction,
    round: u64,
    bytes: usize,
    msg: Box<serde_json::value::RawValue>,
}

/// Append-only record of every frame the coordinator sent or received.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    records: Vec<LogRecord>,
}

impl RoundLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_frame(&mut self, dir: Direction, round: u64, frame: &[u8]) {
        self.records.push(LogRecord {
            dir,
            round,
            bytes: frame.len(),
            msg: String::from_utf8_lossy(&frame[HEADER_LEN.min(frame.len())..]).into_owned(),
        });
    }

    /// Appends a record verbatim; used by tests that craft logs by hand.
    pub fn push_record(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let dir = match r.dir {
                Direction::Up => "up",
                Direction::Down => "down",
            };
            writeln!(out, r#"{{"dir":"{dir}","round":{},"bytes":{},"msg":{}}}"#, r.round, r.bytes, r.msg)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1))
            })?;
            records.push(LogRecord {
                dir: parsed.dir,
                round: parsed.round,
                bytes: parsed.bytes,
                msg: parsed.msg.get().to_owned(),
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{encode, Message};

    #[test]
    fn jsonl_round_trip() {
        let mut log = RoundLog::new();
        let frame = encode(&Message::Stop { reason: "converged".into() });
        log.push_frame(Direction::Down, 4, &frame);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.trim_end(),
            format!(r#"{{"dir":"down","round":4,"bytes":{},"msg":{{"type":"stop","reason":"converged"}}}}"#, frame.len())
        );
        let back = RoundLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, log);
    }
}
