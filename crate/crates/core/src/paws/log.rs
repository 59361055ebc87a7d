use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DeviceDescriptor, DeviceOwner, SpectrumSchedule, Timestamp, UseRecord};
use crate::spectrum::GeoPoint;

/// One durable state change. Serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Initialized { device_id: String, descriptor: DeviceDescriptor, location: GeoPoint, accuracy_m: f64, at: Timestamp },
    Registered { device_id: String, owner: DeviceOwner, location: GeoPoint, at: Timestamp },
    Granted { schedule: SpectrumSchedule, at: Timestamp },
    Used { record: UseRecord },
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("log {path}: corrupt record on line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// Where the service persists events. `append` must not return until the
/// event is durable.
pub trait EventSink: Send {
    fn append(&mut self, event: &LogEvent) -> io::Result<()>;
}

/// Volatile sink for tests and dry runs.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub events: Vec<LogEvent>,
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Append-only JSON-lines file, synced after every record.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub events: Vec<LogEvent>,
    /// Bytes covered by complete, parsable records.
    pub valid_len: u64,
    /// An unterminated trailing fragment was found past `valid_len`.
    pub torn_tail: bool,
}

/// Reads every complete record. A final fragment without a newline is a
/// write interrupted by a crash and is skipped; a malformed complete line
/// is corruption.
pub fn replay(path: &Path) -> Result<Replay, LogError> {
    let io_err = |source| LogError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(io_err)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(e)),
    }
    let mut events = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        line_no += 1;
        let line = &bytes[offset..offset + nl];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let ev = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
            events.push(ev);
        }
        offset += nl + 1;
    }
    Ok(Replay { events, valid_len: offset as u64, torn_tail: offset < bytes.len() })
}

impl RecordLog {
    /// Opens (creating if needed) the log at `path`, returning the events
    /// already in it. A torn trailing fragment is cut off so later appends
    /// start on a clean line.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<LogEvent>), LogError> {
        let path = path.as_ref().to_path_buf();
        let replayed = replay(&path)?;
        let io_err = |source| LogError::Io { path: path.clone(), source };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        if replayed.torn_tail {
            file.set_len(replayed.valid_len).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        Ok((Self { path, file }, replayed.events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for RecordLog {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}
