//! Append-only event log. Every metric is derived from this stream.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{RequestId, Seconds, TierKind, UnitId};

pub const LOG_FORMAT: &str = "sdpbench-events";
pub const LOG_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    /// Topic buffer full at publish time.
    Broker,
    /// Function gateway refused the invocation.
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    RequestArrived,
    FunctionStart,
    FunctionEnd,
    /// `DU_at` for the storage unit named in `subject`.
    StorageArrive,
    /// `DU_dt` for the storage unit named in `subject`.
    StorageDepart,
    /// Logged when the payload arrives; the transfer occupied `[started_at, timestamp]`.
    NetTransfer { bytes: u64, from: TierKind, to: TierKind, started_at: Seconds },
    DiskRead { bytes: u64, tier: TierKind },
    DiskWrite { bytes: u64, tier: TierKind },
    UnitDropped { cause: DropCause },
    RequestCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub seq: u64,
    pub timestamp: Seconds,
    pub kind: EventKind,
    pub request_id: RequestId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_id: Option<UnitId>,
    /// Function or storage-unit name; empty for request-level events.
    #[serde(default)]
    pub subject: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: String,
}

/// Single-writer, append-only log ordered by `(timestamp, seq)`.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    events: Vec<SimEvent>,
    last_per_request: HashMap<RequestId, Seconds>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event, assigning the next sequence number. Rejects events
    /// that would go back in time for their own request.
    pub fn append(
        &mut self,
        timestamp: Seconds,
        kind: EventKind,
        request_id: RequestId,
        unit_id: Option<UnitId>,
        subject: impl Into<String>,
    ) -> Result<u64> {
        if let Some(&last) = self.last_per_request.get(&request_id) {
            if timestamp < last {
                return Err(SimError::Causality { request: request_id, at: timestamp, last });
            }
        }
        self.last_per_request.insert(request_id, timestamp);
        let seq = self.events.len() as u64;
        self.events.push(SimEvent { seq, timestamp, kind, request_id, unit_id, subject: subject.into() });
        Ok(seq)
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn for_request(&self, request: RequestId) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.request_id == request)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header { format: LOG_FORMAT.into(), version: LOG_VERSION.into() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut log = EventLog::new();
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, line)) => {
                let header: Header =
                    serde_json::from_str(&line?).map_err(|e| SimError::LogFormat { line: 1, msg: e.to_string() })?;
                if header.format != LOG_FORMAT || header.version != LOG_VERSION {
                    return Err(SimError::LogFormat {
                        line: 1,
                        msg: format!("unsupported header {}/{}", header.format, header.version),
                    });
                }
            }
            None => return Err(SimError::LogFormat { line: 1, msg: "missing header".into() }),
        }
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: SimEvent =
                serde_json::from_str(&line).map_err(|err| SimError::LogFormat { line: idx + 1, msg: err.to_string() })?;
            log.append(e.timestamp, e.kind, e.request_id, e.unit_id, e.subject)?;
        }
        Ok(log)
    }
}
